#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "flowinfer/rng.hpp"
#include "flowinfer/tensor.hpp"

namespace flowinfer {

// Paired draws from a generative model. All rows share one set size.
struct SimulationBatch {
    Tensor params;   // [B x d]
    Tensor data;     // [B x N x obs_dim]
    Tensor context;  // [B x k]; k may be 0
    int set_size = 0;
};

// Prior + simulator (+ optional context variates). Simulators must be pure
// functions of (theta, context, rng); batches may then be generated on
// several threads with split streams and merged by row index.
struct GenerativeModel {
    std::string name;
    int param_dim = 0;
    int obs_dim = 0;
    int context_dim = 0;
    int min_set_size = 1;
    int max_set_size = 1;
    bool encode_set_size = false;  // expose sqrt(N)/10 as a direct condition
    bool balanced_labels = false;  // params are model labels dealt round-robin

    std::vector<std::string> param_labels;

    std::function<Tensor(Rng&)> prior_sample;                  // -> [d]
    std::function<double(const Tensor&)> prior_log_prob;       // [d] -> log p(theta)
    std::function<Tensor(const Tensor& /*theta [d]*/, const Tensor& /*context [k]*/,
                         int /*set_size*/, Rng&)>
        simulate;                                              // -> [N x obs_dim]
    std::function<Tensor(Rng&)> context_sample;                // -> [k]
};

GenerativeModel builtin_model(const std::string& name);
GenerativeModel with_set_size(GenerativeModel model, int n);

SimulationBatch sample_batch(const GenerativeModel& model, int batch_size, Rng& rng);

// header: param_0..,data_<i>_<j>..,context_0..; one row per draw, %.8e floats
void export_batch_csv(const SimulationBatch& batch, std::ostream& os);

// Analytic facts about the conjugate Gaussian test bed (theta = mu in R^2,
// prior N(0,I), x_i ~ N(mu, I)): posterior N(sum(x)/(N+1), I/(N+1)) and the
// closed-form marginal with x per dim ~ N(0, I_N + 11^T).
struct ConjugatePosterior {
    Tensor mean;      // [2]
    double variance;  // shared per dim
};
ConjugatePosterior conjugate_gaussian_posterior(const Tensor& data);
double conjugate_gaussian_log_marginal(const Tensor& data);

// Frozen z-scoring statistics plus the routing of inputs into summary vs
// direct conditions.
struct Configurator {
    bool fitted = false;
    Tensor param_mean, param_std;  // [d]
    Tensor data_mean, data_std;    // [obs_dim]
    int context_dim = 0;
    bool encode_set_size = false;
};

struct ConfiguredBatch {
    Tensor targets;             // [B x d], z-scored params
    Tensor summary_conditions;  // [B x N x obs_dim], z-scored data
    Tensor direct_conditions;   // [B x (k + 1 if set size encoded)]
    int set_size = 0;
};

// Per-dimension mean/std over every provided row (population variance,
// std floored at 1e-6).
Configurator fit_configurator(const std::vector<SimulationBatch>& batches, bool encode_set_size);

ConfiguredBatch configure(const Configurator& cfg, const SimulationBatch& batch);
Tensor configure_params(const Configurator& cfg, const Tensor& raw);    // [n x d]
Tensor deconfigure_params(const Configurator& cfg, const Tensor& z);    // [n x d]
Tensor configure_data(const Configurator& cfg, const Tensor& set_x);    // [B x N x obs]
Tensor deconfigure_data(const Configurator& cfg, const Tensor& z);      // [n x obs]
// direct-condition row for one dataset: [1 x (k + encoded set size)]
Tensor direct_condition_row(const Configurator& cfg, const Tensor& context, int set_size);

}  // namespace flowinfer
