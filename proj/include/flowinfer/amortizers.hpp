#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flowinfer/generative.hpp"
#include "flowinfer/networks.hpp"
#include "flowinfer/training.hpp"

namespace flowinfer {

struct SummaryConfig {
    int embedding_dim = 8;
    std::vector<int> phi_hidden = {64, 64};
    std::vector<int> rho_hidden = {64};
    Pooling pooling = Pooling::Mean;
    Activation activation = Activation::Tanh;
};

struct PosteriorConfig {
    SummaryConfig summary;
    FlowConfig flow;
};

struct LikelihoodConfig {
    FlowConfig flow;
};

struct ComparisonConfig {
    SummaryConfig summary;
    std::vector<int> classifier_hidden = {64, 64};
    int n_models = 2;
};

// Observed sets -> summary embedding -> conditional flow over z-scored
// parameters. Draws come back in raw parameter space.
class PosteriorAmortizer final : public Trainable {
public:
    std::string model_name;
    SummaryNetwork summary;
    ConditionalFlow flow;
    Configurator configurator;

    PosteriorAmortizer(const GenerativeModel& model, const PosteriorConfig& cfg, Rng& rng);

    void prepare(const GenerativeModel& model, int calibration_size, Rng& rng) override;
    bool ready() const override { return configurator.fitted; }
    std::vector<Tensor*> parameters() override;
    double loss_and_gradients(const SimulationBatch& batch, std::vector<Tensor>& grads) override;
    double loss_value(const SimulationBatch& batch) override;
    std::vector<std::pair<std::string, Tensor>> state_tensors() const override;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& state) override;

    // [B x (embedding + direct)] flow conditions for a configured batch
    Tensor conditions(const ConfiguredBatch& batch) const;
    // single-dataset condition row [1 x cond_dim]; observed_set is [N x obs_dim]
    Tensor condition_row(const Tensor& observed_set, const Tensor& context) const;
};

// -mean_b log q(theta_b | cond_b); non-finite -> TrainingError
double posterior_loss(const PosteriorAmortizer& am, const ConfiguredBatch& batch);

// n_draws posterior draws for one observed set, in raw parameter space
Tensor posterior_sample(const PosteriorAmortizer& am, const Tensor& observed_set,
                        const Tensor& context, int n_draws, Rng& rng);

// log posterior density at a raw-space point; includes the z-scoring
// Jacobian -sum log(param_std)
double posterior_log_prob(const PosteriorAmortizer& am, const Tensor& observed_set,
                          const Tensor& context, const Tensor& theta_raw);

// Parameters -> conditional flow over single z-scored observations; a set's
// log likelihood is the sum of its per-observation log densities. The
// condition is [theta_z || context]; the set-size encoding is excluded so a
// single observation's density is independent of the set it came from.
class LikelihoodAmortizer final : public Trainable {
public:
    std::string model_name;
    ConditionalFlow flow;
    Configurator configurator;

    LikelihoodAmortizer(const GenerativeModel& model, const LikelihoodConfig& cfg, Rng& rng);

    void prepare(const GenerativeModel& model, int calibration_size, Rng& rng) override;
    bool ready() const override { return configurator.fitted; }
    std::vector<Tensor*> parameters() override;
    double loss_and_gradients(const SimulationBatch& batch, std::vector<Tensor>& grads) override;
    double loss_value(const SimulationBatch& batch) override;
    std::vector<std::pair<std::string, Tensor>> state_tensors() const override;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& state) override;

    // [(B*N) x cond_dim] rows aligned with row-major flattened observations
    Tensor conditions(const ConfiguredBatch& batch) const;
    Tensor condition_row(const Tensor& theta_raw, const Tensor& context) const;

    // Observation dimension of the model; the flow target is padded with one
    // auxiliary standard-normal dimension when this is 1.
    int obs_dim() const { return obs_dim_; }

private:
    int obs_dim_ = 0;
};

// -mean over all B*N observation rows of log q(x | theta)
double likelihood_loss(const LikelihoodAmortizer& am, const ConfiguredBatch& batch);

// sum_i log q(x_i | theta) in raw data space (per-observation Jacobian applied)
double likelihood_log_prob(const LikelihoodAmortizer& am, const Tensor& observed_set,
                           const Tensor& context, const Tensor& theta_raw);

// n emulated observations [n x obs_dim] in raw data space
Tensor emulate(const LikelihoodAmortizer& am, const Tensor& theta_raw, const Tensor& context,
               int n, Rng& rng);

// Observed sets -> summary embedding -> classifier over candidate models.
class ComparisonAmortizer final : public Trainable {
public:
    std::string model_name;
    int n_models = 2;
    SummaryNetwork summary;
    Mlp classifier;
    Configurator configurator;

    ComparisonAmortizer(const GenerativeModel& model, const ComparisonConfig& cfg, Rng& rng);

    void prepare(const GenerativeModel& model, int calibration_size, Rng& rng) override;
    bool ready() const override { return configurator.fitted; }
    std::vector<Tensor*> parameters() override;
    double loss_and_gradients(const SimulationBatch& batch, std::vector<Tensor>& grads) override;
    double loss_value(const SimulationBatch& batch) override;
    std::vector<std::pair<std::string, Tensor>> state_tensors() const override;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& state) override;

    Tensor logits(const ConfiguredBatch& batch) const;  // [B x M]
};

// Mean softmax cross-entropy via max-subtracted log-sum-exp.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

double comparison_loss(const ComparisonAmortizer& am, const ConfiguredBatch& batch,
                       const std::vector<int>& labels);

// Posterior model probabilities for one observed set; sums to 1.
Tensor predict_pmp(const ComparisonAmortizer& am, const Tensor& observed_set,
                   const Tensor& context);

// log p(x) = log lik + log prior - log posterior
inline double evidence_from_parts(double log_lik, double log_prior, double log_post) {
    return log_lik + log_prior - log_post;
}

// Evidence identity evaluated at theta_raw.
double log_evidence_at(const PosteriorAmortizer& post, const LikelihoodAmortizer& lik,
                       const GenerativeModel& model, const Tensor& observed_set,
                       const Tensor& context, const Tensor& theta_raw);

// Evidence identity at the mean of 256 posterior draws.
double log_evidence(const PosteriorAmortizer& post, const LikelihoodAmortizer& lik,
                    const GenerativeModel& model, const Tensor& observed_set,
                    const Tensor& context, Rng& rng);

// Expected log predictive density of held-out observations: likelihood
// log-prob averaged over posterior draws.
double log_predictive(const PosteriorAmortizer& post, const LikelihoodAmortizer& lik,
                      const Tensor& observed_set, const Tensor& held_out,
                      const Tensor& context, int n_draws, Rng& rng);

}  // namespace flowinfer
