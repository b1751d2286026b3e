#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "flowinfer/amortizers.hpp"
#include "flowinfer/generative.hpp"

namespace flowinfer {

// Draws n_draws posterior samples (raw parameter space, [n_draws x d]) for
// one observed set. Lets every diagnostic run against either a trained
// amortizer or an analytic reference sampler.
using PosteriorSampler =
    std::function<Tensor(const Tensor& observed_set, const Tensor& context, int n_draws, Rng& rng)>;

PosteriorSampler amortized_sampler(const PosteriorAmortizer& am);
// Exact conjugate-Gaussian posterior; reference sampler for calibration tests.
PosteriorSampler analytic_conjugate_sampler();

// ---------------------------------------------------------------------------
// Parameter recovery

struct RecoveryReport {
    // nullopt when the true parameters (or the estimates) have zero variance
    std::vector<std::optional<double>> correlation;  // per parameter
    std::vector<double> rmse;                        // per parameter
    Tensor true_params;                              // [n_sims x d]
    Tensor posterior_mean;                           // [n_sims x d]
    Tensor posterior_sd;                             // [n_sims x d]
};

RecoveryReport recovery(const PosteriorSampler& sampler, const GenerativeModel& model, int n_sims,
                        int n_draws, Rng& rng);
RecoveryReport recovery(const PosteriorAmortizer& am, const GenerativeModel& model, int n_sims,
                        int n_draws, Rng& rng);

// ---------------------------------------------------------------------------
// Simulation-based calibration

struct UniformityTest {
    double chi2 = 0.0;
    double p = 1.0;
};

struct SbcResult {
    std::vector<std::vector<int>> ranks;  // [param][sim], each in [0, n_draws]
    int n_draws = 0;
    int n_bins = 0;
    std::vector<UniformityTest> tests;  // per parameter
    int skipped = 0;                    // simulation failures
};

SbcResult sbc_ranks(const PosteriorSampler& sampler, const GenerativeModel& model, int n_sims,
                    int n_draws, Rng& rng, int n_bins = 10);
SbcResult sbc_ranks(const PosteriorAmortizer& am, const GenerativeModel& model, int n_sims,
                    int n_draws, Rng& rng, int n_bins = 10);

// chi^2 test of uniformity over {0..n_draws}, n_bins bins of near-equal width
UniformityTest uniformity_test(const std::vector<int>& ranks, int n_draws, int n_bins);

// Regularized upper incomplete gamma Q(a, x) (series + continued fraction)
double regularized_gamma_q(double a, double x);
// Survival function of the chi^2 distribution: P(X > chi2) with dof degrees
double chi2_sf(double chi2, int dof);

// ---------------------------------------------------------------------------
// Posterior contraction

// 1 - mean(posterior variance)/prior variance, per parameter; prior variance
// is estimated from the n_sims prior draws.
std::vector<double> posterior_contraction(const PosteriorSampler& sampler,
                                          const GenerativeModel& model, int n_sims, int n_draws,
                                          Rng& rng);
std::vector<double> posterior_contraction(const PosteriorAmortizer& am,
                                          const GenerativeModel& model, int n_sims, int n_draws,
                                          Rng& rng);

// ---------------------------------------------------------------------------
// Misspecification detection

// Unbiased MMD^2 estimate between rows of x [n x e] and y [m x e] under a
// Gaussian kernel k(a,b) = exp(-|a-b|^2 / (2 sigma^2)). May be slightly
// negative; reported as-is.
double mmd2_unbiased(const Tensor& x, const Tensor& y, double bandwidth);

// p = (1 + #{null >= observed}) / (M + 1)
double permutation_p_value(const std::vector<double>& null_values, double observed);

struct MisspecResult {
    double observed_mmd2 = 0.0;
    std::vector<double> null_mmd2;
    double p = 1.0;
    double bandwidth = 0.0;
};

// Embeds the observed sets and n_ref freshly simulated sets with the summary
// network, compares the clouds with MMD^2, and calibrates against n_null
// simulated-vs-simulated pairs. Bandwidth: median pairwise distance of the
// reference embeddings, floored at 1e-6.
MisspecResult misspecification_test(const SummaryNetwork& net, const Configurator& config,
                                    const GenerativeModel& model,
                                    const std::vector<Tensor>& observed_sets, int n_null, int n_ref,
                                    Rng& rng);
MisspecResult misspecification_test(const PosteriorAmortizer& am, const GenerativeModel& model,
                                    const std::vector<Tensor>& observed_sets, int n_null, int n_ref,
                                    Rng& rng);

// ---------------------------------------------------------------------------
// CSV export (%.8e floats, header row mandatory)

void write_recovery_csv(const RecoveryReport& report, std::ostream& os);
void write_sbc_ranks_csv(const SbcResult& result, std::ostream& os);
void write_sbc_test_csv(const SbcResult& result, std::ostream& os);
void write_misspec_csv(const MisspecResult& result, std::ostream& os);

}  // namespace flowinfer
