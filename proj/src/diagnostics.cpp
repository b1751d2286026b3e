#include "flowinfer/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "flowinfer/errors.hpp"

namespace flowinfer {

namespace {

// One simulated dataset, unpacked from a batch of size 1.
struct Draw {
    Tensor theta;    // [d]
    Tensor set;      // [N x obs]
    Tensor context;  // [k]
};

Draw draw_one(const GenerativeModel& model, Rng& rng) {
    const SimulationBatch batch = sample_batch(model, 1, rng);
    Draw d;
    d.theta = Tensor({model.param_dim},
                     std::vector<float>(batch.params.data.begin(), batch.params.data.end()));
    d.set = Tensor({batch.data.shape[1], batch.data.shape[2]},
                   std::vector<float>(batch.data.data.begin(), batch.data.data.end()));
    const int k = batch.context.rank() >= 2 ? batch.context.shape[1] : 0;
    d.context =
        Tensor({k}, std::vector<float>(batch.context.data.begin(), batch.context.data.end()));
    return d;
}

double population_variance(const float* v, int n, int stride) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += v[static_cast<std::size_t>(i) * stride];
    mean /= n;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double c = v[static_cast<std::size_t>(i) * stride] - mean;
        ss += c * c;
    }
    return ss / n;
}

void print_float(std::ostream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.8e", v);
    os << buf;
}

}  // namespace

PosteriorSampler amortized_sampler(const PosteriorAmortizer& am) {
    return [&am](const Tensor& observed_set, const Tensor& context, int n_draws, Rng& rng) {
        return posterior_sample(am, observed_set, context, n_draws, rng);
    };
}

PosteriorSampler analytic_conjugate_sampler() {
    return [](const Tensor& observed_set, const Tensor& /*context*/, int n_draws, Rng& rng) {
        const ConjugatePosterior post = conjugate_gaussian_posterior(observed_set);
        const double sd = std::sqrt(post.variance);
        const int d = post.mean.shape[0];
        Tensor draws = Tensor::zeros({n_draws, d});
        for (int i = 0; i < n_draws; ++i)
            for (int j = 0; j < d; ++j)
                draws.at(i, j) = static_cast<float>(post.mean.at(j) + sd * rng.normal());
        return draws;
    };
}

// ---------------------------------------------------------------------------
// Parameter recovery

RecoveryReport recovery(const PosteriorSampler& sampler, const GenerativeModel& model, int n_sims,
                        int n_draws, Rng& rng) {
    if (n_sims < 2) throw DomainError("recovery needs n_sims >= 2");
    if (n_draws < 1) throw DomainError("recovery needs n_draws >= 1");
    const int d = model.param_dim;

    RecoveryReport report;
    report.true_params = Tensor::zeros({n_sims, d});
    report.posterior_mean = Tensor::zeros({n_sims, d});
    report.posterior_sd = Tensor::zeros({n_sims, d});

    for (int i = 0; i < n_sims; ++i) {
        const Draw dr = draw_one(model, rng);
        const Tensor draws = sampler(dr.set, dr.context, n_draws, rng);
        for (int j = 0; j < d; ++j) {
            double mean = 0.0;
            for (int k = 0; k < n_draws; ++k) mean += draws.at(k, j);
            mean /= n_draws;
            double ss = 0.0;
            for (int k = 0; k < n_draws; ++k) {
                const double c = draws.at(k, j) - mean;
                ss += c * c;
            }
            report.true_params.at(i, j) = dr.theta.at(j);
            report.posterior_mean.at(i, j) = static_cast<float>(mean);
            report.posterior_sd.at(i, j) = static_cast<float>(std::sqrt(ss / n_draws));
        }
    }

    for (int j = 0; j < d; ++j) {
        double mt = 0.0, mp = 0.0;
        for (int i = 0; i < n_sims; ++i) {
            mt += report.true_params.at(i, j);
            mp += report.posterior_mean.at(i, j);
        }
        mt /= n_sims;
        mp /= n_sims;
        double stt = 0.0, spp = 0.0, stp = 0.0, se = 0.0;
        for (int i = 0; i < n_sims; ++i) {
            const double ct = report.true_params.at(i, j) - mt;
            const double cp = report.posterior_mean.at(i, j) - mp;
            stt += ct * ct;
            spp += cp * cp;
            stp += ct * cp;
            const double err =
                static_cast<double>(report.posterior_mean.at(i, j)) - report.true_params.at(i, j);
            se += err * err;
        }
        if (stt <= 0.0 || spp <= 0.0) {
            report.correlation.push_back(std::nullopt);
        } else {
            const double r = stp / std::sqrt(stt * spp);
            report.correlation.push_back(std::clamp(r, -1.0, 1.0));
        }
        report.rmse.push_back(std::sqrt(se / n_sims));
    }
    return report;
}

RecoveryReport recovery(const PosteriorAmortizer& am, const GenerativeModel& model, int n_sims,
                        int n_draws, Rng& rng) {
    if (!am.ready()) throw ContractError("recovery needs a trained amortizer");
    return recovery(amortized_sampler(am), model, n_sims, n_draws, rng);
}

// ---------------------------------------------------------------------------
// Simulation-based calibration

SbcResult sbc_ranks(const PosteriorSampler& sampler, const GenerativeModel& model, int n_sims,
                    int n_draws, Rng& rng, int n_bins) {
    if (n_draws < 1) throw DomainError("sbc_ranks needs n_draws >= 1");
    if (n_sims < n_bins) throw DomainError("sbc_ranks needs n_sims >= n_bins");
    const int d = model.param_dim;

    SbcResult result;
    result.n_draws = n_draws;
    result.n_bins = n_bins;
    result.ranks.assign(d, {});

    int done = 0;
    const int max_attempts = n_sims + std::max(10, n_sims);
    for (int attempt = 0; done < n_sims; ++attempt) {
        if (attempt >= max_attempts)
            throw SimulationError("sbc_ranks: " + std::to_string(result.skipped) +
                                  " simulation failures in " + std::to_string(attempt) +
                                  " attempts");
        Draw dr;
        try {
            dr = draw_one(model, rng);
        } catch (const SimulationError&) {
            ++result.skipped;
            continue;
        }
        const Tensor draws = sampler(dr.set, dr.context, n_draws, rng);
        for (int j = 0; j < d; ++j) {
            int rank = 0;
            for (int k = 0; k < n_draws; ++k)
                if (draws.at(k, j) < dr.theta.at(j)) ++rank;
            result.ranks[j].push_back(rank);
        }
        ++done;
    }

    for (int j = 0; j < d; ++j)
        result.tests.push_back(uniformity_test(result.ranks[j], n_draws, n_bins));
    return result;
}

SbcResult sbc_ranks(const PosteriorAmortizer& am, const GenerativeModel& model, int n_sims,
                    int n_draws, Rng& rng, int n_bins) {
    if (!am.ready()) throw ContractError("sbc_ranks needs a trained amortizer");
    return sbc_ranks(amortized_sampler(am), model, n_sims, n_draws, rng, n_bins);
}

double regularized_gamma_q(double a, double x) {
    if (!(a > 0.0) || x < 0.0) throw DomainError("regularized_gamma_q needs a > 0 and x >= 0");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) {
        // Q = 1 - P; P by its power series
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 1000; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    // modified Lentz continued fraction for Q
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double dd = 1.0 / b;
    double h = dd;
    for (int i = 1; i <= 1000; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        dd = an * dd + b;
        if (std::abs(dd) < tiny) dd = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        dd = 1.0 / dd;
        const double del = dd * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double chi2_sf(double chi2, int dof) {
    if (dof < 1) throw DomainError("chi2_sf needs dof >= 1");
    if (chi2 < 0.0) throw DomainError("chi2_sf needs chi2 >= 0");
    return regularized_gamma_q(0.5 * dof, 0.5 * chi2);
}

UniformityTest uniformity_test(const std::vector<int>& ranks, int n_draws, int n_bins) {
    if (n_bins < 2) throw DomainError("uniformity_test needs at least 2 bins");
    if (ranks.empty()) throw DomainError("uniformity_test needs at least one rank");
    // bin edges floor(b * (K+1) / B) partition {0..K} as evenly as possible
    const long long values = static_cast<long long>(n_draws) + 1;
    std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);
    for (const int r : ranks) {
        if (r < 0 || r > n_draws)
            throw DomainError("rank " + std::to_string(r) + " outside [0, " +
                              std::to_string(n_draws) + "]");
        const int b = static_cast<int>((static_cast<long long>(r) * n_bins) / values);
        ++counts[static_cast<std::size_t>(b)];
    }
    const double expected = static_cast<double>(ranks.size()) / n_bins;
    double chi2 = 0.0;
    for (const int c : counts) {
        const double dev = c - expected;
        chi2 += dev * dev / expected;
    }
    UniformityTest t;
    t.chi2 = chi2;
    t.p = chi2_sf(chi2, n_bins - 1);
    return t;
}

// ---------------------------------------------------------------------------
// Posterior contraction

std::vector<double> posterior_contraction(const PosteriorSampler& sampler,
                                          const GenerativeModel& model, int n_sims, int n_draws,
                                          Rng& rng) {
    if (n_sims < 2) throw DomainError("posterior_contraction needs n_sims >= 2");
    if (n_draws < 2) throw DomainError("posterior_contraction needs n_draws >= 2");
    const int d = model.param_dim;

    Tensor priors = Tensor::zeros({n_sims, d});
    std::vector<double> mean_post_var(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n_sims; ++i) {
        const Draw dr = draw_one(model, rng);
        const Tensor draws = sampler(dr.set, dr.context, n_draws, rng);
        for (int j = 0; j < d; ++j) {
            priors.at(i, j) = dr.theta.at(j);
            mean_post_var[static_cast<std::size_t>(j)] +=
                population_variance(draws.data.data() + j, n_draws, d);
        }
    }

    std::vector<double> contraction(static_cast<std::size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
        const double prior_var = population_variance(priors.data.data() + j, n_sims, d);
        if (prior_var <= 0.0)
            throw DomainError("posterior_contraction needs positive prior variance");
        contraction[static_cast<std::size_t>(j)] =
            1.0 - (mean_post_var[static_cast<std::size_t>(j)] / n_sims) / prior_var;
    }
    return contraction;
}

std::vector<double> posterior_contraction(const PosteriorAmortizer& am,
                                          const GenerativeModel& model, int n_sims, int n_draws,
                                          Rng& rng) {
    if (!am.ready()) throw ContractError("posterior_contraction needs a trained amortizer");
    return posterior_contraction(amortized_sampler(am), model, n_sims, n_draws, rng);
}

// ---------------------------------------------------------------------------
// Misspecification detection

double mmd2_unbiased(const Tensor& x, const Tensor& y, double bandwidth) {
    if (x.rank() != 2 || y.rank() != 2)
        throw ShapeError("mmd2_unbiased needs rank-2 inputs, got " + shape_str(x.shape) + " and " +
                         shape_str(y.shape));
    if (x.cols() != y.cols())
        throw ShapeError("mmd2_unbiased: column mismatch " + shape_str(x.shape) + " vs " +
                         shape_str(y.shape));
    const int n = x.rows(), m = y.rows(), e = x.cols();
    if (n < 2 || m < 2) throw DomainError("mmd2_unbiased needs at least 2 rows per sample");
    if (!(bandwidth > 0.0)) throw DomainError("mmd2_unbiased needs bandwidth > 0");

    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    auto kernel = [&](const Tensor& a, int i, const Tensor& b, int j) {
        double ss = 0.0;
        for (int c = 0; c < e; ++c) {
            const double dv = static_cast<double>(a.at(i, c)) - b.at(j, c);
            ss += dv * dv;
        }
        return std::exp(-ss * inv);
    };

    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) xx += kernel(x, i, x, j);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) yy += kernel(y, i, y, j);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) xy += kernel(x, i, y, j);

    return xx / (static_cast<double>(n) * (n - 1)) + yy / (static_cast<double>(m) * (m - 1)) -
           2.0 * xy / (static_cast<double>(n) * m);
}

double permutation_p_value(const std::vector<double>& null_values, double observed) {
    if (null_values.empty()) throw DomainError("permutation_p_value needs null values");
    int ge = 0;
    for (const double v : null_values)
        if (v >= observed) ++ge;
    return (1.0 + ge) / (static_cast<double>(null_values.size()) + 1.0);
}

namespace {

// [N x obs] raw set -> [e] embedding row
Tensor embed_set(const SummaryNetwork& net, const Configurator& config, const Tensor& set) {
    if (set.rank() != 2)
        throw ShapeError("misspecification_test: observed set must be [N x obs], got " +
                         shape_str(set.shape));
    Tensor boxed({1, set.shape[0], set.shape[1]}, set.data);
    const Tensor emb = net.embed(configure_data(config, boxed));
    return Tensor({emb.cols()}, emb.data);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    const int n = static_cast<int>(rows.size());
    const int e = rows[0].shape[0];
    Tensor out = Tensor::zeros({n, e});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < e; ++j) out.at(i, j) = rows[static_cast<std::size_t>(i)].at(j);
    return out;
}

Tensor simulate_cloud(const SummaryNetwork& net, const Configurator& config,
                      const GenerativeModel& model, int n_sets, Rng& rng) {
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(n_sets));
    for (int i = 0; i < n_sets; ++i) {
        const SimulationBatch batch = sample_batch(model, 1, rng);
        const Tensor emb = net.embed(configure_data(config, batch.data));
        rows.push_back(Tensor({emb.cols()}, emb.data));
    }
    return stack_rows(rows);
}

double median_pairwise_distance(const Tensor& x) {
    const int n = x.rows(), e = x.cols();
    std::vector<double> dist;
    dist.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double ss = 0.0;
            for (int c = 0; c < e; ++c) {
                const double dv = static_cast<double>(x.at(i, c)) - x.at(j, c);
                ss += dv * dv;
            }
            dist.push_back(std::sqrt(ss));
        }
    std::sort(dist.begin(), dist.end());
    const std::size_t k = dist.size();
    const double med = (k % 2 == 1) ? dist[k / 2] : 0.5 * (dist[k / 2 - 1] + dist[k / 2]);
    return std::max(med, 1e-6);
}

}  // namespace

MisspecResult misspecification_test(const SummaryNetwork& net, const Configurator& config,
                                    const GenerativeModel& model,
                                    const std::vector<Tensor>& observed_sets, int n_null, int n_ref,
                                    Rng& rng) {
    if (!config.fitted) throw ContractError("misspecification_test needs a trained summary network");
    if (n_null < 19) throw DomainError("misspecification_test needs at least 19 null replicas");
    if (observed_sets.size() < 2)
        throw DomainError("misspecification_test needs at least 2 observed sets");
    if (n_ref < 2) throw DomainError("misspecification_test needs n_ref >= 2");

    std::vector<Tensor> obs_rows;
    obs_rows.reserve(observed_sets.size());
    for (const Tensor& set : observed_sets) obs_rows.push_back(embed_set(net, config, set));
    const Tensor obs_cloud = stack_rows(obs_rows);
    const int n_obs = obs_cloud.rows();

    const Tensor ref_cloud = simulate_cloud(net, config, model, n_ref, rng);

    MisspecResult result;
    result.bandwidth = median_pairwise_distance(ref_cloud);
    result.observed_mmd2 = mmd2_unbiased(obs_cloud, ref_cloud, result.bandwidth);

    result.null_mmd2.reserve(static_cast<std::size_t>(n_null));
    for (int r = 0; r < n_null; ++r) {
        const Tensor a = simulate_cloud(net, config, model, n_obs, rng);
        const Tensor b = simulate_cloud(net, config, model, n_ref, rng);
        result.null_mmd2.push_back(mmd2_unbiased(a, b, result.bandwidth));
    }
    result.p = permutation_p_value(result.null_mmd2, result.observed_mmd2);
    return result;
}

MisspecResult misspecification_test(const PosteriorAmortizer& am, const GenerativeModel& model,
                                    const std::vector<Tensor>& observed_sets, int n_null, int n_ref,
                                    Rng& rng) {
    return misspecification_test(am.summary, am.configurator, model, observed_sets, n_null, n_ref,
                                 rng);
}

// ---------------------------------------------------------------------------
// CSV export

void write_recovery_csv(const RecoveryReport& report, std::ostream& os) {
    os << "param,true,post_mean,post_sd\n";
    const int n = report.true_params.rows(), d = report.true_params.cols();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            os << j << ',';
            print_float(os, report.true_params.at(i, j));
            os << ',';
            print_float(os, report.posterior_mean.at(i, j));
            os << ',';
            print_float(os, report.posterior_sd.at(i, j));
            os << '\n';
        }
}

void write_sbc_ranks_csv(const SbcResult& result, std::ostream& os) {
    os << "param,rank\n";
    for (std::size_t j = 0; j < result.ranks.size(); ++j)
        for (const int r : result.ranks[j]) os << j << ',' << r << '\n';
}

void write_sbc_test_csv(const SbcResult& result, std::ostream& os) {
    os << "param,chi2,p\n";
    for (std::size_t j = 0; j < result.tests.size(); ++j) {
        os << j << ',';
        print_float(os, result.tests[j].chi2);
        os << ',';
        print_float(os, result.tests[j].p);
        os << '\n';
    }
}

void write_misspec_csv(const MisspecResult& result, std::ostream& os) {
    os << "observed_mmd2,p,bandwidth";
    for (std::size_t i = 0; i < result.null_mmd2.size(); ++i) os << ",null_" << i;
    os << '\n';
    print_float(os, result.observed_mmd2);
    os << ',';
    print_float(os, result.p);
    os << ',';
    print_float(os, result.bandwidth);
    for (const double v : result.null_mmd2) {
        os << ',';
        print_float(os, v);
    }
    os << '\n';
}

}  // namespace flowinfer
