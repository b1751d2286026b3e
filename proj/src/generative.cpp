#include "flowinfer/generative.hpp"

#include <cmath>
#include <cstdio>

#include "flowinfer/errors.hpp"

namespace flowinfer {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

GenerativeModel make_conjugate_gaussian() {
    GenerativeModel m;
    m.name = "conjugate_gaussian";
    m.param_dim = 2;
    m.obs_dim = 2;
    m.min_set_size = 4;
    m.max_set_size = 64;
    m.encode_set_size = true;
    m.param_labels = {"mu_0", "mu_1"};
    m.prior_sample = [](Rng& rng) {
        return Tensor({2}, {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())});
    };
    m.prior_log_prob = [](const Tensor& theta) {
        double q = 0.0;
        for (float v : theta.data) q += static_cast<double>(v) * v;
        return -std::log(kTwoPi) - 0.5 * q;
    };
    m.simulate = [](const Tensor& theta, const Tensor&, int n, Rng& rng) {
        Tensor out = Tensor::zeros({n, 2});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 2; ++j)
                out.at(i, j) = static_cast<float>(theta.at(j) + rng.normal());
        return out;
    };
    return m;
}

GenerativeModel make_gaussian_meanvar() {
    GenerativeModel m;
    m.name = "gaussian_meanvar";
    m.param_dim = 2;
    m.obs_dim = 1;
    m.min_set_size = 8;
    m.max_set_size = 32;
    m.encode_set_size = true;
    m.param_labels = {"mu", "log_sigma"};
    m.prior_sample = [](Rng& rng) {
        return Tensor({2}, {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())});
    };
    m.prior_log_prob = [](const Tensor& theta) {
        double q = 0.0;
        for (float v : theta.data) q += static_cast<double>(v) * v;
        return -std::log(kTwoPi) - 0.5 * q;
    };
    m.simulate = [](const Tensor& theta, const Tensor&, int n, Rng& rng) {
        const double mu = theta.at(0);
        const double sigma = std::exp(static_cast<double>(theta.at(1)));
        Tensor out = Tensor::zeros({n, 1});
        for (int i = 0; i < n; ++i) out.at(i, 0) = static_cast<float>(mu + sigma * rng.normal());
        return out;
    };
    return m;
}

GenerativeModel make_model_pair() {
    GenerativeModel m;
    m.name = "model_pair";
    m.param_dim = 1;  // the model label
    m.obs_dim = 1;
    m.min_set_size = 64;
    m.max_set_size = 64;
    m.balanced_labels = true;
    m.param_labels = {"model"};
    m.prior_sample = [](Rng& rng) {
        return Tensor({1}, {static_cast<float>(rng.uniform_int(0, 1))});
    };
    m.prior_log_prob = [](const Tensor&) { return std::log(0.5); };
    m.simulate = [](const Tensor& theta, const Tensor&, int n, Rng& rng) {
        const bool student = theta.at(0) >= 0.5f;
        Tensor out = Tensor::zeros({n, 1});
        for (int i = 0; i < n; ++i) {
            if (!student) {
                out.at(i, 0) = static_cast<float>(rng.normal());
            } else {
                // Student-t with 3 dof: z / sqrt(chi2_3 / 3)
                double z = rng.normal();
                double g = 0.0;
                for (int k = 0; k < 3; ++k) {
                    double u = rng.normal();
                    g += u * u;
                }
                out.at(i, 0) = static_cast<float>(z / std::sqrt(g / 3.0));
            }
        }
        return out;
    };
    return m;
}

}  // namespace

GenerativeModel builtin_model(const std::string& name) {
    if (name == "conjugate_gaussian") return make_conjugate_gaussian();
    if (name == "gaussian_meanvar") return make_gaussian_meanvar();
    if (name == "model_pair") return make_model_pair();
    throw ConfigError("unknown model '" + name +
                      "' (expected conjugate_gaussian, gaussian_meanvar or model_pair)");
}

GenerativeModel with_set_size(GenerativeModel model, int n) {
    if (n < 1) throw ContractError("set size must be >= 1");
    model.min_set_size = n;
    model.max_set_size = n;
    return model;
}

SimulationBatch sample_batch(const GenerativeModel& model, int batch_size, Rng& rng) {
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (!model.prior_sample || !model.simulate)
        throw ContractError("generative model is missing its prior or simulator");

    // One consumed draw seeds the whole batch; rows use split child streams
    // so they are independent of each other's consumption.
    Rng batch_rng(rng.next_u64());
    const int n = batch_rng.uniform_int(model.min_set_size, model.max_set_size);

    SimulationBatch out;
    out.set_size = n;
    out.params = Tensor::zeros({batch_size, model.param_dim});
    out.data = Tensor::zeros({batch_size, n, model.obs_dim});
    out.context = Tensor::zeros({batch_size, model.context_dim});

    for (int b = 0; b < batch_size; ++b) {
        Rng row_rng = batch_rng.split(static_cast<std::uint64_t>(b));
        Tensor ctx = Tensor::zeros({model.context_dim});
        if (model.context_sample) ctx = model.context_sample(row_rng);
        if (ctx.rank() != 1 || ctx.shape[0] != model.context_dim)
            throw ContractError("context generator returned " + shape_str(ctx.shape) +
                                ", expected [" + std::to_string(model.context_dim) + "]");
        Tensor theta = model.prior_sample(row_rng);
        if (model.balanced_labels)
            theta = Tensor({model.param_dim}, std::vector<float>(model.param_dim,
                                                                 static_cast<float>(b % 2)));
        if (theta.rank() != 1 || theta.shape[0] != model.param_dim)
            throw ContractError("prior returned " + shape_str(theta.shape) + ", expected [" +
                                std::to_string(model.param_dim) + "]");
        Tensor rows = model.simulate(theta, ctx, n, row_rng);
        if (rows.rank() != 2 || rows.shape[0] != n || rows.shape[1] != model.obs_dim)
            throw ContractError("simulator returned " + shape_str(rows.shape) + ", expected [" +
                                std::to_string(n) + "x" + std::to_string(model.obs_dim) + "]");
        if (!rows.all_finite() || !theta.all_finite()) {
            std::string ts;
            for (int j = 0; j < model.param_dim; ++j)
                ts += (j ? ", " : "") + std::to_string(theta.at(j));
            throw SimulationError("simulator produced non-finite output at theta = [" + ts + "]");
        }
        for (int j = 0; j < model.param_dim; ++j) out.params.at(b, j) = theta.at(j);
        for (int j = 0; j < model.context_dim; ++j) out.context.at(b, j) = ctx.at(j);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < model.obs_dim; ++j) out.data.at(b, i, j) = rows.at(i, j);
    }
    return out;
}

void export_batch_csv(const SimulationBatch& batch, std::ostream& os) {
    const int b = batch.params.rows();
    const int d = batch.params.cols();
    const int n = batch.data.shape[1];
    const int obs = batch.data.shape[2];
    const int k = batch.context.cols();
    bool first = true;
    auto col = [&](const std::string& name) {
        os << (first ? "" : ",") << name;
        first = false;
    };
    for (int j = 0; j < d; ++j) col("param_" + std::to_string(j));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < obs; ++j)
            col("data_" + std::to_string(i) + "_" + std::to_string(j));
    for (int j = 0; j < k; ++j) col("context_" + std::to_string(j));
    os << "\n";
    char buf[32];
    for (int r = 0; r < b; ++r) {
        bool lead = true;
        auto cell = [&](float v) {
            std::snprintf(buf, sizeof buf, "%.8e", static_cast<double>(v));
            os << (lead ? "" : ",") << buf;
            lead = false;
        };
        for (int j = 0; j < d; ++j) cell(batch.params.at(r, j));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < obs; ++j) cell(batch.data.at(r, i, j));
        for (int j = 0; j < k; ++j) cell(batch.context.at(r, j));
        os << "\n";
    }
}

ConjugatePosterior conjugate_gaussian_posterior(const Tensor& data) {
    if (data.rank() != 2 || data.cols() != 2)
        throw ShapeError("conjugate posterior expects [N x 2] data, got " + shape_str(data.shape));
    const int n = data.rows();
    ConjugatePosterior out;
    out.mean = Tensor::zeros({2});
    for (int j = 0; j < 2; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += data.at(i, j);
        out.mean.at(j) = static_cast<float>(s / (n + 1.0));
    }
    out.variance = 1.0 / (n + 1.0);
    return out;
}

double conjugate_gaussian_log_marginal(const Tensor& data) {
    if (data.rank() != 2 || data.cols() != 2)
        throw ShapeError("conjugate marginal expects [N x 2] data, got " + shape_str(data.shape));
    const int n = data.rows();
    double total = 0.0;
    for (int j = 0; j < 2; ++j) {
        double s = 0.0, q = 0.0;
        for (int i = 0; i < n; ++i) {
            double v = data.at(i, j);
            s += v;
            q += v * v;
        }
        total += -0.5 * n * std::log(kTwoPi) - 0.5 * std::log(1.0 + n) -
                 0.5 * (q - s * s / (1.0 + n));
    }
    return total;
}

namespace {

void accumulate_moments(const std::vector<SimulationBatch>& batches, int cols, bool over_params,
                        Tensor& mean_out, Tensor& std_out) {
    std::vector<double> s(cols, 0.0), q(cols, 0.0);
    std::size_t rows = 0;
    for (const auto& b : batches) {
        if (over_params) {
            for (int r = 0; r < b.params.rows(); ++r)
                for (int j = 0; j < cols; ++j) {
                    double v = b.params.at(r, j);
                    s[j] += v;
                    q[j] += v * v;
                }
            rows += static_cast<std::size_t>(b.params.rows());
        } else {
            for (int r = 0; r < b.data.shape[0]; ++r)
                for (int i = 0; i < b.data.shape[1]; ++i)
                    for (int j = 0; j < cols; ++j) {
                        double v = b.data.at(r, i, j);
                        s[j] += v;
                        q[j] += v * v;
                    }
            rows += static_cast<std::size_t>(b.data.shape[0]) * b.data.shape[1];
        }
    }
    mean_out = Tensor::zeros({cols});
    std_out = Tensor::zeros({cols});
    for (int j = 0; j < cols; ++j) {
        double m = s[j] / static_cast<double>(rows);
        double var = q[j] / static_cast<double>(rows) - m * m;
        if (var < 0.0) var = 0.0;
        mean_out.at(j) = static_cast<float>(m);
        std_out.at(j) = static_cast<float>(std::max(std::sqrt(var), 1e-6));
    }
}

}  // namespace

Configurator fit_configurator(const std::vector<SimulationBatch>& batches, bool encode_set_size) {
    std::size_t rows = 0;
    for (const auto& b : batches) rows += static_cast<std::size_t>(b.params.rows());
    if (rows < 2) throw DomainError("configurator needs at least 2 rows to fit");

    Configurator cfg;
    cfg.fitted = true;
    cfg.encode_set_size = encode_set_size;
    cfg.context_dim = batches.front().context.cols();
    accumulate_moments(batches, batches.front().params.cols(), true, cfg.param_mean,
                       cfg.param_std);
    accumulate_moments(batches, batches.front().data.shape[2], false, cfg.data_mean,
                       cfg.data_std);
    return cfg;
}

namespace {
void require_fitted(const Configurator& cfg) {
    if (!cfg.fitted) throw ContractError("configurator has not been fitted");
}
}  // namespace

Tensor configure_params(const Configurator& cfg, const Tensor& raw) {
    require_fitted(cfg);
    const int d = cfg.param_mean.shape[0];
    if (raw.rank() != 2 || raw.cols() != d)
        throw ShapeError("configure expects [n x " + std::to_string(d) + "] params, got " +
                         shape_str(raw.shape));
    Tensor out = Tensor::zeros(raw.shape);
    for (int r = 0; r < raw.rows(); ++r)
        for (int j = 0; j < d; ++j)
            out.at(r, j) = static_cast<float>(
                (static_cast<double>(raw.at(r, j)) - cfg.param_mean.at(j)) / cfg.param_std.at(j));
    return out;
}

Tensor deconfigure_params(const Configurator& cfg, const Tensor& z) {
    require_fitted(cfg);
    const int d = cfg.param_mean.shape[0];
    if (z.rank() != 2 || z.cols() != d)
        throw ShapeError("deconfigure expects [n x " + std::to_string(d) + "] params, got " +
                         shape_str(z.shape));
    Tensor out = Tensor::zeros(z.shape);
    for (int r = 0; r < z.rows(); ++r)
        for (int j = 0; j < d; ++j)
            out.at(r, j) = static_cast<float>(static_cast<double>(z.at(r, j)) * cfg.param_std.at(j) +
                                              cfg.param_mean.at(j));
    return out;
}

Tensor configure_data(const Configurator& cfg, const Tensor& set_x) {
    require_fitted(cfg);
    const int obs = cfg.data_mean.shape[0];
    if (set_x.rank() != 3 || set_x.shape[2] != obs)
        throw ShapeError("configure expects [B x N x " + std::to_string(obs) + "] data, got " +
                         shape_str(set_x.shape));
    Tensor out = Tensor::zeros(set_x.shape);
    for (int b = 0; b < set_x.shape[0]; ++b)
        for (int i = 0; i < set_x.shape[1]; ++i)
            for (int j = 0; j < obs; ++j)
                out.at(b, i, j) =
                    static_cast<float>((static_cast<double>(set_x.at(b, i, j)) - cfg.data_mean.at(j)) /
                                       cfg.data_std.at(j));
    return out;
}

Tensor deconfigure_data(const Configurator& cfg, const Tensor& z) {
    require_fitted(cfg);
    const int obs = cfg.data_mean.shape[0];
    if (z.rank() != 2 || z.cols() != obs)
        throw ShapeError("deconfigure expects [n x " + std::to_string(obs) + "] observations, got " +
                         shape_str(z.shape));
    Tensor out = Tensor::zeros(z.shape);
    for (int i = 0; i < z.rows(); ++i)
        for (int j = 0; j < obs; ++j)
            out.at(i, j) = static_cast<float>(static_cast<double>(z.at(i, j)) * cfg.data_std.at(j) +
                                              cfg.data_mean.at(j));
    return out;
}

Tensor direct_condition_row(const Configurator& cfg, const Tensor& context, int set_size) {
    require_fitted(cfg);
    if (context.rank() != 1 || context.shape[0] != cfg.context_dim)
        throw ShapeError("direct conditions expect context [" + std::to_string(cfg.context_dim) +
                         "], got " + shape_str(context.shape));
    const int w = cfg.context_dim + (cfg.encode_set_size ? 1 : 0);
    Tensor out = Tensor::zeros({1, w});
    for (int j = 0; j < cfg.context_dim; ++j) out.at(0, j) = context.at(j);
    if (cfg.encode_set_size)
        out.at(0, cfg.context_dim) =
            static_cast<float>(std::sqrt(static_cast<double>(set_size)) / 10.0);
    return out;
}

ConfiguredBatch configure(const Configurator& cfg, const SimulationBatch& batch) {
    require_fitted(cfg);
    if (batch.context.cols() != cfg.context_dim)
        throw ShapeError("configure expects context width " + std::to_string(cfg.context_dim) +
                         ", got " + shape_str(batch.context.shape));
    ConfiguredBatch out;
    out.set_size = batch.set_size;
    out.targets = configure_params(cfg, batch.params);
    out.summary_conditions = configure_data(cfg, batch.data);
    const int b = batch.params.rows();
    const int w = cfg.context_dim + (cfg.encode_set_size ? 1 : 0);
    out.direct_conditions = Tensor::zeros({b, w});
    for (int r = 0; r < b; ++r) {
        for (int j = 0; j < cfg.context_dim; ++j)
            out.direct_conditions.at(r, j) = batch.context.at(r, j);
        if (cfg.encode_set_size)
            out.direct_conditions.at(r, cfg.context_dim) =
                static_cast<float>(std::sqrt(static_cast<double>(batch.set_size)) / 10.0);
    }
    return out;
}

}  // namespace flowinfer
