#include "flowinfer/amortizers.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowinfer/errors.hpp"

namespace flowinfer {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

using State = std::vector<std::pair<std::string, Tensor>>;

const Tensor* find_tensor(const State& state, const std::string& name) {
    for (const auto& [n, t] : state)
        if (n == name) return &t;
    return nullptr;
}

void assign_named(const State& state, const std::vector<std::string>& names,
                  const std::vector<Tensor*>& dst) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Tensor* src = find_tensor(state, names[i]);
        if (!src) throw FormatError("checkpoint missing tensor '" + names[i] + "'");
        if (src->shape != dst[i]->shape)
            throw ShapeError("checkpoint tensor '" + names[i] + "' has shape " +
                             shape_str(src->shape) + ", expected " + shape_str(dst[i]->shape));
        *dst[i] = *src;
    }
}

void store_perms(State& out, const ConditionalFlow& flow, const std::string& prefix) {
    for (std::size_t l = 0; l < flow.layers.size(); ++l) {
        Tensor p = Tensor::zeros({flow.target_dim});
        for (int j = 0; j < flow.target_dim; ++j)
            p.at(j) = static_cast<float>(flow.layers[l].perm[j]);
        out.emplace_back(prefix + ".l" + std::to_string(l) + ".perm", std::move(p));
    }
}

void load_perms(const State& state, ConditionalFlow& flow, const std::string& prefix) {
    const int d = flow.target_dim;
    for (std::size_t l = 0; l < flow.layers.size(); ++l) {
        const std::string name = prefix + ".l" + std::to_string(l) + ".perm";
        const Tensor* p = find_tensor(state, name);
        if (!p) throw FormatError("checkpoint missing tensor '" + name + "'");
        if (p->numel() != static_cast<std::size_t>(d))
            throw ShapeError("checkpoint tensor '" + name + "' has " +
                             std::to_string(p->numel()) + " entries, expected " +
                             std::to_string(d));
        std::vector<int> perm(d), seen(d, 0);
        for (int j = 0; j < d; ++j) {
            const int v = static_cast<int>(std::lround(p->at(j)));
            if (v < 0 || v >= d || seen[v]++)
                throw FormatError("checkpoint tensor '" + name + "' is not a permutation");
            perm[j] = v;
        }
        flow.layers[l].perm = perm;
        flow.layers[l].inv_perm.assign(d, 0);
        for (int j = 0; j < d; ++j) flow.layers[l].inv_perm[perm[j]] = j;
    }
}

void store_configurator(State& out, const Configurator& c) {
    out.emplace_back("config.fitted", Tensor::scalar(c.fitted ? 1.0f : 0.0f));
    if (!c.fitted) return;
    out.emplace_back("config.param_mean", c.param_mean);
    out.emplace_back("config.param_std", c.param_std);
    out.emplace_back("config.data_mean", c.data_mean);
    out.emplace_back("config.data_std", c.data_std);
    out.emplace_back("config.context_dim", Tensor::scalar(static_cast<float>(c.context_dim)));
    out.emplace_back("config.encode_set_size", Tensor::scalar(c.encode_set_size ? 1.0f : 0.0f));
}

void load_configurator(const State& state, Configurator& c) {
    const Tensor* fitted = find_tensor(state, "config.fitted");
    if (!fitted) throw FormatError("checkpoint missing tensor 'config.fitted'");
    c.fitted = fitted->at(0) != 0.0f;
    if (!c.fitted) return;
    const char* names[] = {"config.param_mean", "config.param_std", "config.data_mean",
                           "config.data_std", "config.context_dim", "config.encode_set_size"};
    Tensor* dst[] = {&c.param_mean, &c.param_std, &c.data_mean, &c.data_std, nullptr, nullptr};
    for (int i = 0; i < 6; ++i) {
        const Tensor* t = find_tensor(state, names[i]);
        if (!t) throw FormatError(std::string("checkpoint missing tensor '") + names[i] + "'");
        if (dst[i]) *dst[i] = *t;
    }
    c.context_dim = static_cast<int>(std::lround(find_tensor(state, "config.context_dim")->at(0)));
    c.encode_set_size = find_tensor(state, "config.encode_set_size")->at(0) != 0.0f;
}

std::vector<SimulationBatch> calibration_batches(const GenerativeModel& model, int total,
                                                 Rng& rng) {
    std::vector<SimulationBatch> out;
    for (int remaining = total; remaining > 0;) {
        const int b = remaining < 64 ? remaining : 64;
        out.push_back(sample_batch(model, b, rng));
        remaining -= b;
    }
    return out;
}

Tensor normalize_context(const Configurator& cfg, const Tensor& context) {
    if (context.rank() == 0 && cfg.context_dim == 0) return Tensor::zeros({0});
    return context;
}

Tensor as_row(const Tensor& theta, int d, const char* what) {
    if (theta.rank() == 1 && theta.shape[0] == d) return reshape(theta, {1, d});
    if (theta.rank() == 2 && theta.rows() == 1 && theta.cols() == d) return theta;
    throw ShapeError(std::string(what) + " expects a parameter vector of length " +
                     std::to_string(d) + ", got " + shape_str(theta.shape));
}

void check_observed(const Tensor& observed, int obs_dim, const char* what) {
    if (observed.rank() != 2 || observed.rows() < 1 || observed.cols() != obs_dim)
        throw ShapeError(std::string(what) + " expects observed data [N x " +
                         std::to_string(obs_dim) + "], got " + shape_str(observed.shape));
}

double require_finite_loss(double loss, const ConfiguredBatch& batch, const char* what) {
    if (!std::isfinite(loss))
        throw TrainingError(std::string(what) + " is non-finite on a batch of " +
                            std::to_string(batch.targets.rows()) + " rows with set size " +
                            std::to_string(batch.set_size));
    return loss;
}

int direct_dim(const GenerativeModel& model) {
    return model.context_dim + (model.encode_set_size ? 1 : 0);
}

// Deterministic standard-normal column keyed to the batch contents; used to
// pad 1-d observation targets up to the flow's minimum dimension.
Tensor aux_column(const ConfiguredBatch& batch) {
    uLong h = crc32(0L, nullptr, 0);
    h = crc32(h, reinterpret_cast<const Bytef*>(batch.targets.data.data()),
              static_cast<uInt>(batch.targets.data.size() * sizeof(float)));
    h = crc32(h, reinterpret_cast<const Bytef*>(batch.summary_conditions.data.data()),
              static_cast<uInt>(batch.summary_conditions.data.size() * sizeof(float)));
    const int rows = batch.summary_conditions.shape[0] * batch.summary_conditions.shape[1];
    Rng rng(0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(h));
    Tensor out = Tensor::zeros({rows, 1});
    for (auto& v : out.data) v = static_cast<float>(rng.normal());
    return out;
}

}  // namespace

// -- posterior ----------------------------------------------------------------

PosteriorAmortizer::PosteriorAmortizer(const GenerativeModel& model, const PosteriorConfig& cfg,
                                       Rng& rng)
    : model_name(model.name),
      summary(model.obs_dim, cfg.summary.embedding_dim, cfg.summary.pooling,
              cfg.summary.phi_hidden, cfg.summary.rho_hidden, cfg.summary.activation) {
    summary.init(rng);
    flow = ConditionalFlow(model.param_dim, cfg.summary.embedding_dim + direct_dim(model),
                           cfg.flow, rng);
    configurator.context_dim = model.context_dim;
    configurator.encode_set_size = model.encode_set_size;
}

void PosteriorAmortizer::prepare(const GenerativeModel& model, int calibration_size, Rng& rng) {
    if (model.name != model_name)
        throw ContractError("amortizer built for model '" + model_name +
                            "' cannot prepare on '" + model.name + "'");
    configurator = fit_configurator(calibration_batches(model, calibration_size, rng),
                                    model.encode_set_size);
}

std::vector<Tensor*> PosteriorAmortizer::parameters() {
    auto out = summary.params();
    auto f = flow.params();
    out.insert(out.end(), f.begin(), f.end());
    return out;
}

Tensor PosteriorAmortizer::conditions(const ConfiguredBatch& batch) const {
    Tensor emb = summary.embed(batch.summary_conditions);
    if (batch.direct_conditions.cols() == 0) return emb;
    return concat_cols(emb, batch.direct_conditions);
}

Tensor PosteriorAmortizer::condition_row(const Tensor& observed_set, const Tensor& context) const {
    check_observed(observed_set, summary.obs_dim(), "posterior condition");
    const int n = observed_set.rows();
    Tensor set3 = reshape(observed_set, {1, n, summary.obs_dim()});
    Tensor emb = summary.embed(configure_data(configurator, set3));
    Tensor direct =
        direct_condition_row(configurator, normalize_context(configurator, context), n);
    if (direct.cols() == 0) return emb;
    return concat_cols(emb, direct);
}

double posterior_loss(const PosteriorAmortizer& am, const ConfiguredBatch& batch) {
    Tensor lp = am.flow.log_prob(batch.targets, am.conditions(batch));
    double acc = 0.0;
    for (float v : lp.data) acc += v;
    return require_finite_loss(-acc / lp.numel(), batch, "posterior loss");
}

double PosteriorAmortizer::loss_value(const SimulationBatch& batch) {
    return posterior_loss(*this, configure(configurator, batch));
}

double PosteriorAmortizer::loss_and_gradients(const SimulationBatch& batch,
                                              std::vector<Tensor>& grads) {
    const ConfiguredBatch cb = configure(configurator, batch);
    Tape tape;
    std::vector<Val> leaves = summary.bind(tape);
    std::vector<Val> fl = flow.bind(tape);
    const Val* sp = leaves.data();
    Val emb = summary.embed(tape, sp, tape.leaf(cb.summary_conditions));
    Val cond = cb.direct_conditions.cols() > 0
                   ? concat_cols(emb, tape.leaf(cb.direct_conditions))
                   : emb;
    Val lp = flow.log_prob(tape, fl.data(), tape.leaf(cb.targets), cond);
    Val loss = neg(mean_all(lp));
    leaves.insert(leaves.end(), fl.begin(), fl.end());
    grads = tape.gradients(loss, leaves);
    return require_finite_loss(value(loss).at(0), cb, "posterior loss");
}

State PosteriorAmortizer::state_tensors() const {
    State out;
    auto sn = summary.param_names("summary");
    auto sp = summary.params();
    for (std::size_t i = 0; i < sn.size(); ++i) out.emplace_back(sn[i], *sp[i]);
    auto fn = flow.param_names("flow");
    auto fp = flow.params();
    for (std::size_t i = 0; i < fn.size(); ++i) out.emplace_back(fn[i], *fp[i]);
    store_perms(out, flow, "flow");
    store_configurator(out, configurator);
    return out;
}

void PosteriorAmortizer::load_state(const State& state) {
    assign_named(state, summary.param_names("summary"), summary.params());
    assign_named(state, flow.param_names("flow"), flow.params());
    load_perms(state, flow, "flow");
    load_configurator(state, configurator);
}

Tensor posterior_sample(const PosteriorAmortizer& am, const Tensor& observed_set,
                        const Tensor& context, int n_draws, Rng& rng) {
    if (!am.configurator.fitted)
        throw ContractError("posterior amortizer is untrained (configurator not fitted)");
    if (n_draws < 1) throw DomainError("n_draws must be >= 1");
    Tensor cond = am.condition_row(observed_set, context);
    Tensor z = am.flow.sample(cond, n_draws, rng);
    return deconfigure_params(am.configurator, z);
}

double posterior_log_prob(const PosteriorAmortizer& am, const Tensor& observed_set,
                          const Tensor& context, const Tensor& theta_raw) {
    if (!am.configurator.fitted)
        throw ContractError("posterior amortizer is untrained (configurator not fitted)");
    Tensor row = as_row(theta_raw, am.flow.target_dim, "posterior_log_prob");
    Tensor thz = configure_params(am.configurator, row);
    Tensor cond = am.condition_row(observed_set, context);
    double jac = 0.0;
    for (float s : am.configurator.param_std.data) jac += std::log(static_cast<double>(s));
    return static_cast<double>(am.flow.log_prob(thz, cond).at(0)) - jac;
}

// -- likelihood ---------------------------------------------------------------

LikelihoodAmortizer::LikelihoodAmortizer(const GenerativeModel& model, const LikelihoodConfig& cfg,
                                         Rng& rng)
    : model_name(model.name) {
    const int target = model.obs_dim < 2 ? 2 : model.obs_dim;
    flow = ConditionalFlow(target, model.param_dim + model.context_dim, cfg.flow, rng);
    configurator.context_dim = model.context_dim;
    configurator.encode_set_size = model.encode_set_size;
    obs_dim_ = model.obs_dim;
}

void LikelihoodAmortizer::prepare(const GenerativeModel& model, int calibration_size, Rng& rng) {
    if (model.name != model_name)
        throw ContractError("amortizer built for model '" + model_name +
                            "' cannot prepare on '" + model.name + "'");
    configurator = fit_configurator(calibration_batches(model, calibration_size, rng),
                                    model.encode_set_size);
}

std::vector<Tensor*> LikelihoodAmortizer::parameters() { return flow.params(); }

Tensor LikelihoodAmortizer::conditions(const ConfiguredBatch& batch) const {
    const int n = batch.summary_conditions.shape[1];
    // drop the trailing set-size encoding; context columns come first
    const int k = configurator.context_dim;
    Tensor theta_cond = k > 0
                            ? concat_cols(batch.targets,
                                          slice_cols(batch.direct_conditions, 0, k))
                            : batch.targets;
    return repeat_rows(theta_cond, n);
}

Tensor LikelihoodAmortizer::condition_row(const Tensor& theta_raw, const Tensor& context) const {
    Tensor row = as_row(theta_raw, configurator.param_mean.shape[0], "likelihood condition");
    Tensor thz = configure_params(configurator, row);
    const Tensor ctx = normalize_context(configurator, context);
    if (ctx.numel() == 0) return thz;
    if (ctx.rank() != 1 || ctx.shape[0] != configurator.context_dim)
        throw ShapeError("likelihood condition expects context of length " +
                         std::to_string(configurator.context_dim) + ", got " +
                         shape_str(ctx.shape));
    return concat_cols(thz, reshape(ctx, {1, configurator.context_dim}));
}

namespace {

// [B x N x obs] -> [(B*N) x flow_target]; pads a deterministic auxiliary
// standard-normal column when the observation dimension is 1
Tensor flatten_targets(const ConfiguredBatch& batch, int obs_dim, int flow_dim) {
    const int b = batch.summary_conditions.shape[0], n = batch.summary_conditions.shape[1];
    Tensor flat = reshape(batch.summary_conditions, {b * n, obs_dim});
    if (obs_dim == flow_dim) return flat;
    return concat_cols(flat, aux_column(batch));
}

}  // namespace

double likelihood_loss(const LikelihoodAmortizer& am, const ConfiguredBatch& batch) {
    Tensor targets = flatten_targets(batch, am.obs_dim(), am.flow.target_dim);
    Tensor lp = am.flow.log_prob(targets, am.conditions(batch));
    double acc = 0.0;
    for (float v : lp.data) acc += v;
    return require_finite_loss(-acc / lp.numel(), batch, "likelihood loss");
}

double LikelihoodAmortizer::loss_value(const SimulationBatch& batch) {
    return likelihood_loss(*this, configure(configurator, batch));
}

double LikelihoodAmortizer::loss_and_gradients(const SimulationBatch& batch,
                                               std::vector<Tensor>& grads) {
    const ConfiguredBatch cb = configure(configurator, batch);
    Tape tape;
    std::vector<Val> leaves = flow.bind(tape);
    Val targets = tape.leaf(flatten_targets(cb, obs_dim_, flow.target_dim));
    Val cond = tape.leaf(conditions(cb));
    Val lp = flow.log_prob(tape, leaves.data(), targets, cond);
    Val loss = neg(mean_all(lp));
    grads = tape.gradients(loss, leaves);
    return require_finite_loss(value(loss).at(0), cb, "likelihood loss");
}

State LikelihoodAmortizer::state_tensors() const {
    State out;
    auto fn = flow.param_names("flow");
    auto fp = flow.params();
    for (std::size_t i = 0; i < fn.size(); ++i) out.emplace_back(fn[i], *fp[i]);
    store_perms(out, flow, "flow");
    store_configurator(out, configurator);
    out.emplace_back("obs_dim", Tensor::scalar(static_cast<float>(obs_dim_)));
    return out;
}

void LikelihoodAmortizer::load_state(const State& state) {
    assign_named(state, flow.param_names("flow"), flow.params());
    load_perms(state, flow, "flow");
    load_configurator(state, configurator);
}

double likelihood_log_prob(const LikelihoodAmortizer& am, const Tensor& observed_set,
                           const Tensor& context, const Tensor& theta_raw) {
    if (!am.configurator.fitted)
        throw ContractError("likelihood amortizer is untrained (configurator not fitted)");
    check_observed(observed_set, am.obs_dim(), "likelihood_log_prob");
    const int n = observed_set.rows();
    Tensor cond = repeat_rows(am.condition_row(theta_raw, context), n);
    Tensor set3 = reshape(observed_set, {1, n, am.obs_dim()});
    Tensor xz = reshape(configure_data(am.configurator, set3), {n, am.obs_dim()});
    // padded 1-d targets: evaluate the joint at aux = 0 and divide out the
    // auxiliary standard-normal density (assumes the learned joint factorizes)
    const bool padded = am.obs_dim() != am.flow.target_dim;
    if (padded) xz = concat_cols(xz, Tensor::zeros({n, 1}));
    Tensor lp = am.flow.log_prob(xz, cond);
    double jac = 0.0;
    for (float s : am.configurator.data_std.data) jac += std::log(static_cast<double>(s));
    if (padded) jac -= 0.5 * kLog2Pi;
    // per-row accumulation so a set's value is exactly the sum of its
    // single-observation values
    double acc = 0.0;
    for (float v : lp.data) acc += static_cast<double>(v) - jac;
    return acc;
}

Tensor emulate(const LikelihoodAmortizer& am, const Tensor& theta_raw, const Tensor& context,
               int n, Rng& rng) {
    if (!am.configurator.fitted)
        throw ContractError("likelihood amortizer is untrained (configurator not fitted)");
    if (n < 1) throw DomainError("emulate needs n >= 1");
    Tensor cond = am.condition_row(theta_raw, context);
    Tensor draws = am.flow.sample(cond, n, rng);
    if (am.obs_dim() != am.flow.target_dim) draws = slice_cols(draws, 0, am.obs_dim());
    return deconfigure_data(am.configurator, draws);
}

// -- comparison ---------------------------------------------------------------

ComparisonAmortizer::ComparisonAmortizer(const GenerativeModel& model, const ComparisonConfig& cfg,
                                         Rng& rng)
    : model_name(model.name),
      n_models(cfg.n_models),
      summary(model.obs_dim, cfg.summary.embedding_dim, cfg.summary.pooling,
              cfg.summary.phi_hidden, cfg.summary.rho_hidden, cfg.summary.activation) {
    if (cfg.n_models < 2) throw ContractError("comparison needs at least 2 candidate models");
    summary.init(rng);
    std::vector<int> widths = {cfg.summary.embedding_dim + direct_dim(model)};
    widths.insert(widths.end(), cfg.classifier_hidden.begin(), cfg.classifier_hidden.end());
    widths.push_back(cfg.n_models);
    classifier = Mlp(widths, cfg.summary.activation);
    classifier.init(rng);
    configurator.context_dim = model.context_dim;
    configurator.encode_set_size = model.encode_set_size;
}

void ComparisonAmortizer::prepare(const GenerativeModel& model, int calibration_size, Rng& rng) {
    if (model.name != model_name)
        throw ContractError("amortizer built for model '" + model_name +
                            "' cannot prepare on '" + model.name + "'");
    configurator = fit_configurator(calibration_batches(model, calibration_size, rng),
                                    model.encode_set_size);
}

std::vector<Tensor*> ComparisonAmortizer::parameters() {
    auto out = summary.params();
    auto c = classifier.params();
    out.insert(out.end(), c.begin(), c.end());
    return out;
}

Tensor ComparisonAmortizer::logits(const ConfiguredBatch& batch) const {
    Tensor emb = summary.embed(batch.summary_conditions);
    Tensor in = batch.direct_conditions.cols() > 0 ? concat_cols(emb, batch.direct_conditions)
                                                   : emb;
    return classifier.forward(in);
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross-entropy expects [B x M] logits, got " + shape_str(logits.shape));
    const int bsz = logits.rows(), m = logits.cols();
    if (static_cast<int>(labels.size()) != bsz)
        throw ShapeError("cross-entropy got " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(bsz) + " rows");
    double acc = 0.0;
    for (int b = 0; b < bsz; ++b) {
        if (labels[b] < 0 || labels[b] >= m)
            throw DomainError("label " + std::to_string(labels[b]) + " out of range [0, " +
                              std::to_string(m) + ")");
        double mx = logits.at(b, 0);
        for (int j = 1; j < m; ++j) mx = std::max(mx, static_cast<double>(logits.at(b, j)));
        double se = 0.0;
        for (int j = 0; j < m; ++j) se += std::exp(static_cast<double>(logits.at(b, j)) - mx);
        acc += mx + std::log(se) - logits.at(b, labels[b]);
    }
    return acc / bsz;
}

double comparison_loss(const ComparisonAmortizer& am, const ConfiguredBatch& batch,
                       const std::vector<int>& labels) {
    const double loss = softmax_cross_entropy(am.logits(batch), labels);
    return require_finite_loss(loss, batch, "comparison loss");
}

namespace {

std::vector<int> labels_from_params(const Tensor& params, int n_models) {
    std::vector<int> labels(params.rows());
    for (int b = 0; b < params.rows(); ++b) {
        const int v = static_cast<int>(std::lround(params.at(b, 0)));
        if (v < 0 || v >= n_models)
            throw DomainError("model label " + std::to_string(v) + " out of range [0, " +
                              std::to_string(n_models) + ")");
        labels[b] = v;
    }
    return labels;
}

}  // namespace

double ComparisonAmortizer::loss_value(const SimulationBatch& batch) {
    return comparison_loss(*this, configure(configurator, batch),
                           labels_from_params(batch.params, n_models));
}

double ComparisonAmortizer::loss_and_gradients(const SimulationBatch& batch,
                                               std::vector<Tensor>& grads) {
    const std::vector<int> labels = labels_from_params(batch.params, n_models);
    const ConfiguredBatch cb = configure(configurator, batch);
    const int bsz = cb.targets.rows();

    Tape tape;
    std::vector<Val> leaves = summary.bind(tape);
    std::vector<Val> cl = classifier.bind(tape);
    Val emb = summary.embed(tape, leaves.data(), tape.leaf(cb.summary_conditions));
    Val in = cb.direct_conditions.cols() > 0 ? concat_cols(emb, tape.leaf(cb.direct_conditions))
                                             : emb;
    Val logits = classifier.forward(tape, cl.data(), in);

    // stable LSE: broadcast the row max via matmul with a ones row
    Val mx = max(logits, 1);
    Val mx_full = matmul(reshape(mx, {bsz, 1}), tape.leaf(Tensor::full({1, n_models}, 1.0f)));
    Val lse = add(log(sum(exp(sub(logits, mx_full)), 1)), mx);
    Tensor onehot = Tensor::zeros({bsz, n_models});
    for (int b = 0; b < bsz; ++b) onehot.at(b, labels[b]) = 1.0f;
    Val picked = sum(mul(logits, tape.leaf(onehot)), 1);
    Val loss = mean_all(sub(lse, picked));

    leaves.insert(leaves.end(), cl.begin(), cl.end());
    grads = tape.gradients(loss, leaves);
    return require_finite_loss(value(loss).at(0), cb, "comparison loss");
}

State ComparisonAmortizer::state_tensors() const {
    State out;
    auto sn = summary.param_names("summary");
    auto sp = summary.params();
    for (std::size_t i = 0; i < sn.size(); ++i) out.emplace_back(sn[i], *sp[i]);
    auto cn = classifier.param_names("classifier");
    auto cp = classifier.params();
    for (std::size_t i = 0; i < cn.size(); ++i) out.emplace_back(cn[i], *cp[i]);
    store_configurator(out, configurator);
    return out;
}

void ComparisonAmortizer::load_state(const State& state) {
    assign_named(state, summary.param_names("summary"), summary.params());
    assign_named(state, classifier.param_names("classifier"), classifier.params());
    load_configurator(state, configurator);
}

Tensor predict_pmp(const ComparisonAmortizer& am, const Tensor& observed_set,
                   const Tensor& context) {
    if (!am.configurator.fitted)
        throw ContractError("comparison amortizer is untrained (configurator not fitted)");
    check_observed(observed_set, am.summary.obs_dim(), "predict_pmp");
    const int n = observed_set.rows();
    Tensor set3 = reshape(observed_set, {1, n, am.summary.obs_dim()});
    Tensor emb = am.summary.embed(configure_data(am.configurator, set3));
    Tensor direct =
        direct_condition_row(am.configurator, normalize_context(am.configurator, context), n);
    Tensor in = direct.cols() > 0 ? concat_cols(emb, direct) : emb;
    Tensor logits = am.classifier.forward(in);

    double mx = logits.at(0, 0);
    for (int j = 1; j < am.n_models; ++j) mx = std::max(mx, static_cast<double>(logits.at(0, j)));
    double se = 0.0;
    std::vector<double> e(am.n_models);
    for (int j = 0; j < am.n_models; ++j) {
        e[j] = std::exp(static_cast<double>(logits.at(0, j)) - mx);
        se += e[j];
    }
    Tensor out = Tensor::zeros({am.n_models});
    for (int j = 0; j < am.n_models; ++j) out.at(j) = static_cast<float>(e[j] / se);
    return out;
}

// -- evidence -----------------------------------------------------------------

namespace {

void check_same_model(const PosteriorAmortizer& post, const LikelihoodAmortizer& lik,
                      const GenerativeModel& model) {
    if (post.model_name != model.name || lik.model_name != model.name)
        throw ContractError("evidence needs amortizers trained on '" + model.name +
                            "', got posterior '" + post.model_name + "' and likelihood '" +
                            lik.model_name + "'");
}

}  // namespace

double log_evidence_at(const PosteriorAmortizer& post, const LikelihoodAmortizer& lik,
                       const GenerativeModel& model, const Tensor& observed_set,
                       const Tensor& context, const Tensor& theta_raw) {
    check_same_model(post, lik, model);
    Tensor row = as_row(theta_raw, model.param_dim, "log_evidence");
    Tensor flat = reshape(row, {model.param_dim});
    const double log_lik = likelihood_log_prob(lik, observed_set, context, row);
    const double log_prior = model.prior_log_prob(flat);
    const double log_post = posterior_log_prob(post, observed_set, context, row);
    return evidence_from_parts(log_lik, log_prior, log_post);
}

double log_evidence(const PosteriorAmortizer& post, const LikelihoodAmortizer& lik,
                    const GenerativeModel& model, const Tensor& observed_set,
                    const Tensor& context, Rng& rng) {
    check_same_model(post, lik, model);
    Tensor draws = posterior_sample(post, observed_set, context, 256, rng);
    Tensor theta_hat = Tensor::zeros({model.param_dim});
    for (int j = 0; j < model.param_dim; ++j) {
        double acc = 0.0;
        for (int i = 0; i < draws.rows(); ++i) acc += draws.at(i, j);
        theta_hat.at(j) = static_cast<float>(acc / draws.rows());
    }
    return log_evidence_at(post, lik, model, observed_set, context, theta_hat);
}

double log_predictive(const PosteriorAmortizer& post, const LikelihoodAmortizer& lik,
                      const Tensor& observed_set, const Tensor& held_out, const Tensor& context,
                      int n_draws, Rng& rng) {
    if (n_draws < 1) throw DomainError("log_predictive needs n_draws >= 1");
    Tensor draws = posterior_sample(post, observed_set, context, n_draws, rng);
    std::vector<double> ll(static_cast<std::size_t>(n_draws));
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_draws; ++k) {
        Tensor row = Tensor::zeros({1, draws.cols()});
        for (int j = 0; j < draws.cols(); ++j) row.at(0, j) = draws.at(k, j);
        ll[k] = likelihood_log_prob(lik, held_out, context, row);
        mx = std::max(mx, ll[k]);
    }
    double se = 0.0;
    for (double v : ll) se += std::exp(v - mx);
    return mx + std::log(se / n_draws);
}

}  // namespace flowinfer
