#include "flowinfer/networks.hpp"

#include <algorithm>
#include <cmath>

#include "flowinfer/errors.hpp"

namespace flowinfer {

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ConfigError("unknown activation '" + s + "' (expected tanh or relu)");
}

Pooling pooling_from_string(const std::string& s) {
    if (s == "mean") return Pooling::Mean;
    if (s == "sum") return Pooling::Sum;
    if (s == "max") return Pooling::Max;
    throw ConfigError("unknown pooling '" + s + "' (expected mean, sum or max)");
}

// -- Mlp ----------------------------------------------------------------------

Mlp::Mlp(std::vector<int> w, Activation act) : widths(std::move(w)), activation(act) {
    if (widths.size() < 2) throw ContractError("mlp needs at least input and output widths");
    for (int d : widths)
        if (d < 1) throw ContractError("mlp widths must be positive");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        weights.push_back(Tensor::zeros({widths[i], widths[i + 1]}));
        biases.push_back(Tensor::zeros({1, widths[i + 1]}));
    }
}

void Mlp::init(Rng& rng, bool zero_final) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (zero_final && i + 1 == weights.size()) {
            std::fill(weights[i].data.begin(), weights[i].data.end(), 0.0f);
            std::fill(biases[i].data.begin(), biases[i].data.end(), 0.0f);
            continue;
        }
        double bound = std::sqrt(6.0 / (widths[i] + widths[i + 1]));
        for (auto& v : weights[i].data)
            v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
        std::fill(biases[i].data.begin(), biases[i].data.end(), 0.0f);
    }
}

std::vector<Tensor*> Mlp::params() {
    std::vector<Tensor*> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(&weights[i]);
        out.push_back(&biases[i]);
    }
    return out;
}

std::vector<const Tensor*> Mlp::params() const {
    std::vector<const Tensor*> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(&weights[i]);
        out.push_back(&biases[i]);
    }
    return out;
}

std::vector<std::string> Mlp::param_names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(prefix + ".w" + std::to_string(i));
        out.push_back(prefix + ".b" + std::to_string(i));
    }
    return out;
}

Tensor Mlp::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_dim())
        throw ShapeError("mlp expects input [batch x " + std::to_string(in_dim()) + "], got " +
                         shape_str(x.shape));
    Tensor h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        h = add(matmul(h, weights[i]), biases[i]);
        if (i + 1 < weights.size())
            h = (activation == Activation::Tanh) ? flowinfer::tanh(h) : relu(h);
    }
    return h;
}

Val Mlp::forward(Tape& tape, const Val* p, Val x) const {
    if (value(x).rank() != 2 || value(x).cols() != in_dim())
        throw ShapeError("mlp expects input [batch x " + std::to_string(in_dim()) + "], got " +
                         shape_str(value(x).shape));
    Val h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        h = add(matmul(h, p[2 * i]), p[2 * i + 1]);
        if (i + 1 < weights.size())
            h = (activation == Activation::Tanh) ? flowinfer::tanh(h) : relu(h);
    }
    (void)tape;
    return h;
}

std::vector<Val> Mlp::bind(Tape& tape) const {
    std::vector<Val> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(tape.leaf(weights[i]));
        out.push_back(tape.leaf(biases[i]));
    }
    return out;
}

// -- SummaryNetwork -----------------------------------------------------------

SummaryNetwork::SummaryNetwork(int obs_dim, int embedding_dim, Pooling pool,
                               const std::vector<int>& phi_hidden,
                               const std::vector<int>& rho_hidden, Activation act)
    : pooling(pool) {
    if (phi_hidden.empty()) throw ContractError("summary network needs at least one phi width");
    std::vector<int> pw = {obs_dim};
    pw.insert(pw.end(), phi_hidden.begin(), phi_hidden.end());
    std::vector<int> rw = {phi_hidden.back()};
    rw.insert(rw.end(), rho_hidden.begin(), rho_hidden.end());
    rw.push_back(embedding_dim);
    phi = Mlp(pw, act);
    rho = Mlp(rw, act);
}

void SummaryNetwork::init(Rng& rng) {
    phi.init(rng);
    rho.init(rng);
}

std::vector<Tensor*> SummaryNetwork::params() {
    auto out = phi.params();
    auto r = rho.params();
    out.insert(out.end(), r.begin(), r.end());
    return out;
}

std::vector<const Tensor*> SummaryNetwork::params() const {
    auto out = phi.params();
    auto r = rho.params();
    out.insert(out.end(), r.begin(), r.end());
    return out;
}

std::vector<std::string> SummaryNetwork::param_names(const std::string& prefix) const {
    auto out = phi.param_names(prefix + ".phi");
    auto r = rho.param_names(prefix + ".rho");
    out.insert(out.end(), r.begin(), r.end());
    return out;
}

namespace {
void check_set_input(const Tensor& set_x, int obs_dim) {
    if (set_x.rank() != 3)
        throw ShapeError("summary network expects [batch x set x obs], got " +
                         shape_str(set_x.shape));
    if (set_x.shape[1] < 1) throw DomainError("summary network got an empty set");
    if (set_x.shape[2] != obs_dim)
        throw ShapeError("summary network expects obs_dim " + std::to_string(obs_dim) + ", got " +
                         shape_str(set_x.shape));
}
}  // namespace

Tensor SummaryNetwork::embed(const Tensor& set_x) const {
    check_set_input(set_x, obs_dim());
    const int b = set_x.shape[0], n = set_x.shape[1];
    Tensor flat = reshape(set_x, {b * n, obs_dim()});
    Tensor e = phi.forward(flat);
    Tensor stacked = reshape(e, {b, n, e.cols()});
    Tensor pooled;
    switch (pooling) {
        case Pooling::Mean: pooled = mean(stacked, 1); break;
        case Pooling::Sum: pooled = sum(stacked, 1); break;
        case Pooling::Max: pooled = max(stacked, 1); break;
    }
    return rho.forward(pooled);
}

Val SummaryNetwork::embed(Tape& tape, const Val* p, Val set_x) const {
    check_set_input(value(set_x), obs_dim());
    const int b = value(set_x).shape[0], n = value(set_x).shape[1];
    Val flat = reshape(set_x, {b * n, obs_dim()});
    Val e = phi.forward(tape, p, flat);
    Val stacked = reshape(e, {b, n, value(e).cols()});
    Val pooled;
    switch (pooling) {
        case Pooling::Mean: pooled = mean(stacked, 1); break;
        case Pooling::Sum: pooled = sum(stacked, 1); break;
        case Pooling::Max: pooled = max(stacked, 1); break;
    }
    return rho.forward(tape, p + phi.n_tensors(), pooled);
}

std::vector<Val> SummaryNetwork::bind(Tape& tape) const {
    auto out = phi.bind(tape);
    auto r = rho.bind(tape);
    out.insert(out.end(), r.begin(), r.end());
    return out;
}

// -- ConditionalFlow ----------------------------------------------------------

namespace {

std::vector<int> random_permutation(int d, Rng& rng) {
    std::vector<int> p(d);
    for (int i = 0; i < d; ++i) p[i] = i;
    for (int i = d - 1; i >= 1; --i) std::swap(p[i], p[rng.uniform_int(0, i)]);
    return p;
}

// every dimension must land in the transformed half in at least one layer
bool covers_all_dims(const std::vector<std::vector<int>>& perms, int d, int k) {
    std::vector<bool> hit(d, false);
    for (const auto& p : perms)
        for (int j = k; j < d; ++j) hit[p[j]] = true;
    return std::all_of(hit.begin(), hit.end(), [](bool b) { return b; });
}

}  // namespace

ConditionalFlow::ConditionalFlow(int target_dim_, int cond_dim_, const FlowConfig& cfg, Rng& rng)
    : target_dim(target_dim_), cond_dim(cond_dim_), c_clamp(cfg.c_clamp) {
    if (target_dim < 2) throw ContractError("flow target_dim must be >= 2");
    if (cond_dim < 0) throw ContractError("flow cond_dim must be >= 0");
    if (cfg.n_layers < 1) throw ContractError("flow needs at least one coupling layer");
    if (cfg.c_clamp <= 0.0f) throw ContractError("flow c_clamp must be positive");

    const int k = split_point();
    std::vector<std::vector<int>> perms;
    for (std::uint64_t salt = 0; salt < 64; ++salt) {
        Rng child = rng.split(7000 + salt);
        perms.clear();
        for (int l = 0; l < cfg.n_layers; ++l) perms.push_back(random_permutation(target_dim, child));
        if (covers_all_dims(perms, target_dim, k)) break;
    }

    for (int l = 0; l < cfg.n_layers; ++l) {
        CouplingLayer layer;
        layer.perm = perms[l];
        layer.inv_perm.assign(target_dim, 0);
        for (int j = 0; j < target_dim; ++j) layer.inv_perm[layer.perm[j]] = j;
        std::vector<int> w = {k + cond_dim};
        w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
        w.push_back(target_dim - k);
        layer.s_net = Mlp(w, cfg.activation);
        layer.t_net = Mlp(w, cfg.activation);
        layer.s_net.init(rng, /*zero_final=*/true);
        layer.t_net.init(rng, /*zero_final=*/true);
        layers.push_back(std::move(layer));
    }
}

std::vector<Tensor*> ConditionalFlow::params() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
        auto s = l.s_net.params();
        auto t = l.t_net.params();
        out.insert(out.end(), s.begin(), s.end());
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

std::vector<const Tensor*> ConditionalFlow::params() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
        auto s = l.s_net.params();
        auto t = l.t_net.params();
        out.insert(out.end(), s.begin(), s.end());
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

std::vector<std::string> ConditionalFlow::param_names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto s = layers[l].s_net.param_names(prefix + ".l" + std::to_string(l) + ".s");
        auto t = layers[l].t_net.param_names(prefix + ".l" + std::to_string(l) + ".t");
        out.insert(out.end(), s.begin(), s.end());
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

namespace {
void check_flow_input(const Tensor& theta, const Tensor& cond, int d, int c, const char* what) {
    if (theta.rank() != 2 || theta.cols() != d)
        throw ShapeError(std::string(what) + ": expected [batch x " + std::to_string(d) +
                         "] targets, got " + shape_str(theta.shape));
    if (cond.rank() != 2 || cond.cols() != c || cond.rows() != theta.rows())
        throw ShapeError(std::string(what) + ": expected [" + std::to_string(theta.rows()) + " x " +
                         std::to_string(c) + "] conditions, got " + shape_str(cond.shape));
}
}  // namespace

std::pair<Tensor, Tensor> ConditionalFlow::forward(const Tensor& theta, const Tensor& cond) const {
    check_flow_input(theta, cond, target_dim, cond_dim, "flow forward");
    const int bsz = theta.rows(), d = target_dim, k = split_point(), m = d - k;
    const double c = c_clamp;
    Tensor cur = theta;
    std::vector<double> ld(bsz, 0.0);
    for (const auto& layer : layers) {
        Tensor u = gather_cols(cur, layer.perm);
        Tensor ua = slice_cols(u, 0, k);
        Tensor ub = slice_cols(u, k, d);
        Tensor in = concat_cols(ua, cond);
        Tensor s_raw = layer.s_net.forward(in);
        Tensor t_out = layer.t_net.forward(in);
        Tensor zb = Tensor::zeros({bsz, m});
        for (int b = 0; b < bsz; ++b)
            for (int j = 0; j < m; ++j) {
                double sd = c * std::tanh(static_cast<double>(s_raw.at(b, j)) / c);
                zb.at(b, j) = static_cast<float>(static_cast<double>(ub.at(b, j)) * std::exp(sd) +
                                                 static_cast<double>(t_out.at(b, j)));
                ld[b] += sd;
            }
        cur = concat_cols(ua, zb);
    }
    Tensor log_det = Tensor::zeros({bsz});
    for (int b = 0; b < bsz; ++b) log_det.at(b) = static_cast<float>(ld[b]);
    return {cur, log_det};
}

Tensor ConditionalFlow::inverse(const Tensor& z, const Tensor& cond) const {
    check_flow_input(z, cond, target_dim, cond_dim, "flow inverse");
    const int bsz = z.rows(), d = target_dim, k = split_point(), m = d - k;
    const double c = c_clamp;
    Tensor cur = z;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        const auto& layer = *it;
        Tensor ua = slice_cols(cur, 0, k);
        Tensor zb = slice_cols(cur, k, d);
        Tensor in = concat_cols(ua, cond);
        Tensor s_raw = layer.s_net.forward(in);
        Tensor t_out = layer.t_net.forward(in);
        Tensor ub = Tensor::zeros({bsz, m});
        for (int b = 0; b < bsz; ++b)
            for (int j = 0; j < m; ++j) {
                double sd = c * std::tanh(static_cast<double>(s_raw.at(b, j)) / c);
                ub.at(b, j) = static_cast<float>(
                    (static_cast<double>(zb.at(b, j)) - static_cast<double>(t_out.at(b, j))) *
                    std::exp(-sd));
            }
        cur = gather_cols(concat_cols(ua, ub), layer.inv_perm);
    }
    return cur;
}

Tensor ConditionalFlow::log_prob(const Tensor& theta, const Tensor& cond) const {
    auto [z, ld] = forward(theta, cond);
    const int bsz = theta.rows(), d = target_dim;
    const double half_log_2pi = 0.5 * std::log(2.0 * 3.14159265358979323846);
    Tensor out = Tensor::zeros({bsz});
    for (int b = 0; b < bsz; ++b) {
        double q = 0.0;
        for (int j = 0; j < d; ++j) q += static_cast<double>(z.at(b, j)) * z.at(b, j);
        out.at(b) = static_cast<float>(-d * half_log_2pi - 0.5 * q + ld.at(b));
    }
    return out;
}

Tensor ConditionalFlow::sample(const Tensor& cond, int n, Rng& rng) const {
    if (n < 1) throw DomainError("flow sample count must be >= 1");
    if (cond.rank() != 2 || cond.rows() != 1 || cond.cols() != cond_dim)
        throw ShapeError("flow sample expects a single condition row [1 x " +
                         std::to_string(cond_dim) + "], got " + shape_str(cond.shape));
    Tensor z = Tensor::zeros({n, target_dim});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    return inverse(z, repeat_rows(cond, n));
}

std::pair<Val, Val> ConditionalFlow::forward(Tape& tape, const Val* p, Val theta, Val cond) const {
    check_flow_input(value(theta), value(cond), target_dim, cond_dim, "flow forward");
    const int d = target_dim, k = split_point();
    const int per_net = layers.empty() ? 0 : layers[0].s_net.n_tensors();
    Val inv_c = tape.leaf(Tensor::scalar(1.0f / c_clamp));
    Val cc = tape.leaf(Tensor::scalar(c_clamp));
    Val cur = theta;
    Val ld;
    bool have_ld = false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const Val* s_p = p + 2 * l * per_net;
        const Val* t_p = s_p + per_net;
        Val u = gather_cols(cur, layer.perm);
        Val ua = slice_cols(u, 0, k);
        Val ub = slice_cols(u, k, d);
        Val in = concat_cols(ua, cond);
        Val s_raw = layer.s_net.forward(tape, s_p, in);
        Val t_out = layer.t_net.forward(tape, t_p, in);
        Val s_clamped = mul(flowinfer::tanh(mul(s_raw, inv_c)), cc);
        Val zb = add(mul(ub, flowinfer::exp(s_clamped)), t_out);
        Val contrib = sum(s_clamped, 1);
        ld = have_ld ? add(ld, contrib) : contrib;
        have_ld = true;
        cur = concat_cols(ua, zb);
    }
    if (!have_ld) ld = tape.leaf(Tensor::zeros({value(theta).rows()}));
    return {cur, ld};
}

Val ConditionalFlow::log_prob(Tape& tape, const Val* p, Val theta, Val cond) const {
    auto [z, ld] = forward(tape, p, theta, cond);
    const double half_log_2pi = 0.5 * std::log(2.0 * 3.14159265358979323846);
    Val q = sum(mul(z, z), 1);
    Val lp = add(mul(q, tape.leaf(Tensor::scalar(-0.5f))), ld);
    return add(lp, tape.leaf(Tensor::scalar(static_cast<float>(-target_dim * half_log_2pi))));
}

std::vector<Val> ConditionalFlow::bind(Tape& tape) const {
    std::vector<Val> out;
    for (const auto& l : layers) {
        auto s = l.s_net.bind(tape);
        auto t = l.t_net.bind(tape);
        out.insert(out.end(), s.begin(), s.end());
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

}  // namespace flowinfer
