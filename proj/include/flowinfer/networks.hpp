#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flowinfer/rng.hpp"
#include "flowinfer/tape.hpp"
#include "flowinfer/tensor.hpp"

namespace flowinfer {

enum class Activation { Tanh, Relu };
enum class Pooling { Mean, Sum, Max };

Activation activation_from_string(const std::string& s);
Pooling pooling_from_string(const std::string& s);

// Fully connected net: affine -> activation per hidden layer, linear output.
// Parameters live here as plain tensors; a training pass binds them onto a
// tape with bind() and runs the taped forward against those leaves.
struct Mlp {
    std::vector<int> widths;  // {in, hidden..., out}
    Activation activation = Activation::Tanh;
    std::vector<Tensor> weights;  // widths[i] x widths[i+1]
    std::vector<Tensor> biases;   // 1 x widths[i+1]

    Mlp() = default;
    Mlp(std::vector<int> w, Activation act);

    // Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases. zero_final
    // zeroes the last layer entirely (identity start for flows).
    void init(Rng& rng, bool zero_final = false);

    int in_dim() const { return widths.front(); }
    int out_dim() const { return widths.back(); }
    int n_tensors() const { return 2 * static_cast<int>(widths.size() - 1); }

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    std::vector<std::string> param_names(const std::string& prefix) const;

    Tensor forward(const Tensor& x) const;
    // p: bound leaves in params() order (w0,b0,w1,b1,...), starting at p[0]
    Val forward(Tape& tape, const Val* p, Val x) const;
    std::vector<Val> bind(Tape& tape) const;
};

// Permutation-invariant set embedding: rho(pool(phi(x_i))).
struct SummaryNetwork {
    Mlp phi;
    Mlp rho;
    Pooling pooling = Pooling::Mean;

    SummaryNetwork() = default;
    SummaryNetwork(int obs_dim, int embedding_dim, Pooling pool,
                   const std::vector<int>& phi_hidden, const std::vector<int>& rho_hidden,
                   Activation act);
    void init(Rng& rng);

    int obs_dim() const { return phi.in_dim(); }
    int embedding_dim() const { return rho.out_dim(); }

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    std::vector<std::string> param_names(const std::string& prefix) const;

    // set_x: [batch x set_size x obs_dim] -> [batch x embedding_dim]
    Tensor embed(const Tensor& set_x) const;
    Val embed(Tape& tape, const Val* p, Val set_x) const;
    std::vector<Val> bind(Tape& tape) const;
};

// One affine coupling step: permute, split at ceil(d/2), scale/shift the
// second half conditioned on the first half and the external condition.
struct CouplingLayer {
    std::vector<int> perm;      // u[j] = theta[perm[j]]
    std::vector<int> inv_perm;  // theta[i] = u[inv_perm[i]]
    Mlp s_net;
    Mlp t_net;
};

struct FlowConfig {
    int n_layers = 6;
    std::vector<int> hidden = {64, 64};
    float c_clamp = 1.9f;
    Activation activation = Activation::Tanh;
};

// Conditional affine-coupling flow with a standard-normal base.
struct ConditionalFlow {
    int target_dim = 0;
    int cond_dim = 0;
    float c_clamp = 1.9f;
    std::vector<CouplingLayer> layers;

    ConditionalFlow() = default;
    // Seeded construction; permutations are re-drawn (bounded attempts) until
    // every target dimension is transformed by at least one layer.
    ConditionalFlow(int target_dim, int cond_dim, const FlowConfig& cfg, Rng& rng);

    int split_point() const { return (target_dim + 1) / 2; }

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    std::vector<std::string> param_names(const std::string& prefix) const;

    // forward: theta -> (z, log_det), log_det[b] = sum of clamped scales.
    std::pair<Tensor, Tensor> forward(const Tensor& theta, const Tensor& cond) const;
    Tensor inverse(const Tensor& z, const Tensor& cond) const;
    // log N(z; 0, I) + log_det, one value per row
    Tensor log_prob(const Tensor& theta, const Tensor& cond) const;
    // cond is a single row [1 x c]; returns [n x target_dim]
    Tensor sample(const Tensor& cond, int n, Rng& rng) const;

    // Taped variants; p: bound leaves in params() order.
    std::pair<Val, Val> forward(Tape& tape, const Val* p, Val theta, Val cond) const;
    Val log_prob(Tape& tape, const Val* p, Val theta, Val cond) const;
    std::vector<Val> bind(Tape& tape) const;
};

}  // namespace flowinfer
