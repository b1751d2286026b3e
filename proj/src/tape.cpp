#include "flowinfer/tape.hpp"

#include <cmath>

#include "flowinfer/errors.hpp"

namespace flowinfer {

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose requires rank-2, got " + shape_str(x.shape));
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    return out;
}

Val Tape::leaf(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return emit(std::move(n));
}

Val Tape::emit(Node n) {
    nodes_.push_back(std::move(n));
    return Val{this, static_cast<int>(nodes_.size()) - 1};
}

namespace {

Tape& same_tape(Val a, Val b, const char* what) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw ContractError(std::string(what) + ": operands live on different tapes");
    return *a.tape;
}

Tape::Node make(Tape::Op op, int a, int b, Tensor v) {
    Tape::Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(v);
    return n;
}

}  // namespace

Val matmul(Val a, Val b) {
    Tape& t = same_tape(a, b, "matmul");
    return t.emit(make(Tape::Op::Matmul, a.id, b.id, matmul(value(a), value(b))));
}

Val add(Val a, Val b) {
    Tape& t = same_tape(a, b, "add");
    return t.emit(make(Tape::Op::Add, a.id, b.id, add(value(a), value(b))));
}

Val sub(Val a, Val b) {
    Tape& t = same_tape(a, b, "sub");
    return t.emit(make(Tape::Op::Sub, a.id, b.id, sub(value(a), value(b))));
}

Val mul(Val a, Val b) {
    Tape& t = same_tape(a, b, "mul");
    return t.emit(make(Tape::Op::Mul, a.id, b.id, mul(value(a), value(b))));
}

namespace {

Val unary(Tape::Op op, Val x, Tensor v) {
    return x.tape->emit(make(op, x.id, -1, std::move(v)));
}

}  // namespace

Val neg(Val x) { return unary(Tape::Op::Neg, x, neg(value(x))); }
Val exp(Val x) { return unary(Tape::Op::Exp, x, exp(value(x))); }
Val log(Val x) { return unary(Tape::Op::Log, x, log(value(x))); }
Val tanh(Val x) { return unary(Tape::Op::Tanh, x, tanh(value(x))); }
Val relu(Val x) { return unary(Tape::Op::Relu, x, relu(value(x))); }
Val softplus(Val x) { return unary(Tape::Op::Softplus, x, softplus(value(x))); }

Val sum(Val x, int axis) {
    Tape::Node n = make(Tape::Op::Sum, x.id, -1, sum(value(x), axis));
    n.axis = axis;
    return x.tape->emit(std::move(n));
}

Val mean(Val x, int axis) {
    Tape::Node n = make(Tape::Op::Mean, x.id, -1, mean(value(x), axis));
    n.axis = axis;
    return x.tape->emit(std::move(n));
}

namespace {

// Flat (outer, inner) decomposition around one axis; shared with backward.
struct AxisDims {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisDims axis_dims(const Shape& s, int axis) {
    AxisDims d;
    for (int i = 0; i < axis; ++i) d.outer *= static_cast<std::size_t>(s[i]);
    d.len = static_cast<std::size_t>(s[axis]);
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i)
        d.inner *= static_cast<std::size_t>(s[i]);
    return d;
}

}  // namespace

Val max(Val x, int axis) {
    Tensor v = max(value(x), axis);
    Tape::Node n = make(Tape::Op::Max, x.id, -1, std::move(v));
    n.axis = axis;
    const Tensor& xv = value(x);
    const AxisDims d = axis_dims(xv.shape, axis);
    n.idx.resize(d.outer * d.inner);
    for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t in = 0; in < d.inner; ++in) {
            std::size_t best = 0;
            float bv = xv.data[(o * d.len) * d.inner + in];
            for (std::size_t a = 1; a < d.len; ++a) {
                const float cur = xv.data[(o * d.len + a) * d.inner + in];
                if (cur > bv) {
                    bv = cur;
                    best = a;
                }
            }
            n.idx[o * d.inner + in] = static_cast<int>(best);
        }
    return x.tape->emit(std::move(n));
}

Val sum_all(Val x) { return unary(Tape::Op::SumAll, x, sum_all(value(x))); }
Val mean_all(Val x) { return unary(Tape::Op::MeanAll, x, mean_all(value(x))); }

Val concat_cols(Val a, Val b) {
    Tape& t = same_tape(a, b, "concat_cols");
    return t.emit(make(Tape::Op::Concat, a.id, b.id, concat_cols(value(a), value(b))));
}

Val slice_cols(Val x, int j0, int j1) {
    Tape::Node n = make(Tape::Op::SliceCols, x.id, -1, slice_cols(value(x), j0, j1));
    n.j0 = j0;
    return x.tape->emit(std::move(n));
}

Val gather_cols(Val x, const std::vector<int>& idx) {
    Tape::Node n = make(Tape::Op::GatherCols, x.id, -1, gather_cols(value(x), idx));
    n.idx = idx;
    return x.tape->emit(std::move(n));
}

Val repeat_rows(Val x, int times) {
    Tape::Node n = make(Tape::Op::RepeatRows, x.id, -1, repeat_rows(value(x), times));
    n.times = times;
    return x.tape->emit(std::move(n));
}

Val reshape(Val x, const Shape& s) {
    return x.tape->emit(make(Tape::Op::Reshape, x.id, -1, reshape(value(x), s)));
}

namespace {

// Sum a gradient down to a broadcast operand's shape.
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape == target) return g;
    if (shape_numel(target) == 1) {
        Tensor out = sum_all(g);
        out.shape = target;
        return out;
    }
    // row [1xn] or column [mx1] broadcast
    if (target.size() == 2 && g.rank() == 2) {
        if (target[0] == 1 && target[1] == g.cols()) return reshape(sum(g, 0), target);
        if (target[1] == 1 && target[0] == g.rows()) return reshape(sum(g, 1), target);
    }
    throw ShapeError("cannot reduce gradient " + shape_str(g.shape) + " to " + shape_str(target));
}

void accumulate(std::vector<Tensor>& bars, std::vector<char>& seeded, int id, Tensor g) {
    if (!seeded[id]) {
        bars[id] = std::move(g);
        seeded[id] = 1;
    } else {
        Tensor& bar = bars[id];
        for (std::size_t i = 0; i < bar.data.size(); ++i)
            bar.data[i] += g.data[i];
    }
}

}  // namespace

std::vector<Tensor> Tape::gradients(Val output, const std::vector<Val>& inputs) const {
    if (output.tape != this) throw ContractError("gradients: output from a different tape");
    if (nodes_[output.id].value.numel() != 1)
        throw ContractError("gradients: output is not scalar, shape " +
                            shape_str(nodes_[output.id].value.shape));
    for (const Val& v : inputs)
        if (v.tape != this) throw ContractError("gradients: input from a different tape");

    std::vector<Tensor> bars(nodes_.size());
    std::vector<char> seeded(nodes_.size(), 0);
    {
        Tensor one = nodes_[output.id].value;
        for (float& x : one.data) x = 1.0f;
        bars[output.id] = std::move(one);
        seeded[output.id] = 1;
    }

    for (int i = output.id; i >= 0; --i) {
        if (!seeded[i]) continue;
        const Node& n = nodes_[i];
        const Tensor& g = bars[i];
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Matmul:
                accumulate(bars, seeded, n.a, matmul(g, transpose(nodes_[n.b].value)));
                accumulate(bars, seeded, n.b, matmul(transpose(nodes_[n.a].value), g));
                break;
            case Op::Add:
                accumulate(bars, seeded, n.a, reduce_to_shape(g, nodes_[n.a].value.shape));
                accumulate(bars, seeded, n.b, reduce_to_shape(g, nodes_[n.b].value.shape));
                break;
            case Op::Sub:
                accumulate(bars, seeded, n.a, reduce_to_shape(g, nodes_[n.a].value.shape));
                accumulate(bars, seeded, n.b, reduce_to_shape(neg(g), nodes_[n.b].value.shape));
                break;
            case Op::Mul:
                accumulate(bars, seeded, n.a,
                           reduce_to_shape(mul(g, nodes_[n.b].value), nodes_[n.a].value.shape));
                accumulate(bars, seeded, n.b,
                           reduce_to_shape(mul(g, nodes_[n.a].value), nodes_[n.b].value.shape));
                break;
            case Op::Neg:
                accumulate(bars, seeded, n.a, neg(g));
                break;
            case Op::Exp: {
                Tensor ga = g;  // g * exp(x) with exp(x) = saved output
                for (std::size_t k = 0; k < ga.data.size(); ++k)
                    ga.data[k] = static_cast<float>(static_cast<double>(ga.data[k]) *
                                                    static_cast<double>(n.value.data[k]));
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Log: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga = g;
                for (std::size_t k = 0; k < ga.data.size(); ++k)
                    ga.data[k] = static_cast<float>(static_cast<double>(ga.data[k]) /
                                                    static_cast<double>(x.data[k]));
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Tanh: {
                Tensor ga = g;
                for (std::size_t k = 0; k < ga.data.size(); ++k) {
                    const double y = n.value.data[k];
                    ga.data[k] = static_cast<float>(static_cast<double>(ga.data[k]) * (1.0 - y * y));
                }
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Relu: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga = g;
                for (std::size_t k = 0; k < ga.data.size(); ++k)
                    if (!(x.data[k] > 0.0f)) ga.data[k] = 0.0f;  // adjoint at 0 is 0
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Softplus: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga = g;
                for (std::size_t k = 0; k < ga.data.size(); ++k) {
                    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x.data[k])));
                    ga.data[k] = static_cast<float>(static_cast<double>(ga.data[k]) * s);
                }
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                const Tensor& x = nodes_[n.a].value;
                const AxisDims d = axis_dims(x.shape, n.axis);
                const double scale = n.op == Op::Mean ? 1.0 / static_cast<double>(d.len) : 1.0;
                Tensor ga = Tensor::zeros(x.shape);
                for (std::size_t o = 0; o < d.outer; ++o)
                    for (std::size_t a = 0; a < d.len; ++a)
                        for (std::size_t in = 0; in < d.inner; ++in)
                            ga.data[(o * d.len + a) * d.inner + in] = static_cast<float>(
                                static_cast<double>(g.data[o * d.inner + in]) * scale);
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Max: {
                const Tensor& x = nodes_[n.a].value;
                const AxisDims d = axis_dims(x.shape, n.axis);
                Tensor ga = Tensor::zeros(x.shape);
                for (std::size_t o = 0; o < d.outer; ++o)
                    for (std::size_t in = 0; in < d.inner; ++in) {
                        const std::size_t a = static_cast<std::size_t>(n.idx[o * d.inner + in]);
                        ga.data[(o * d.len + a) * d.inner + in] = g.data[o * d.inner + in];
                    }
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::SumAll:
            case Op::MeanAll: {
                const Tensor& x = nodes_[n.a].value;
                const double scale =
                    n.op == Op::MeanAll ? 1.0 / static_cast<double>(x.numel()) : 1.0;
                Tensor ga = Tensor::full(x.shape, static_cast<float>(g.data[0] * scale));
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Concat: {
                const int na = nodes_[n.a].value.cols();
                accumulate(bars, seeded, n.a, slice_cols(g, 0, na));
                accumulate(bars, seeded, n.b, slice_cols(g, na, g.cols()));
                break;
            }
            case Op::SliceCols: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga = Tensor::zeros(x.shape);
                for (int r = 0; r < g.rows(); ++r)
                    for (int c = 0; c < g.cols(); ++c) ga.at(r, n.j0 + c) = g.at(r, c);
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::GatherCols: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga = Tensor::zeros(x.shape);
                for (int r = 0; r < g.rows(); ++r)
                    for (int c = 0; c < g.cols(); ++c) ga.at(r, n.idx[c]) += g.at(r, c);
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::RepeatRows: {
                const Tensor& x = nodes_[n.a].value;
                Tensor ga = Tensor::zeros(x.shape);
                for (int r = 0; r < x.rows(); ++r)
                    for (int c = 0; c < x.cols(); ++c) {
                        double acc = 0.0;
                        for (int k = 0; k < n.times; ++k) acc += g.at(r * n.times + k, c);
                        ga.at(r, c) = static_cast<float>(acc);
                    }
                accumulate(bars, seeded, n.a, std::move(ga));
                break;
            }
            case Op::Reshape:
                accumulate(bars, seeded, n.a, reshape(g, nodes_[n.a].value.shape));
                break;
        }
    }

    std::vector<Tensor> out;
    out.reserve(inputs.size());
    for (const Val& v : inputs) {
        if (seeded[v.id])
            out.push_back(bars[v.id]);
        else
            out.push_back(Tensor::zeros(nodes_[v.id].value.shape));
    }
    return out;
}

double finite_difference_check(const std::function<Val(Tape&, Val)>& f, const Tensor& x,
                               double h) {
    Tensor grad_ad;
    {
        Tape tape;
        Val xv = tape.leaf(x);
        Val y = f(tape, xv);
        grad_ad = tape.gradients(y, {xv})[0];
    }
    auto eval = [&](const Tensor& p) {
        Tape tape;
        Val xv = tape.leaf(p);
        Val y = f(tape, xv);
        if (value(y).numel() != 1) throw ContractError("finite_difference_check: f not scalar");
        return static_cast<double>(value(y).data[0]);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        Tensor xp = x, xm = x;
        xp.data[i] = static_cast<float>(static_cast<double>(x.data[i]) + h);
        xm.data[i] = static_cast<float>(static_cast<double>(x.data[i]) - h);
        // use the realized float step to cancel representation error
        const double denom = static_cast<double>(xp.data[i]) - static_cast<double>(xm.data[i]);
        const double fd = (eval(xp) - eval(xm)) / denom;
        const double ad = grad_ad.data[i];
        const double err = std::fabs(ad - fd) / (std::fabs(fd) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace flowinfer
