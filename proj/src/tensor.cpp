#include "flowinfer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowinfer/errors.hpp"

namespace flowinfer {

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(const Shape& s) {
    return Tensor(s, std::vector<float>(shape_numel(s), 0.0f));
}

Tensor Tensor::full(const Shape& s, float v) {
    return Tensor(s, std::vector<float>(shape_numel(s), v));
}

Tensor Tensor::eye(int n) {
    Tensor t = zeros({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

namespace {

// Broadcast patterns accepted by binary elementwise ops.
enum class Bcast { Same, BScalar, AScalar, BRow, BCol };

Bcast resolve_bcast(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape == b.shape) return Bcast::Same;
    if (b.numel() == 1) return Bcast::BScalar;
    if (a.numel() == 1) return Bcast::AScalar;
    if (a.rank() == 2 && b.rank() == 2) {
        if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::BRow;
        if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::BCol;
    }
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* what, F f) {
    const Bcast k = resolve_bcast(a, b, what);
    if (k == Bcast::AScalar) {
        Tensor out = Tensor::zeros(b.shape);
        const double av = a.data[0];
        for (std::size_t i = 0; i < b.data.size(); ++i)
            out.data[i] = static_cast<float>(f(av, static_cast<double>(b.data[i])));
        return out;
    }
    Tensor out = Tensor::zeros(a.shape);
    switch (k) {
        case Bcast::Same:
            for (std::size_t i = 0; i < a.data.size(); ++i)
                out.data[i] = static_cast<float>(
                    f(static_cast<double>(a.data[i]), static_cast<double>(b.data[i])));
            break;
        case Bcast::BScalar: {
            const double bv = b.data[0];
            for (std::size_t i = 0; i < a.data.size(); ++i)
                out.data[i] = static_cast<float>(f(static_cast<double>(a.data[i]), bv));
            break;
        }
        case Bcast::BRow: {
            const int m = a.rows(), n = a.cols();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    out.at(i, j) = static_cast<float>(
                        f(static_cast<double>(a.at(i, j)), static_cast<double>(b.at(0, j))));
            break;
        }
        case Bcast::BCol: {
            const int m = a.rows(), n = a.cols();
            for (int i = 0; i < m; ++i) {
                const double bv = b.at(i, 0);
                for (int j = 0; j < n; ++j)
                    out.at(i, j) = static_cast<float>(f(static_cast<double>(a.at(i, j)), bv));
            }
            break;
        }
        case Bcast::AScalar:
            break;  // handled above
    }
    return out;
}

template <class F>
Tensor unary_op(const Tensor& x, F f) {
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = static_cast<float>(f(static_cast<double>(x.data[i])));
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul requires rank-2 tensors, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape) + " times " +
                         shape_str(b.shape));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = a.data.data() + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const float* brow = b.data.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        float* orow = out.data.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "div", [](double x, double y) { return x / y; });
}

Tensor neg(const Tensor& x) {
    return unary_op(x, [](double v) { return -v; });
}

Tensor exp(const Tensor& x) {
    return unary_op(x, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
    for (float v : x.data)
        if (!(v > 0.0f))
            throw DomainError("log of non-positive value " + std::to_string(v));
    return unary_op(x, [](double v) { return std::log(v); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(x, [](double v) { return std::tanh(v); });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor softplus(const Tensor& x) {
    // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails
    return unary_op(x, [](double v) {
        return (v > 0.0 ? v : 0.0) + std::log1p(std::exp(-std::fabs(v)));
    });
}

namespace {

void check_axis(const Tensor& x, int axis, const char* what) {
    if (axis < 0 || axis >= x.rank())
        throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(x.shape));
    if (x.rank() > 3) throw ShapeError(std::string(what) + ": rank > 3 unsupported");
}

Shape drop_axis(const Shape& s, int axis) {
    Shape out;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != axis) out.push_back(s[i]);
    if (out.empty()) out.push_back(1);
    return out;
}

// Iterate a rank<=3 tensor as (outer, axis_len, inner) around `axis`.
struct AxisView {
    std::size_t outer, len, inner;
};

AxisView axis_view(const Tensor& x, int axis) {
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.shape[i]);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(x.shape[i]);
    return {outer, static_cast<std::size_t>(x.shape[axis]), inner};
}

}  // namespace

Tensor sum(const Tensor& x, int axis) {
    check_axis(x, axis, "sum");
    const AxisView v = axis_view(x, axis);
    Tensor out = Tensor::zeros(drop_axis(x.shape, axis));
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            double acc = 0.0;
            for (std::size_t a = 0; a < v.len; ++a)
                acc += x.data[(o * v.len + a) * v.inner + in];
            out.data[o * v.inner + in] = static_cast<float>(acc);
        }
    return out;
}

Tensor mean(const Tensor& x, int axis) {
    check_axis(x, axis, "mean");
    if (x.shape[axis] == 0) throw DomainError("mean over empty axis");
    const AxisView v = axis_view(x, axis);
    Tensor out = Tensor::zeros(drop_axis(x.shape, axis));
    const double n = static_cast<double>(v.len);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            double acc = 0.0;
            for (std::size_t a = 0; a < v.len; ++a)
                acc += x.data[(o * v.len + a) * v.inner + in];
            out.data[o * v.inner + in] = static_cast<float>(acc / n);
        }
    return out;
}

Tensor max(const Tensor& x, int axis) {
    check_axis(x, axis, "max");
    if (x.shape[axis] == 0) throw DomainError("max over empty axis");
    const AxisView v = axis_view(x, axis);
    Tensor out = Tensor::zeros(drop_axis(x.shape, axis));
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            float best = x.data[(o * v.len) * v.inner + in];
            for (std::size_t a = 1; a < v.len; ++a)
                best = std::max(best, x.data[(o * v.len + a) * v.inner + in]);
            out.data[o * v.inner + in] = best;
        }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data) acc += v;
    return Tensor::scalar(static_cast<float>(acc));
}

Tensor mean_all(const Tensor& x) {
    if (x.numel() == 0) throw DomainError("mean of empty tensor");
    double acc = 0.0;
    for (float v : x.data) acc += v;
    return Tensor::scalar(static_cast<float>(acc / static_cast<double>(x.numel())));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
        throw ShapeError("concat_cols: incompatible shapes " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
    const int m = a.rows(), na = a.cols(), nb = b.cols();
    Tensor out = Tensor::zeros({m, na + nb});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < na; ++j) out.at(i, j) = a.at(i, j);
        for (int j = 0; j < nb; ++j) out.at(i, na + j) = b.at(i, j);
    }
    return out;
}

Tensor slice_cols(const Tensor& x, int j0, int j1) {
    if (x.rank() != 2 || j0 < 0 || j1 < j0 || j1 > x.cols())
        throw ShapeError("slice_cols: invalid range [" + std::to_string(j0) + "," +
                         std::to_string(j1) + ") for shape " + shape_str(x.shape));
    const int m = x.rows(), n = j1 - j0;
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j0 + j);
    return out;
}

Tensor gather_cols(const Tensor& x, const std::vector<int>& idx) {
    if (x.rank() != 2) throw ShapeError("gather_cols requires rank-2, got " + shape_str(x.shape));
    for (int j : idx)
        if (j < 0 || j >= x.cols())
            throw ShapeError("gather_cols: index " + std::to_string(j) + " out of range for " +
                             shape_str(x.shape));
    const int m = x.rows(), n = static_cast<int>(idx.size());
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, idx[j]);
    return out;
}

Tensor repeat_rows(const Tensor& x, int times) {
    if (x.rank() != 2 || times < 1)
        throw ShapeError("repeat_rows: need rank-2 tensor and times >= 1");
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m * times, n});
    for (int i = 0; i < m; ++i)
        for (int r = 0; r < times; ++r)
            for (int j = 0; j < n; ++j) out.at(i * times + r, j) = x.at(i, j);
    return out;
}

Tensor reshape(const Tensor& x, const Shape& s) {
    if (shape_numel(s) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
    Tensor out = x;
    out.shape = s;
    return out;
}

}  // namespace flowinfer
