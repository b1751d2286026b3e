#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowinfer {

using Shape = std::vector<int>;

// Dense row-major tensor of 32-bit floats. Interior arithmetic accumulates
// in double where it matters (matmul, reductions); storage stays float.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<float> d);

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, float v);
    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    static Tensor eye(int n);

    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t numel() const { return data.size(); }

    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    float& at(int i) { return data[static_cast<std::size_t>(i)]; }
    float at(int i) const { return data[static_cast<std::size_t>(i)]; }
    float& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    float at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }
    float& at(int b, int i, int j) {
        return data[(static_cast<std::size_t>(b) * shape[1] + i) * shape[2] + j];
    }
    float at(int b, int i, int j) const {
        return data[(static_cast<std::size_t>(b) * shape[1] + i) * shape[2] + j];
    }

    bool all_finite() const;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Shape checks throw ShapeError naming both shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// -- plain (untaped) tensor math ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);

// Reductions drop the reduced axis (rank <= 3). sum/mean over the whole
// tensor return a scalar-shaped {1} tensor.
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor max(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, int j0, int j1);
Tensor gather_cols(const Tensor& x, const std::vector<int>& idx);
Tensor repeat_rows(const Tensor& x, int times);
Tensor reshape(const Tensor& x, const Shape& s);

}  // namespace flowinfer
