#pragma once

#include <functional>
#include <vector>

#include "flowinfer/tensor.hpp"

namespace flowinfer {

class Tape;

// Handle to a value recorded on a tape.
struct Val {
    Tape* tape = nullptr;
    int id = -1;
};

// Define-by-run reverse-mode tape. Rebuilt per forward pass; single-threaded.
class Tape {
public:
    enum class Op {
        Leaf,
        Matmul,
        Add,
        Sub,
        Mul,
        Neg,
        Exp,
        Log,
        Tanh,
        Relu,
        Softplus,
        Sum,
        Mean,
        Max,
        SumAll,
        MeanAll,
        Concat,
        SliceCols,
        GatherCols,
        RepeatRows,
        Reshape
    };

    struct Node {
        Op op = Op::Leaf;
        int a = -1;
        int b = -1;
        Tensor value;
        int axis = -1;
        int j0 = 0;            // slice start
        int times = 1;         // row repeat count
        std::vector<int> idx;  // gather indices / saved argmax positions
    };

    Val leaf(Tensor v);
    const Tensor& value(Val v) const { return nodes_[v.id].value; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar output. Returns one gradient per input, in
    // order, each shaped like the input; inputs that do not influence the
    // output get zeros. Does not mutate the tape.
    std::vector<Tensor> gradients(Val output, const std::vector<Val>& inputs) const;

    Val emit(Node n);
    const Node& node(int id) const { return nodes_[id]; }

private:
    std::vector<Node> nodes_;
};

Val matmul(Val a, Val b);
Val add(Val a, Val b);
Val sub(Val a, Val b);
Val mul(Val a, Val b);
Val neg(Val x);
Val exp(Val x);
Val log(Val x);
Val tanh(Val x);
Val relu(Val x);
Val softplus(Val x);
Val sum(Val x, int axis);
Val mean(Val x, int axis);
Val max(Val x, int axis);
Val sum_all(Val x);
Val mean_all(Val x);
Val concat_cols(Val a, Val b);
Val slice_cols(Val x, int j0, int j1);
Val gather_cols(Val x, const std::vector<int>& idx);
Val repeat_rows(Val x, int times);
Val reshape(Val x, const Shape& s);

inline const Tensor& value(Val v) { return v.tape->value(v); }

Tensor transpose(const Tensor& x);

// Max relative error between reverse-mode and central-difference gradients:
// max_i |ad_i - fd_i| / (|fd_i| + 1e-8). `f` must map a leaf to a scalar.
double finite_difference_check(const std::function<Val(Tape&, Val)>& f, const Tensor& x,
                               double h);

}  // namespace flowinfer
