#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// A named learnable tensor. Gradients accumulate additively into `grad`
// across backward passes until zero_grad is called. An update step may only
// change `value` when `trainable` is set; frozen parameters also stay out of
// the backward sweep entirely, so their grads remain untouched zeros.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad() { grad.fill(0.0); }
};

// Owns parameters with unique names. std::map keeps iteration order sorted,
// which makes checkpoints byte-stable.
class ParameterStore {
public:
    Parameter& create(const std::string& name, Tensor init, bool trainable = true);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    void zero_grads();
    void set_trainable_by_prefix(const std::string& prefix, bool trainable);
    int64_t total_elements() const;
    size_t size() const { return params_.size(); }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Parameter> params_;
};

enum class Op : uint8_t {
    leaf,
    constant,
    add,
    add_row,
    add_col,
    add_scalar,
    affine,
    mul,
    mul_scalar,
    matmul,
    matmul_nt,
    transpose,
    relu,
    gelu,
    sigmoid,
    softmax_rows,
    layer_norm_rows,
    l2_normalize_rows,
    max_axis0,
    max_axis1,
    sum_axis0,
    sum_axis1,
    mean_axis0,
    mean_axis1,
    sum_all,
    concat_rows,
    concat_cols,
    slice_rows,
    slice_cols,
    reshape,
    gather_rows,
    diag,
    element,
};

const char* op_name(Op op);

class Tape;

// Handle to a tape node. Cheap to copy; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    int32_t id = -1;

    const Tensor& value() const;
    const Tensor* grad() const;
};

class Tape {
public:
    // check_finite: every op output is scanned and a NumericError raised on
    // NaN/Inf. On for training and gradient checks.
    explicit Tape(bool check_finite = true);

    Var leaf(Parameter& p);
    Var constant(Tensor t);

    void backward(Var loss);

    const Tensor& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor* grad(int32_t id) const;

    size_t size() const { return nodes_.size(); }
    bool checks_finite() const { return check_finite_; }

    // Count of rows l2_normalize mapped to zero (zero-input flag).
    int64_t zero_norm_rows() const { return zero_norm_rows_; }
    void note_zero_norm_row() { ++zero_norm_rows_; }

    struct NodeInfo {
        Op op;
        bool needs_grad;
        const Tensor* value;
        const Tensor* grad;  // null unless backward touched it
    };
    NodeInfo node_info(int32_t id) const;

private:
    friend Var make_node(Tape& tape, Op op, Tensor value, std::vector<int32_t> parents, std::vector<int64_t> iaux,
                         std::vector<double> daux);
    struct Node {
        Tensor value;
        Tensor grad;
        Op op = Op::constant;
        bool needs_grad = false;
        bool grad_live = false;
        Parameter* param = nullptr;
        std::vector<int32_t> parents;
        std::vector<int64_t> iaux;
        std::vector<double> daux;
    };

    void backward_node(Node& node);
    Tensor& ensure_grad(int32_t id);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int32_t> leaf_cache_;
    bool check_finite_ = true;
    int64_t zero_norm_rows_ = 0;
};

// ---- op builders ------------------------------------------------------

// Broadcasting add: same shape, matrix + row vector, or either side scalar.
Var add(Var a, Var b);
// out[i][j] = a[i][j] + v[i]  (broadcast down columns)
Var add_cols(Var a, Var v);
Var sub(Var a, Var b);
// s*a + c, constants
Var affine(Var a, double s, double c);
Var neg(Var a);
// Elementwise: same shape, or either side scalar.
Var mul(Var a, Var b);

Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T
Var transpose(Var a);

Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);  // rank 1 treated as a single row
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var l2_normalize_rows(Var a);

Var max_axis(Var a, int axis);
Var sum_axis(Var a, int axis);
Var mean_axis(Var a, int axis);
Var sum_all(Var a);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, int64_t r0, int64_t r1);
Var slice_cols(Var a, int64_t c0, int64_t c1);
Var reshape(Var a, std::vector<int64_t> shape);
Var gather_rows(Var table, std::vector<int64_t> indices);
Var diag(Var a);              // square matrix -> vector
Var element(Var v, int64_t i);  // rank-1 -> scalar

// x [k] or [m x k], weight [k x n], bias [n]
Var linear(Var x, Var weight, Var bias);

inline Var operator+(Var a, Var b) {
    return add(a, b);
}
inline Var operator-(Var a, Var b) {
    return sub(a, b);
}
inline Var operator*(Var a, Var b) {
    return mul(a, b);
}

}  // namespace mmfuse
