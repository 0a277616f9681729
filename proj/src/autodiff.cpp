#include "mmfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mmfuse/error.hpp"
#include "mmfuse/kernels/kernels.hpp"

namespace mmfuse {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

[[noreturn]] void shape_fail(Op op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

[[noreturn]] void shape_fail(Op op, const Tensor& a, const std::string& detail) {
    throw ShapeError(std::string(op_name(op)) + ": " + detail + " (got " + a.shape_str() + ")");
}

bool is_scalar(const Tensor& t) {
    return t.rank() == 0;
}

// dst[i] += a[i] * b[i]; fused backward glue.
void acc_prod(double* dst, const double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        dst[i] += a[i] * b[i];
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::add: return "add";
        case Op::add_row: return "add_row";
        case Op::add_col: return "add_col";
        case Op::add_scalar: return "add_scalar";
        case Op::affine: return "affine";
        case Op::mul: return "mul";
        case Op::mul_scalar: return "mul_scalar";
        case Op::matmul: return "matmul";
        case Op::matmul_nt: return "matmul_nt";
        case Op::transpose: return "transpose";
        case Op::relu: return "relu";
        case Op::gelu: return "gelu";
        case Op::sigmoid: return "sigmoid";
        case Op::softmax_rows: return "softmax_rows";
        case Op::layer_norm_rows: return "layer_norm_rows";
        case Op::l2_normalize_rows: return "l2_normalize_rows";
        case Op::max_axis0: return "max_axis0";
        case Op::max_axis1: return "max_axis1";
        case Op::sum_axis0: return "sum_axis0";
        case Op::sum_axis1: return "sum_axis1";
        case Op::mean_axis0: return "mean_axis0";
        case Op::mean_axis1: return "mean_axis1";
        case Op::sum_all: return "sum_all";
        case Op::concat_rows: return "concat_rows";
        case Op::concat_cols: return "concat_cols";
        case Op::slice_rows: return "slice_rows";
        case Op::slice_cols: return "slice_cols";
        case Op::reshape: return "reshape";
        case Op::gather_rows: return "gather_rows";
        case Op::diag: return "diag";
        case Op::element: return "element";
    }
    return "?";
}

// ---- ParameterStore ----------------------------------------------------

Parameter& ParameterStore::create(const std::string& name, Tensor init, bool trainable) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    Parameter& p = it->second;
    p.name = name;
    p.grad = Tensor::zeros(init.shape());
    p.value = std::move(init);
    p.trainable = trainable;
    return p;
}

Parameter* ParameterStore::find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) {
        throw ConfigError("unknown parameter '" + name + "'");
    }
    return *p;
}

void ParameterStore::zero_grads() {
    for (auto& [name, p] : params_) {
        p.zero_grad();
    }
}

void ParameterStore::set_trainable_by_prefix(const std::string& prefix, bool trainable) {
    for (auto& [name, p] : params_) {
        if (name.rfind(prefix, 0) == 0) {
            p.trainable = trainable;
        }
    }
}

int64_t ParameterStore::total_elements() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_) {
        n += p.value.numel();
    }
    return n;
}

// ---- Tape --------------------------------------------------------------

Tape::Tape(bool check_finite) : check_finite_(check_finite) {
    nodes_.reserve(1024);
}

const Tensor& Var::value() const {
    return tape->value(id);
}

const Tensor* Var::grad() const {
    return tape->grad(id);
}

const Tensor* Tape::grad(int32_t id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.grad_live ? &n.grad : nullptr;
}

Tape::NodeInfo Tape::node_info(int32_t id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return NodeInfo{n.op, n.needs_grad, &n.value, n.grad_live ? &n.grad : nullptr};
}

Var make_node(Tape& tape, Op op, Tensor value, std::vector<int32_t> parents, std::vector<int64_t> iaux,
              std::vector<double> daux) {
    if (tape.check_finite_ && !value.all_finite()) {
        throw NumericError(std::string(op_name(op)) + " produced a non-finite value, output shape " +
                           value.shape_str());
    }
    Tape::Node node;
    node.op = op;
    node.value = std::move(value);
    node.parents = std::move(parents);
    node.iaux = std::move(iaux);
    node.daux = std::move(daux);
    node.needs_grad = false;
    for (int32_t pid : node.parents) {
        if (tape.nodes_[static_cast<size_t>(pid)].needs_grad) {
            node.needs_grad = true;
            break;
        }
    }
    tape.nodes_.push_back(std::move(node));
    return Var{&tape, static_cast<int32_t>(tape.nodes_.size() - 1)};
}

Var Tape::leaf(Parameter& p) {
    auto it = leaf_cache_.find(&p);
    if (it != leaf_cache_.end()) {
        return Var{this, it->second};
    }
    Node node;
    node.op = Op::leaf;
    node.value = p.value;
    node.param = &p;
    node.needs_grad = p.trainable;
    nodes_.push_back(std::move(node));
    int32_t id = static_cast<int32_t>(nodes_.size() - 1);
    leaf_cache_.emplace(&p, id);
    return Var{this, id};
}

Var Tape::constant(Tensor t) {
    Node node;
    node.op = Op::constant;
    node.value = std::move(t);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::ensure_grad(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_live = true;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) {
        throw ShapeError("backward: loss belongs to a different tape");
    }
    Node& loss_node = nodes_[static_cast<size_t>(loss.id)];
    if (loss_node.value.numel() != 1 || loss_node.value.rank() > 1) {
        throw ShapeError("backward: loss must be a scalar, got " + loss_node.value.shape_str());
    }
    if (!loss_node.needs_grad) {
        return;  // nothing trainable reachable; no gradients written
    }
    for (Node& n : nodes_) {
        n.grad_live = false;
    }
    ensure_grad(loss.id).fill(1.0);
    for (int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.needs_grad || !n.grad_live) {
            continue;
        }
        backward_node(n);
    }
}

void Tape::backward_node(Node& node) {
    const auto& K = kernels::active();
    const Tensor& g = node.grad;
    auto parent_value = [&](size_t k) -> const Tensor& { return nodes_[static_cast<size_t>(node.parents[k])].value; };
    auto parent_needs = [&](size_t k) { return nodes_[static_cast<size_t>(node.parents[k])].needs_grad; };
    auto parent_grad = [&](size_t k) -> Tensor& { return ensure_grad(node.parents[k]); };

    switch (node.op) {
        case Op::leaf: {
            if (node.param && node.param->trainable) {
                K.axpy(1.0, g.data(), node.param->grad.data(), static_cast<size_t>(g.numel()));
            }
            break;
        }
        case Op::constant:
            break;
        case Op::add: {
            for (size_t k = 0; k < 2; ++k) {
                if (parent_needs(k)) {
                    K.axpy(1.0, g.data(), parent_grad(k).data(), static_cast<size_t>(g.numel()));
                }
            }
            break;
        }
        case Op::add_row: {
            if (parent_needs(0)) {
                K.axpy(1.0, g.data(), parent_grad(0).data(), static_cast<size_t>(g.numel()));
            }
            if (parent_needs(1)) {
                Tensor& gv = parent_grad(1);
                const int64_t m = g.rows(), n = g.cols();
                for (int64_t i = 0; i < m; ++i) {
                    K.axpy(1.0, g.row(i), gv.data(), static_cast<size_t>(n));
                }
            }
            break;
        }
        case Op::add_col: {
            if (parent_needs(0)) {
                K.axpy(1.0, g.data(), parent_grad(0).data(), static_cast<size_t>(g.numel()));
            }
            if (parent_needs(1)) {
                Tensor& gv = parent_grad(1);
                const int64_t m = g.rows(), n = g.cols();
                for (int64_t i = 0; i < m; ++i) {
                    gv.at(i) += K.sum(g.row(i), static_cast<size_t>(n));
                }
            }
            break;
        }
        case Op::add_scalar: {
            if (parent_needs(0)) {
                K.axpy(1.0, g.data(), parent_grad(0).data(), static_cast<size_t>(g.numel()));
            }
            if (parent_needs(1)) {
                parent_grad(1).at(0) += K.sum(g.data(), static_cast<size_t>(g.numel()));
            }
            break;
        }
        case Op::affine: {
            if (parent_needs(0)) {
                K.axpy(node.daux[0], g.data(), parent_grad(0).data(), static_cast<size_t>(g.numel()));
            }
            break;
        }
        case Op::mul: {
            if (parent_needs(0)) {
                acc_prod(parent_grad(0).data(), g.data(), parent_value(1).data(), static_cast<size_t>(g.numel()));
            }
            if (parent_needs(1)) {
                acc_prod(parent_grad(1).data(), g.data(), parent_value(0).data(), static_cast<size_t>(g.numel()));
            }
            break;
        }
        case Op::mul_scalar: {
            const double s = parent_value(1).at(0);
            if (parent_needs(0)) {
                K.axpy(s, g.data(), parent_grad(0).data(), static_cast<size_t>(g.numel()));
            }
            if (parent_needs(1)) {
                parent_grad(1).at(0) +=
                    K.dot(g.data(), parent_value(0).data(), static_cast<size_t>(g.numel()));
            }
            break;
        }
        case Op::matmul: {
            const Tensor& a = parent_value(0);
            const Tensor& b = parent_value(1);
            const size_t m = static_cast<size_t>(a.rows());
            const size_t k = static_cast<size_t>(a.cols());
            const size_t n = static_cast<size_t>(b.cols());
            if (parent_needs(0)) {
                K.matmul_nt(g.data(), b.data(), parent_grad(0).data(), m, n, k);
            }
            if (parent_needs(1)) {
                K.matmul_tn(a.data(), g.data(), parent_grad(1).data(), m, k, n);
            }
            break;
        }
        case Op::matmul_nt: {
            const Tensor& a = parent_value(0);
            const Tensor& b = parent_value(1);
            const size_t m = static_cast<size_t>(a.rows());
            const size_t k = static_cast<size_t>(a.cols());
            const size_t n = static_cast<size_t>(b.rows());
            if (parent_needs(0)) {
                K.matmul_nn(g.data(), b.data(), parent_grad(0).data(), m, n, k);
            }
            if (parent_needs(1)) {
                K.matmul_tn(g.data(), a.data(), parent_grad(1).data(), m, n, k);
            }
            break;
        }
        case Op::transpose: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const int64_t m = ga.rows(), n = ga.cols();
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < n; ++j) {
                        ga.at(i, j) += g.at(j, i);
                    }
                }
            }
            break;
        }
        case Op::relu: {
            if (parent_needs(0)) {
                const Tensor& x = parent_value(0);
                Tensor& ga = parent_grad(0);
                for (int64_t i = 0; i < g.numel(); ++i) {
                    if (x.at(i) > 0.0) {
                        ga.at(i) += g.at(i);
                    }
                }
            }
            break;
        }
        case Op::gelu: {
            if (parent_needs(0)) {
                const Tensor& x = parent_value(0);
                Tensor& ga = parent_grad(0);
                for (int64_t i = 0; i < g.numel(); ++i) {
                    const double xi = x.at(i);
                    const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
                    ga.at(i) += g.at(i) * (cdf + xi * pdf);
                }
            }
            break;
        }
        case Op::sigmoid: {
            if (parent_needs(0)) {
                const Tensor& y = node.value;
                Tensor& ga = parent_grad(0);
                for (int64_t i = 0; i < g.numel(); ++i) {
                    const double yi = y.at(i);
                    ga.at(i) += g.at(i) * yi * (1.0 - yi);
                }
            }
            break;
        }
        case Op::softmax_rows: {
            if (parent_needs(0)) {
                const Tensor& y = node.value;
                Tensor& ga = parent_grad(0);
                const int64_t m = y.rows(), n = y.cols();
                for (int64_t i = 0; i < m; ++i) {
                    const double* yrow = y.row(i);
                    const double* grow = g.row(i);
                    double* garow = ga.data() + i * n;
                    const double inner = K.dot(grow, yrow, static_cast<size_t>(n));
                    for (int64_t j = 0; j < n; ++j) {
                        garow[j] += yrow[j] * (grow[j] - inner);
                    }
                }
            }
            break;
        }
        case Op::layer_norm_rows: {
            const Tensor& x = parent_value(0);
            const Tensor& gain = parent_value(1);
            const int64_t m = x.rows(), n = x.cols();
            for (int64_t i = 0; i < m; ++i) {
                const double mu = node.daux[static_cast<size_t>(2 * i)];
                const double rstd = node.daux[static_cast<size_t>(2 * i + 1)];
                const double* xrow = x.row(i);
                const double* grow = g.row(i);
                if (parent_needs(1)) {
                    double* ggain = parent_grad(1).data();
                    for (int64_t j = 0; j < n; ++j) {
                        ggain[j] += grow[j] * (xrow[j] - mu) * rstd;
                    }
                }
                if (parent_needs(2)) {
                    K.axpy(1.0, grow, parent_grad(2).data(), static_cast<size_t>(n));
                }
                if (parent_needs(0)) {
                    double* gx = parent_grad(0).data() + i * n;
                    double mean_dxhat = 0.0;
                    double mean_dxhat_xhat = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        const double xhat = (xrow[j] - mu) * rstd;
                        const double dxhat = grow[j] * gain.at(j);
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= static_cast<double>(n);
                    mean_dxhat_xhat /= static_cast<double>(n);
                    for (int64_t j = 0; j < n; ++j) {
                        const double xhat = (xrow[j] - mu) * rstd;
                        const double dxhat = grow[j] * gain.at(j);
                        gx[j] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
            break;
        }
        case Op::l2_normalize_rows: {
            if (parent_needs(0)) {
                const Tensor& y = node.value;
                Tensor& ga = parent_grad(0);
                const int64_t m = y.rows(), n = y.cols();
                for (int64_t i = 0; i < m; ++i) {
                    const double norm = node.daux[static_cast<size_t>(i)];
                    if (norm == 0.0) {
                        continue;  // zero row stayed zero; subgradient 0
                    }
                    const double* yrow = y.row(i);
                    const double* grow = g.row(i);
                    double* garow = ga.data() + i * n;
                    const double inner = K.dot(grow, yrow, static_cast<size_t>(n));
                    const double inv = 1.0 / norm;
                    for (int64_t j = 0; j < n; ++j) {
                        garow[j] += (grow[j] - yrow[j] * inner) * inv;
                    }
                }
            }
            break;
        }
        case Op::max_axis0: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const int64_t n = ga.cols();
                for (int64_t j = 0; j < n; ++j) {
                    ga.at(node.iaux[static_cast<size_t>(j)], j) += g.at(j);
                }
            }
            break;
        }
        case Op::max_axis1: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                for (int64_t i = 0; i < static_cast<int64_t>(node.iaux.size()); ++i) {
                    ga.at(i, node.iaux[static_cast<size_t>(i)]) += g.at(i);
                }
            }
            break;
        }
        case Op::sum_axis0:
        case Op::mean_axis0: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const int64_t m = ga.rows(), n = ga.cols();
                const double s = node.op == Op::mean_axis0 ? 1.0 / static_cast<double>(m) : 1.0;
                for (int64_t i = 0; i < m; ++i) {
                    K.axpy(s, g.data(), ga.data() + i * n, static_cast<size_t>(n));
                }
            }
            break;
        }
        case Op::sum_axis1:
        case Op::mean_axis1: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const int64_t m = ga.rows(), n = ga.cols();
                const double s = node.op == Op::mean_axis1 ? 1.0 / static_cast<double>(n) : 1.0;
                for (int64_t i = 0; i < m; ++i) {
                    const double gi = g.at(i) * s;
                    double* garow = ga.data() + i * n;
                    for (int64_t j = 0; j < n; ++j) {
                        garow[j] += gi;
                    }
                }
            }
            break;
        }
        case Op::sum_all: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const double gv = g.at(0);
                for (int64_t i = 0; i < ga.numel(); ++i) {
                    ga.at(i) += gv;
                }
            }
            break;
        }
        case Op::concat_rows: {
            int64_t r = 0;
            const int64_t n = g.cols();
            for (size_t k = 0; k < node.parents.size(); ++k) {
                const int64_t pr = parent_value(k).rows();
                if (parent_needs(k)) {
                    K.axpy(1.0, g.data() + r * n, parent_grad(k).data(), static_cast<size_t>(pr * n));
                }
                r += pr;
            }
            break;
        }
        case Op::concat_cols: {
            const int64_t m = g.rows(), total = g.cols();
            int64_t c = 0;
            for (size_t k = 0; k < node.parents.size(); ++k) {
                const int64_t pc = parent_value(k).cols();
                if (parent_needs(k)) {
                    Tensor& gp = parent_grad(k);
                    for (int64_t i = 0; i < m; ++i) {
                        K.axpy(1.0, g.data() + i * total + c, gp.data() + i * pc, static_cast<size_t>(pc));
                    }
                }
                c += pc;
            }
            break;
        }
        case Op::slice_rows: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const int64_t r0 = node.iaux[0];
                const int64_t n = ga.cols();
                K.axpy(1.0, g.data(), ga.data() + r0 * n, static_cast<size_t>(g.numel()));
            }
            break;
        }
        case Op::slice_cols: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const int64_t c0 = node.iaux[0];
                const int64_t m = g.rows(), w = g.cols(), n = ga.cols();
                for (int64_t i = 0; i < m; ++i) {
                    K.axpy(1.0, g.row(i), ga.data() + i * n + c0, static_cast<size_t>(w));
                }
            }
            break;
        }
        case Op::reshape: {
            if (parent_needs(0)) {
                K.axpy(1.0, g.data(), parent_grad(0).data(), static_cast<size_t>(g.numel()));
            }
            break;
        }
        case Op::gather_rows: {
            if (parent_needs(0)) {
                Tensor& gt = parent_grad(0);
                const int64_t d = g.cols();
                for (size_t k = 0; k < node.iaux.size(); ++k) {
                    K.axpy(1.0, g.data() + static_cast<int64_t>(k) * d, gt.data() + node.iaux[k] * d,
                           static_cast<size_t>(d));
                }
            }
            break;
        }
        case Op::diag: {
            if (parent_needs(0)) {
                Tensor& ga = parent_grad(0);
                const int64_t n = ga.cols();
                for (int64_t i = 0; i < n; ++i) {
                    ga.at(i, i) += g.at(i);
                }
            }
            break;
        }
        case Op::element: {
            if (parent_needs(0)) {
                parent_grad(0).at(node.iaux[0]) += g.at(0);
            }
            break;
        }
    }
}

// ---- op builders -------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b, Op op) {
    if (a.tape != b.tape || !a.tape) {
        throw ShapeError(std::string(op_name(op)) + ": operands from different tapes");
    }
    return *a.tape;
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b, Op::add);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const auto& K = kernels::active();
    if (is_scalar(bv)) {
        Tensor out = Tensor::zeros(av.shape());
        const double s = bv.at(0);
        for (int64_t i = 0; i < av.numel(); ++i) {
            out.at(i) = av.at(i) + s;
        }
        return make_node(t, Op::add_scalar, std::move(out), {a.id, b.id}, {}, {});
    }
    if (is_scalar(av)) {
        return add(b, a);
    }
    if (av.same_shape(bv)) {
        Tensor out = Tensor::zeros(av.shape());
        K.add(av.data(), bv.data(), out.data(), static_cast<size_t>(av.numel()));
        return make_node(t, Op::add, std::move(out), {a.id, b.id}, {}, {});
    }
    if (av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.cols()) {
        Tensor out = Tensor::zeros(av.shape());
        for (int64_t i = 0; i < av.rows(); ++i) {
            K.add(av.row(i), bv.data(), out.data() + i * av.cols(), static_cast<size_t>(av.cols()));
        }
        return make_node(t, Op::add_row, std::move(out), {a.id, b.id}, {}, {});
    }
    shape_fail(Op::add, av, bv);
}

Var add_cols(Var a, Var v) {
    Tape& t = same_tape(a, v, Op::add_col);
    const Tensor& av = a.value();
    const Tensor& vv = v.value();
    if (av.rank() != 2 || vv.rank() != 1 || vv.cols() != av.rows()) {
        shape_fail(Op::add_col, av, vv);
    }
    Tensor out = Tensor::zeros(av.shape());
    for (int64_t i = 0; i < av.rows(); ++i) {
        const double s = vv.at(i);
        const double* arow = av.row(i);
        double* orow = out.data() + i * av.cols();
        for (int64_t j = 0; j < av.cols(); ++j) {
            orow[j] = arow[j] + s;
        }
    }
    return make_node(t, Op::add_col, std::move(out), {a.id, v.id}, {}, {});
}

Var sub(Var a, Var b) {
    return add(a, neg(b));
}

Var neg(Var a) {
    return affine(a, -1.0, 0.0);
}

Var affine(Var a, double s, double c) {
    const Tensor& av = a.value();
    Tensor out = Tensor::zeros(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) {
        out.at(i) = s * av.at(i) + c;
    }
    return make_node(*a.tape, Op::affine, std::move(out), {a.id}, {}, {s, c});
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b, Op::mul);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (is_scalar(bv)) {
        Tensor out = Tensor::zeros(av.shape());
        kernels::active().scale(av.data(), bv.at(0), out.data(), static_cast<size_t>(av.numel()));
        return make_node(t, Op::mul_scalar, std::move(out), {a.id, b.id}, {}, {});
    }
    if (is_scalar(av)) {
        return mul(b, a);
    }
    if (!av.same_shape(bv)) {
        shape_fail(Op::mul, av, bv);
    }
    Tensor out = Tensor::zeros(av.shape());
    kernels::active().mul(av.data(), bv.data(), out.data(), static_cast<size_t>(av.numel()));
    return make_node(t, Op::mul, std::move(out), {a.id, b.id}, {}, {});
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b, Op::matmul);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
        shape_fail(Op::matmul, av, bv);
    }
    Tensor out = Tensor::zeros({av.rows(), bv.cols()});
    kernels::active().matmul_nn(av.data(), bv.data(), out.data(), static_cast<size_t>(av.rows()),
                                static_cast<size_t>(av.cols()), static_cast<size_t>(bv.cols()));
    return make_node(t, Op::matmul, std::move(out), {a.id, b.id}, {}, {});
}

Var matmul_nt(Var a, Var b) {
    Tape& t = same_tape(a, b, Op::matmul_nt);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
        shape_fail(Op::matmul_nt, av, bv);
    }
    Tensor out = Tensor::zeros({av.rows(), bv.rows()});
    kernels::active().matmul_nt(av.data(), bv.data(), out.data(), static_cast<size_t>(av.rows()),
                                static_cast<size_t>(av.cols()), static_cast<size_t>(bv.rows()));
    return make_node(t, Op::matmul_nt, std::move(out), {a.id, b.id}, {}, {});
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    if (av.rank() != 2) {
        shape_fail(Op::transpose, av, "rank-2 required");
    }
    Tensor out = Tensor::zeros({av.cols(), av.rows()});
    for (int64_t i = 0; i < av.rows(); ++i) {
        for (int64_t j = 0; j < av.cols(); ++j) {
            out.at(j, i) = av.at(i, j);
        }
    }
    return make_node(*a.tape, Op::transpose, std::move(out), {a.id}, {}, {});
}

Var relu(Var a) {
    const Tensor& av = a.value();
    Tensor out = Tensor::zeros(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) {
        out.at(i) = av.at(i) > 0.0 ? av.at(i) : 0.0;
    }
    return make_node(*a.tape, Op::relu, std::move(out), {a.id}, {}, {});
}

Var gelu(Var a) {
    const Tensor& av = a.value();
    Tensor out = Tensor::zeros(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) {
        const double x = av.at(i);
        out.at(i) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make_node(*a.tape, Op::gelu, std::move(out), {a.id}, {}, {});
}

Var sigmoid(Var a) {
    const Tensor& av = a.value();
    Tensor out = Tensor::zeros(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) {
        out.at(i) = 1.0 / (1.0 + std::exp(-av.at(i)));
    }
    return make_node(*a.tape, Op::sigmoid, std::move(out), {a.id}, {}, {});
}

Var softmax_rows(Var a) {
    const Tensor& av = a.value();
    if (av.rank() == 0) {
        shape_fail(Op::softmax_rows, av, "rank >= 1 required");
    }
    const auto& K = kernels::active();
    Tensor out = Tensor::zeros(av.shape());
    const int64_t m = av.rows(), n = av.cols();
    for (int64_t i = 0; i < m; ++i) {
        const double* xrow = av.data() + i * n;
        double* orow = out.data() + i * n;
        size_t arg = 0;
        const double mx = K.max_index(xrow, static_cast<size_t>(n), &arg);
        for (int64_t j = 0; j < n; ++j) {
            orow[j] = std::exp(xrow[j] - mx);
        }
        const double denom = K.sum(orow, static_cast<size_t>(n));
        K.scale(orow, 1.0 / denom, orow, static_cast<size_t>(n));
    }
    return make_node(*a.tape, Op::softmax_rows, std::move(out), {a.id}, {}, {});
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    Tape& t = same_tape(x, gain, Op::layer_norm_rows);
    const Tensor& xv = x.value();
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    if (gv.rank() != 1 || bv.rank() != 1 || gv.cols() != xv.cols() || bv.cols() != xv.cols()) {
        shape_fail(Op::layer_norm_rows, xv, gv);
    }
    const int64_t m = xv.rows(), n = xv.cols();
    Tensor out = Tensor::zeros(xv.shape());
    std::vector<double> daux(static_cast<size_t>(2 * m));
    for (int64_t i = 0; i < m; ++i) {
        const double* xrow = xv.data() + i * n;
        double mu = kernels::active().sum(xrow, static_cast<size_t>(n)) / static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            const double d = xrow[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + eps);
        daux[static_cast<size_t>(2 * i)] = mu;
        daux[static_cast<size_t>(2 * i + 1)] = rstd;
        double* orow = out.data() + i * n;
        for (int64_t j = 0; j < n; ++j) {
            orow[j] = (xrow[j] - mu) * rstd * gv.at(j) + bv.at(j);
        }
    }
    return make_node(t, Op::layer_norm_rows, std::move(out), {x.id, gain.id, bias.id}, {}, std::move(daux));
}

Var l2_normalize_rows(Var a) {
    const Tensor& av = a.value();
    if (av.rank() == 0) {
        shape_fail(Op::l2_normalize_rows, av, "rank >= 1 required");
    }
    const auto& K = kernels::active();
    const int64_t m = av.rows(), n = av.cols();
    Tensor out = Tensor::zeros(av.shape());
    std::vector<double> norms(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        const double* xrow = av.data() + i * n;
        const double norm = std::sqrt(K.dot(xrow, xrow, static_cast<size_t>(n)));
        norms[static_cast<size_t>(i)] = norm;
        if (norm == 0.0) {
            a.tape->note_zero_norm_row();
            continue;  // row stays zero
        }
        K.scale(xrow, 1.0 / norm, out.data() + i * n, static_cast<size_t>(n));
    }
    return make_node(*a.tape, Op::l2_normalize_rows, std::move(out), {a.id}, {}, std::move(norms));
}

Var max_axis(Var a, int axis) {
    const Tensor& av = a.value();
    const auto& K = kernels::active();
    if (av.rank() == 1 && axis == 0) {
        size_t arg = 0;
        const double mx = K.max_index(av.data(), static_cast<size_t>(av.numel()), &arg);
        return make_node(*a.tape, Op::max_axis1, Tensor::vector({mx}), {a.id}, {static_cast<int64_t>(arg)}, {});
    }
    if (av.rank() != 2 || (axis != 0 && axis != 1)) {
        shape_fail(Op::max_axis0, av, "rank-2 with axis 0|1 required");
    }
    const int64_t m = av.rows(), n = av.cols();
    if (m == 0 || n == 0) {
        shape_fail(Op::max_axis0, av, "max over an empty axis");
    }
    if (axis == 1) {
        Tensor out = Tensor::zeros({m});
        std::vector<int64_t> args(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            size_t arg = 0;
            out.at(i) = K.max_index(av.row(i), static_cast<size_t>(n), &arg);
            args[static_cast<size_t>(i)] = static_cast<int64_t>(arg);
        }
        return make_node(*a.tape, Op::max_axis1, std::move(out), {a.id}, std::move(args), {});
    }
    Tensor out = Tensor::zeros({n});
    std::vector<int64_t> args(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        double best = av.at(0, j);
        int64_t best_i = 0;
        for (int64_t i = 1; i < m; ++i) {
            if (av.at(i, j) > best) {
                best = av.at(i, j);
                best_i = i;
            }
        }
        out.at(j) = best;
        args[static_cast<size_t>(j)] = best_i;
    }
    return make_node(*a.tape, Op::max_axis0, std::move(out), {a.id}, std::move(args), {});
}

namespace {

Var reduce_axis(Var a, int axis, bool mean) {
    const Tensor& av = a.value();
    const auto& K = kernels::active();
    if (av.rank() == 1 && axis == 0) {
        const double s = K.sum(av.data(), static_cast<size_t>(av.numel()));
        const double v = mean ? s / static_cast<double>(av.numel()) : s;
        return make_node(*a.tape, mean ? Op::mean_axis1 : Op::sum_axis1, Tensor::vector({v}), {a.id}, {}, {});
    }
    if (av.rank() != 2 || (axis != 0 && axis != 1)) {
        shape_fail(Op::sum_axis0, av, "rank-2 with axis 0|1 required");
    }
    const int64_t m = av.rows(), n = av.cols();
    if (axis == 1) {
        Tensor out = Tensor::zeros({m});
        for (int64_t i = 0; i < m; ++i) {
            const double s = K.sum(av.row(i), static_cast<size_t>(n));
            out.at(i) = mean ? s / static_cast<double>(n) : s;
        }
        return make_node(*a.tape, mean ? Op::mean_axis1 : Op::sum_axis1, std::move(out), {a.id}, {}, {});
    }
    Tensor out = Tensor::zeros({n});
    for (int64_t i = 0; i < m; ++i) {
        K.axpy(1.0, av.row(i), out.data(), static_cast<size_t>(n));
    }
    if (mean) {
        K.scale(out.data(), 1.0 / static_cast<double>(m), out.data(), static_cast<size_t>(n));
    }
    return make_node(*a.tape, mean ? Op::mean_axis0 : Op::sum_axis0, std::move(out), {a.id}, {}, {});
}

}  // namespace

Var sum_axis(Var a, int axis) {
    return reduce_axis(a, axis, false);
}

Var mean_axis(Var a, int axis) {
    return reduce_axis(a, axis, true);
}

Var sum_all(Var a) {
    const Tensor& av = a.value();
    const double s = kernels::active().sum(av.data(), static_cast<size_t>(av.numel()));
    return make_node(*a.tape, Op::sum_all, Tensor::scalar(s), {a.id}, {}, {});
}

namespace {

// rank-1 parts enter concat_rows as single rows
int64_t part_rows(const Tensor& t) {
    return t.rank() == 2 ? t.shape()[0] : 1;
}

}  // namespace

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: empty part list");
    }
    Tape& t = *parts[0].tape;
    const int64_t n = parts[0].value().cols();
    int64_t rows = 0;
    std::vector<int32_t> ids;
    for (const Var& p : parts) {
        if (p.tape != &t) {
            throw ShapeError("concat_rows: operands from different tapes");
        }
        if (p.value().rank() > 2 || p.value().cols() != n) {
            shape_fail(Op::concat_rows, p.value(), parts[0].value());
        }
        rows += part_rows(p.value());
        ids.push_back(p.id);
    }
    Tensor out = Tensor::zeros({rows, n});
    int64_t r = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        std::copy(pv.data(), pv.data() + pv.numel(), out.data() + r * n);
        r += part_rows(pv);
    }
    return make_node(t, Op::concat_rows, std::move(out), std::move(ids), {}, {});
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: empty part list");
    }
    Tape& t = *parts[0].tape;
    const int64_t m = parts[0].value().rows();
    int64_t cols = 0;
    std::vector<int32_t> ids;
    for (const Var& p : parts) {
        if (p.value().rank() != 2 || p.value().rows() != m) {
            shape_fail(Op::concat_cols, p.value(), parts[0].value());
        }
        cols += p.value().cols();
        ids.push_back(p.id);
    }
    Tensor out = Tensor::zeros({m, cols});
    int64_t c = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        for (int64_t i = 0; i < m; ++i) {
            std::copy(pv.row(i), pv.row(i) + pv.cols(), out.data() + i * cols + c);
        }
        c += pv.cols();
    }
    return make_node(t, Op::concat_cols, std::move(out), std::move(ids), {}, {});
}

Var slice_rows(Var a, int64_t r0, int64_t r1) {
    const Tensor& av = a.value();
    if (av.rank() != 2 || r0 < 0 || r1 > av.rows() || r0 >= r1) {
        shape_fail(Op::slice_rows, av,
                   "invalid row range [" + std::to_string(r0) + ", " + std::to_string(r1) + ")");
    }
    Tensor out = Tensor::zeros({r1 - r0, av.cols()});
    std::copy(av.row(r0), av.row(r0) + out.numel(), out.data());
    return make_node(*a.tape, Op::slice_rows, std::move(out), {a.id}, {r0, r1}, {});
}

Var slice_cols(Var a, int64_t c0, int64_t c1) {
    const Tensor& av = a.value();
    if (av.rank() != 2 || c0 < 0 || c1 > av.cols() || c0 >= c1) {
        shape_fail(Op::slice_cols, av,
                   "invalid col range [" + std::to_string(c0) + ", " + std::to_string(c1) + ")");
    }
    Tensor out = Tensor::zeros({av.rows(), c1 - c0});
    for (int64_t i = 0; i < av.rows(); ++i) {
        std::copy(av.row(i) + c0, av.row(i) + c1, out.data() + i * (c1 - c0));
    }
    return make_node(*a.tape, Op::slice_cols, std::move(out), {a.id}, {c0, c1}, {});
}

Var reshape(Var a, std::vector<int64_t> shape) {
    const Tensor& av = a.value();
    if (shape_numel(shape) != av.numel()) {
        shape_fail(Op::reshape, av, "target " + mmfuse::shape_str(shape) + " has different element count");
    }
    Tensor out = Tensor::zeros(shape);
    std::copy(av.data(), av.data() + av.numel(), out.data());
    return make_node(*a.tape, Op::reshape, std::move(out), {a.id}, {}, {});
}

Var gather_rows(Var table, std::vector<int64_t> indices) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) {
        shape_fail(Op::gather_rows, tv, "rank-2 table required");
    }
    for (int64_t idx : indices) {
        if (idx < 0 || idx >= tv.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of table " + tv.shape_str());
        }
    }
    const int64_t d = tv.cols();
    Tensor out = Tensor::zeros({static_cast<int64_t>(indices.size()), d});
    for (size_t k = 0; k < indices.size(); ++k) {
        std::copy(tv.row(indices[k]), tv.row(indices[k]) + d, out.data() + static_cast<int64_t>(k) * d);
    }
    return make_node(*table.tape, Op::gather_rows, std::move(out), {table.id}, std::move(indices), {});
}

Var diag(Var a) {
    const Tensor& av = a.value();
    if (av.rank() != 2 || av.rows() != av.cols()) {
        shape_fail(Op::diag, av, "square matrix required");
    }
    Tensor out = Tensor::zeros({av.rows()});
    for (int64_t i = 0; i < av.rows(); ++i) {
        out.at(i) = av.at(i, i);
    }
    return make_node(*a.tape, Op::diag, std::move(out), {a.id}, {}, {});
}

Var element(Var v, int64_t i) {
    const Tensor& vv = v.value();
    if (vv.rank() != 1 || i < 0 || i >= vv.numel()) {
        shape_fail(Op::element, vv, "rank-1 with index " + std::to_string(i));
    }
    return make_node(*v.tape, Op::element, Tensor::scalar(vv.at(i)), {v.id}, {i}, {});
}

Var linear(Var x, Var weight, Var bias) {
    const bool was_vector = x.value().rank() == 1;
    Var h = was_vector ? reshape(x, {1, x.value().cols()}) : x;
    Var out = add(matmul(h, weight), bias);
    if (was_vector) {
        return reshape(out, {out.value().cols()});
    }
    return out;
}

}  // namespace mmfuse
