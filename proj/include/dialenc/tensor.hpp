#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dialenc/error.hpp"
#include "dialenc/rng.hpp"

namespace dialenc {

using Dim = Eigen::Index;
using Shape = std::vector<Dim>;

inline Dim shape_numel(const Shape& s) {
    Dim n = 1;
    for (Dim d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// ---------------------------------------------------------------------------
// Tensor / GradTape
//
// A Tensor is a handle to a node holding a flat value buffer plus shape
// metadata (row-major, rank <= 3 in practice). Ops are free functions; when a
// GradTape is live on the current thread and an input requires grad, the op
// records a backward closure on the tape. Without a live tape, ops run
// forward-only. Nodes are immutable once written by an op.
// ---------------------------------------------------------------------------

template <typename S>
struct TensorNode {
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

    Shape shape;
    Vec value;
    Vec grad;  // empty until first accumulation
    bool requires_grad = false;
    std::function<void()> backward;
    const void* tape = nullptr;  // which tape recorded this op; identity only,
                                 // may dangle after that tape dies

    Vec& grad_ref() {
        if (grad.size() == 0) grad = Vec::Zero(value.size());
        return grad;
    }
};

template <typename S>
class GradTape;

template <typename S>
class Tensor {
public:
    using Node = TensorNode<S>;
    using Vec = typename Node::Vec;
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatMap = Eigen::Map<Mat>;
    using CMatMap = Eigen::Map<const Mat>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static Tensor filled(Shape shape, S v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = Vec::Constant(shape_numel(n->shape), v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(S v) { return filled({1}, v); }

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        check_shape(shape_numel(shape) == static_cast<Dim>(data.size()),
                    "tensor data length does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = Eigen::Map<const Vec>(data.data(), static_cast<Dim>(data.size()));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.resize(shape_numel(n->shape));
        for (Dim i = 0; i < n->value.size(); ++i)
            n->value[i] = static_cast<S>(rng.truncated_normal(stddev));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    Dim dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    Dim numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    Vec& value() { return node_->value; }
    const Vec& value() const { return node_->value; }
    Vec& grad() { return node_->grad; }
    const Vec& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() > 0; }

    void ensure_grad() { node_->grad_ref(); }
    void zero_grad() { node_->grad.resize(0); }

    S item() const {
        check_shape(numel() == 1, "item() requires a scalar tensor");
        return node_->value[0];
    }

    // 2D view: rows = product of leading dims, cols = last dim.
    Dim view_rows() const { return rank() == 0 ? 1 : numel() / shape().back(); }
    Dim view_cols() const { return rank() == 0 ? 1 : shape().back(); }
    MatMap mat() { return MatMap(node_->value.data(), view_rows(), view_cols()); }
    CMatMap mat() const { return CMatMap(node_->value.data(), view_rows(), view_cols()); }
    MatMap grad_mat() { return MatMap(node_->grad_ref().data(), view_rows(), view_cols()); }

    // Deep copy of the value; the clone is a fresh leaf.
    Tensor clone() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        n->requires_grad = node_->requires_grad;
        return Tensor(std::move(n));
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

template <typename S>
class GradTape {
public:
    using Node = TensorNode<S>;

    GradTape() { stack().push_back(this); }
    ~GradTape() {
        release();
        if (!stack().empty() && stack().back() == this) stack().pop_back();
    }
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* current() { return stack().empty() ? nullptr : stack().back(); }

    void record(std::shared_ptr<Node> node) {
        node->tape = this;
        nodes_.push_back(std::move(node));
    }
    size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Nodes were appended in forward
    // (topological) order, so a single reversed pass visits each exactly once.
    void backward(const Tensor<S>& loss) {
        if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
        bool found = false;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->get() == loss.node().get()) {
                found = true;
                break;
            }
        }
        // A loss with no recording tape is a plain leaf/constant (fine: the
        // sweep is a no-op); anything else must sit on *this* tape and the
        // tape must not have been consumed already.
        if (!found && loss.node()->tape != nullptr)
            throw ContractError("loss tensor was not recorded on this live tape");
        loss.node()->grad_ref()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = **it;
            if (n.grad.size() > 0 && n.backward) n.backward();
        }
        release();  // single-shot: the graph is not retraversable afterwards
    }

private:
    // Backward closures live on the nodes but are owned by the tape: each
    // closure captures shared_ptrs to its node and its inputs, so leaving
    // them in place would cycle-lock the whole graph in memory. Dropping
    // them here (after backward, or when an un-backwarded tape dies) breaks
    // the cycles and frees every intermediate once user handles let go.
    void release() {
        for (auto& n : nodes_) n->backward = nullptr;
        nodes_.clear();
    }

    static std::vector<GradTape*>& stack() {
        thread_local std::vector<GradTape*> s;
        return s;
    }
    std::vector<std::shared_ptr<Node>> nodes_;
};

namespace detail {

template <typename S>
Tensor<S> make_op_result(Shape shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value.resize(shape_numel(n->shape));
    n->requires_grad = requires_grad;
    return Tensor<S>(std::move(n));
}

// An op's output participates in autodiff only when a tape is live and some
// input needs gradients.
template <typename S>
bool recording(std::initializer_list<const Tensor<S>*> inputs) {
    if (GradTape<S>::current() == nullptr) return false;
    for (const Tensor<S>* t : inputs)
        if ((*t).requires_grad()) return true;
    return false;
}

template <typename S>
void record(Tensor<S>& out, std::function<void()> backward) {
    out.node()->backward = std::move(backward);
    GradTape<S>::current()->record(out.node());
}

template <typename S>
void accum(const std::shared_ptr<TensorNode<S>>& node,
           const typename TensorNode<S>::Vec& contribution) {
    node->grad_ref() += contribution;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    check_shape(a.shape() == b.shape(),
                "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rec = detail::recording<S>({&a, &b});
    Tensor<S> out = detail::make_op_result<S>(a.shape(), rec);
    out.value() = a.value() + b.value();
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        detail::record(out, [an, bn, on] {
            if (an->requires_grad) detail::accum<S>(an, on->grad);
            if (bn->requires_grad) detail::accum<S>(bn, on->grad);
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    check_shape(a.shape() == b.shape(),
                "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rec = detail::recording<S>({&a, &b});
    Tensor<S> out = detail::make_op_result<S>(a.shape(), rec);
    out.value() = a.value() - b.value();
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        detail::record(out, [an, bn, on] {
            if (an->requires_grad) detail::accum<S>(an, on->grad);
            if (bn->requires_grad) bn->grad_ref() -= on->grad;
        });
    }
    return out;
}

template <typename S>
Tensor<S> cwise_mul(const Tensor<S>& a, const Tensor<S>& b) {
    check_shape(a.shape() == b.shape(),
                "cwise_mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rec = detail::recording<S>({&a, &b});
    Tensor<S> out = detail::make_op_result<S>(a.shape(), rec);
    out.value() = a.value().cwiseProduct(b.value());
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        detail::record(out, [an, bn, on] {
            if (an->requires_grad) an->grad_ref() += on->grad.cwiseProduct(bn->value);
            if (bn->requires_grad) bn->grad_ref() += on->grad.cwiseProduct(an->value);
        });
    }
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    bool rec = detail::recording<S>({&a});
    Tensor<S> out = detail::make_op_result<S>(a.shape(), rec);
    out.value() = a.value() * c;
    if (rec) {
        auto an = a.node(), on = out.node();
        detail::record(out, [an, on, c] {
            if (an->requires_grad) an->grad_ref() += on->grad * c;
        });
    }
    return out;
}

// x viewed as R x C plus a length-C row vector broadcast over rows.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
    check_shape(bias.rank() == 1 && bias.dim(0) == x.view_cols(),
                "add_bias: bias " + shape_str(bias.shape()) + " does not match row width of " +
                    shape_str(x.shape()));
    bool rec = detail::recording<S>({&x, &bias});
    Tensor<S> out = detail::make_op_result<S>(x.shape(), rec);
    out.mat() = x.mat().rowwise() + bias.value().transpose();
    if (rec) {
        auto xn = x.node(), bn = bias.node(), on = out.node();
        Dim r = x.view_rows(), c = x.view_cols();
        detail::record(out, [xn, bn, on, r, c] {
            typename Tensor<S>::CMatMap g(on->grad.data(), r, c);
            if (xn->requires_grad) detail::accum<S>(xn, on->grad);
            if (bn->requires_grad) bn->grad_ref() += g.colwise().sum().transpose();
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// a's trailing dimension contracts with b's rows; a may carry extra leading
// dimensions (e.g. a (B,N,d) activation block against a (d,ff) weight).
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    check_shape(a.rank() >= 2 && b.rank() == 2 && a.view_cols() == b.dim(0),
                "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    bool rec = detail::recording<S>({&a, &b});
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(b.dim(1));
    Tensor<S> out = detail::make_op_result<S>(std::move(out_shape), rec);
    out.mat().noalias() = a.mat() * b.mat();
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Dim m = a.view_rows(), k = a.view_cols(), n = b.dim(1);
        detail::record(out, [an, bn, on, m, k, n] {
            typename Tensor<S>::CMatMap g(on->grad.data(), m, n);
            typename Tensor<S>::CMatMap av(an->value.data(), m, k);
            typename Tensor<S>::CMatMap bv(bn->value.data(), k, n);
            if (an->requires_grad) {
                typename Tensor<S>::MatMap ga(an->grad_ref().data(), m, k);
                ga.noalias() += g * bv.transpose();
            }
            if (bn->requires_grad) {
                typename Tensor<S>::MatMap gb(bn->grad_ref().data(), k, n);
                gb.noalias() += av.transpose() * g;
            }
        });
    }
    return out;
}

// a (m x k) times b^T where b is (n x k); yields m x n.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    check_shape(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                "matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()) + "^T");
    bool rec = detail::recording<S>({&a, &b});
    Tensor<S> out = detail::make_op_result<S>({a.dim(0), b.dim(0)}, rec);
    out.mat().noalias() = a.mat() * b.mat().transpose();
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Dim m = a.dim(0), k = a.dim(1), n = b.dim(0);
        detail::record(out, [an, bn, on, m, k, n] {
            typename Tensor<S>::CMatMap g(on->grad.data(), m, n);
            typename Tensor<S>::CMatMap av(an->value.data(), m, k);
            typename Tensor<S>::CMatMap bv(bn->value.data(), n, k);
            if (an->requires_grad) {
                typename Tensor<S>::MatMap ga(an->grad_ref().data(), m, k);
                ga.noalias() += g * bv;
            }
            if (bn->requires_grad) {
                typename Tensor<S>::MatMap gb(bn->grad_ref().data(), n, k);
                gb.noalias() += g.transpose() * av;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lookup / gather / slicing
// ---------------------------------------------------------------------------

// Gathers table rows by id; output shape is leading_shape + {d}.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids,
                           Shape leading_shape) {
    check_shape(table.rank() == 2, "embedding_lookup: table must be rank 2");
    check_shape(shape_numel(leading_shape) == static_cast<Dim>(ids.size()),
                "embedding_lookup: id count does not match leading shape");
    const Dim v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v) + " rows");
    bool rec = detail::recording<S>({&table});
    Shape out_shape = leading_shape;
    out_shape.push_back(d);
    Tensor<S> out = detail::make_op_result<S>(std::move(out_shape), rec);
    auto om = out.mat();
    auto tm = table.mat();
    for (size_t r = 0; r < ids.size(); ++r) om.row(static_cast<Dim>(r)) = tm.row(ids[r]);
    if (rec) {
        auto tn = table.node(), on = out.node();
        detail::record(out, [tn, on, ids, d] {
            typename Tensor<S>::CMatMap g(on->grad.data(), static_cast<Dim>(ids.size()), d);
            typename Tensor<S>::MatMap tg(tn->grad_ref().data(), tn->shape[0], d);
            for (size_t r = 0; r < ids.size(); ++r) tg.row(ids[r]) += g.row(static_cast<Dim>(r));
        });
    }
    return out;
}

// Contiguous row slice of the 2D view; used to cut one sample out of a
// (B,N,d) activation block.
template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, Dim begin, Dim count) {
    const Dim rows = x.view_rows(), cols = x.view_cols();
    check_shape(begin >= 0 && count >= 0 && begin + count <= rows, "slice_rows: range out of bounds");
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>({count, cols}, rec);
    out.mat() = x.mat().middleRows(begin, count);
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on, begin, count, rows, cols] {
            if (!xn->requires_grad) return;
            typename Tensor<S>::CMatMap g(on->grad.data(), count, cols);
            typename Tensor<S>::MatMap xg(xn->grad_ref().data(), rows, cols);
            xg.middleRows(begin, count) += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Dim begin, Dim count) {
    const Dim rows = x.view_rows(), cols = x.view_cols();
    check_shape(begin >= 0 && count >= 0 && begin + count <= cols, "slice_cols: range out of bounds");
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>({rows, count}, rec);
    out.mat() = x.mat().middleCols(begin, count);
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on, begin, count, rows, cols] {
            if (!xn->requires_grad) return;
            typename Tensor<S>::CMatMap g(on->grad.data(), rows, count);
            typename Tensor<S>::MatMap xg(xn->grad_ref().data(), rows, cols);
            xg.middleCols(begin, count) += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    check_shape(!parts.empty(), "concat_cols: empty input");
    const Dim rows = parts[0].view_rows();
    Dim total = 0;
    bool rec = false;
    for (const auto& p : parts) {
        check_shape(p.view_rows() == rows, "concat_cols: row count mismatch");
        total += p.view_cols();
        rec = rec || detail::recording<S>({&p});
    }
    Tensor<S> out = detail::make_op_result<S>({rows, total}, rec);
    Dim at = 0;
    for (const auto& p : parts) {
        out.mat().middleCols(at, p.view_cols()) = p.mat();
        at += p.view_cols();
    }
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<S>>> pn;
        std::vector<Dim> widths;
        for (const auto& p : parts) {
            pn.push_back(p.node());
            widths.push_back(p.view_cols());
        }
        auto on = out.node();
        detail::record(out, [pn, widths, on, rows, total] {
            typename Tensor<S>::CMatMap g(on->grad.data(), rows, total);
            Dim at2 = 0;
            for (size_t i = 0; i < pn.size(); ++i) {
                if (pn[i]->requires_grad) {
                    typename Tensor<S>::MatMap pg(pn[i]->grad_ref().data(), rows, widths[i]);
                    pg += g.middleCols(at2, widths[i]);
                }
                at2 += widths[i];
            }
        });
    }
    return out;
}

// Concatenates rank-2 pieces along rows; out_shape lets callers restore a
// rank-3 (B,N,d) layout after per-sample processing.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts, Shape out_shape) {
    check_shape(!parts.empty(), "concat_rows: empty input");
    const Dim cols = parts[0].view_cols();
    Dim total = 0;
    bool rec = false;
    for (const auto& p : parts) {
        check_shape(p.view_cols() == cols, "concat_rows: column count mismatch");
        total += p.view_rows();
        rec = rec || detail::recording<S>({&p});
    }
    check_shape(shape_numel(out_shape) == total * cols,
                "concat_rows: out shape " + shape_str(out_shape) + " does not hold " +
                    std::to_string(total * cols) + " values");
    check_shape(out_shape.back() == cols, "concat_rows: out shape must end in the column count");
    Tensor<S> out = detail::make_op_result<S>(std::move(out_shape), rec);
    Dim at = 0;
    for (const auto& p : parts) {
        out.mat().middleRows(at, p.view_rows()) = p.mat();
        at += p.view_rows();
    }
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<S>>> pn;
        std::vector<Dim> heights;
        for (const auto& p : parts) {
            pn.push_back(p.node());
            heights.push_back(p.view_rows());
        }
        auto on = out.node();
        detail::record(out, [pn, heights, on, total, cols] {
            typename Tensor<S>::CMatMap g(on->grad.data(), total, cols);
            Dim at2 = 0;
            for (size_t i = 0; i < pn.size(); ++i) {
                if (pn[i]->requires_grad) {
                    typename Tensor<S>::MatMap pg(pn[i]->grad_ref().data(), heights[i], cols);
                    pg += g.middleRows(at2, heights[i]);
                }
                at2 += heights[i];
            }
        });
    }
    return out;
}

// Arbitrary (possibly repeating) row gather from the 2D view.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<Dim>& rows) {
    const Dim r = x.view_rows(), c = x.view_cols();
    for (Dim i : rows)
        if (i < 0 || i >= r) throw IndexError("gather_rows: row index out of range");
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>({static_cast<Dim>(rows.size()), c}, rec);
    for (size_t i = 0; i < rows.size(); ++i)
        out.mat().row(static_cast<Dim>(i)) = x.mat().row(rows[i]);
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on, rows, r, c] {
            if (!xn->requires_grad) return;
            typename Tensor<S>::CMatMap g(on->grad.data(), static_cast<Dim>(rows.size()), c);
            typename Tensor<S>::MatMap xg(xn->grad_ref().data(), r, c);
            for (size_t i = 0; i < rows.size(); ++i) xg.row(rows[i]) += g.row(static_cast<Dim>(i));
        });
    }
    return out;
}

// Stacks B rank-1 tensors of width d into a (B,d) matrix.
template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& parts) {
    check_shape(!parts.empty(), "stack_rows: empty input");
    const Dim d = parts[0].numel();
    bool rec = false;
    for (const auto& p : parts) {
        check_shape(p.rank() == 1 && p.numel() == d, "stack_rows: width mismatch");
        rec = rec || detail::recording<S>({&p});
    }
    Tensor<S> out = detail::make_op_result<S>({static_cast<Dim>(parts.size()), d}, rec);
    for (size_t i = 0; i < parts.size(); ++i)
        out.mat().row(static_cast<Dim>(i)) = parts[i].value().transpose();
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<S>>> pn;
        for (const auto& p : parts) pn.push_back(p.node());
        auto on = out.node();
        detail::record(out, [pn, on, d] {
            typename Tensor<S>::CMatMap g(on->grad.data(), static_cast<Dim>(pn.size()), d);
            for (size_t i = 0; i < pn.size(); ++i)
                if (pn[i]->requires_grad)
                    pn[i]->grad_ref() += g.row(static_cast<Dim>(i)).transpose();
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization / activations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
    const Dim c = x.view_cols(), r = x.view_rows();
    check_shape(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
                "layer_norm: affine parameters must be rank-1 of width " + std::to_string(c));
    bool rec = detail::recording<S>({&x, &gamma, &beta});
    Tensor<S> out = detail::make_op_result<S>(x.shape(), rec);

    using Mat = typename Tensor<S>::Mat;
    using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
    Mat xhat(r, c);
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv_sigma(r);
    auto xm = x.mat();
    auto om = out.mat();
    RowVec gv = gamma.value().transpose();
    RowVec bv = beta.value().transpose();
    for (Dim i = 0; i < r; ++i) {
        S mu = xm.row(i).mean();
        S var = (xm.row(i).array() - mu).square().mean();
        S is = S(1) / std::sqrt(var + eps);
        inv_sigma[i] = is;
        xhat.row(i) = (xm.row(i).array() - mu).matrix() * is;
        om.row(i) = xhat.row(i).cwiseProduct(gv) + bv;
    }

    if (rec) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        detail::record(out, [xn, gn, bn, on, xhat, inv_sigma, r, c] {
            typename Tensor<S>::CMatMap g(on->grad.data(), r, c);
            if (bn->requires_grad) bn->grad_ref() += g.colwise().sum().transpose();
            if (gn->requires_grad)
                gn->grad_ref() += g.cwiseProduct(xhat).colwise().sum().transpose();
            if (xn->requires_grad) {
                typename Tensor<S>::MatMap xg(xn->grad_ref().data(), r, c);
                RowVec gamma_row = gn->value.transpose();
                for (Dim i = 0; i < r; ++i) {
                    RowVec dy = g.row(i).cwiseProduct(gamma_row);
                    S m1 = dy.mean();
                    S m2 = dy.cwiseProduct(xhat.row(i)).mean();
                    xg.row(i) +=
                        (dy.array() - m1).matrix() * inv_sigma[i] - xhat.row(i) * (m2 * inv_sigma[i]);
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>(x.shape(), rec);
    const S inv_sqrt2 = S(0.7071067811865475244);
    out.value() = x.value().unaryExpr(
        [inv_sqrt2](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); });
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on, inv_sqrt2] {
            if (!xn->requires_grad) return;
            const S inv_sqrt2pi = S(0.3989422804014326779);
            auto& xv = xn->value;
            auto& g = on->grad;
            auto& xg = xn->grad_ref();
            for (Dim i = 0; i < xv.size(); ++i) {
                S v = xv[i];
                S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
                S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
                xg[i] += g[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

// Row-wise softmax with max-subtraction.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    const Dim r = x.view_rows(), c = x.view_cols();
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>(x.shape(), rec);
    auto xm = x.mat();
    auto om = out.mat();
    for (Dim i = 0; i < r; ++i) {
        S m = xm.row(i).maxCoeff();
        // Scalar std::exp underflows to exact zero for strongly masked scores;
        // Eigen's vectorized exp would clamp to a denormal instead.
        om.row(i) = (xm.row(i).array() - m).unaryExpr([](S v) { return std::exp(v); });
        om.row(i) /= om.row(i).sum();
    }
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on, r, c] {
            if (!xn->requires_grad) return;
            typename Tensor<S>::CMatMap g(on->grad.data(), r, c);
            typename Tensor<S>::CMatMap p(on->value.data(), r, c);
            typename Tensor<S>::MatMap xg(xn->grad_ref().data(), r, c);
            for (Dim i = 0; i < r; ++i) {
                S dot = g.row(i).dot(p.row(i));
                xg.row(i) += p.row(i).cwiseProduct(g.row(i)) - p.row(i) * dot;
            }
        });
    }
    return out;
}

// Adds a large negative constant to the columns whose key mask is false, so
// the subsequent row softmax assigns them exactly zero probability.
template <typename S>
Tensor<S> add_key_mask(const Tensor<S>& scores, const std::vector<uint8_t>& key_mask) {
    const Dim c = scores.view_cols();
    check_shape(static_cast<Dim>(key_mask.size()) == c, "add_key_mask: mask length mismatch");
    bool rec = detail::recording<S>({&scores});
    Tensor<S> out = detail::make_op_result<S>(scores.shape(), rec);
    out.value() = scores.value();
    auto om = out.mat();
    const S penalty = S(-1e9);
    for (Dim j = 0; j < c; ++j)
        if (!key_mask[static_cast<size_t>(j)]) om.col(j).array() += penalty;
    if (rec) {
        auto sn = scores.node(), on = out.node();
        detail::record(out, [sn, on] {
            if (sn->requires_grad) detail::accum<S>(sn, on->grad);
        });
    }
    return out;
}

// Overwrites rows whose mask is false with a constant; gradient is cut there.
template <typename S>
Tensor<S> masked_fill_rows(const Tensor<S>& x, const std::vector<uint8_t>& row_mask, S fill) {
    const Dim r = x.view_rows(), c = x.view_cols();
    check_shape(static_cast<Dim>(row_mask.size()) == r, "masked_fill_rows: mask length mismatch");
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>(x.shape(), rec);
    out.value() = x.value();
    auto om = out.mat();
    for (Dim i = 0; i < r; ++i)
        if (!row_mask[static_cast<size_t>(i)]) om.row(i).setConstant(fill);
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on, row_mask, r, c] {
            if (!xn->requires_grad) return;
            typename Tensor<S>::CMatMap g(on->grad.data(), r, c);
            typename Tensor<S>::MatMap xg(xn->grad_ref().data(), r, c);
            for (Dim i = 0; i < r; ++i)
                if (row_mask[static_cast<size_t>(i)]) xg.row(i) += g.row(i);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

// Same-padded 1-D convolution over the time axis. Input is (N,d), the kernel
// is (K,d,d) with odd K, bias is (d). Output row t sums input rows
// t-(K-1)/2 .. t+(K-1)/2 (zero padded) through the per-offset d x d slices.
// Implemented as im2col + one GEMM; the kernel's flat layout is already the
// (K*d, d) matrix the GEMM needs.
template <typename S>
Tensor<S> conv1d_same(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias) {
    check_shape(x.rank() == 2, "conv1d_same: input must be rank 2 (N,d)");
    check_shape(kernel.rank() == 3, "conv1d_same: kernel must be rank 3 (K,d,d)");
    const Dim n = x.dim(0), d = x.dim(1), k = kernel.dim(0);
    if (k % 2 == 0) throw ShapeError("conv1d_same: kernel width must be odd, got " + std::to_string(k));
    check_shape(kernel.dim(1) == d && kernel.dim(2) == d,
                "conv1d_same: kernel channels " + shape_str(kernel.shape()) +
                    " do not match input width " + std::to_string(d));
    check_shape(bias.rank() == 1 && bias.dim(0) == d, "conv1d_same: bias width mismatch");
    check_shape(n >= 1, "conv1d_same: empty input");

    using Mat = typename Tensor<S>::Mat;
    const Dim pad = (k - 1) / 2;
    Mat padded = Mat::Zero(n + k - 1, d);
    padded.middleRows(pad, n) = x.mat();
    Mat patches(n, k * d);
    for (Dim j = 0; j < k; ++j) patches.middleCols(j * d, d) = padded.middleRows(j, n);

    bool rec = detail::recording<S>({&x, &kernel, &bias});
    Tensor<S> out = detail::make_op_result<S>({n, d}, rec);
    typename Tensor<S>::CMatMap wflat(kernel.value().data(), k * d, d);
    out.mat().noalias() = patches * wflat;
    out.mat().rowwise() += bias.value().transpose();

    if (rec) {
        auto xn = x.node(), kn = kernel.node(), bn = bias.node(), on = out.node();
        detail::record(out, [xn, kn, bn, on, patches, n, d, k, pad] {
            typename Tensor<S>::CMatMap g(on->grad.data(), n, d);
            if (bn->requires_grad) bn->grad_ref() += g.colwise().sum().transpose();
            if (kn->requires_grad) {
                typename Tensor<S>::MatMap kg(kn->grad_ref().data(), k * d, d);
                kg.noalias() += patches.transpose() * g;
            }
            if (xn->requires_grad) {
                typename Tensor<S>::CMatMap wflat2(kn->value.data(), k * d, d);
                Mat dpatches = g * wflat2.transpose();  // n x (k*d)
                Mat dpadded = Mat::Zero(n + k - 1, d);
                for (Dim j = 0; j < k; ++j)
                    dpadded.middleRows(j, n) += dpatches.middleCols(j * d, d);
                typename Tensor<S>::MatMap xg(xn->grad_ref().data(), n, d);
                xg += dpadded.middleRows(pad, n);
            }
        });
    }
    return out;
}

// Column-wise max over the time axis; (N,d) -> (d). Ties route the gradient
// to the earliest row.
template <typename S>
Tensor<S> max_over_time(const Tensor<S>& x) {
    check_shape(x.rank() == 2 && x.dim(0) >= 1, "max_over_time: need a non-empty (N,d) input");
    const Dim n = x.dim(0), d = x.dim(1);
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>({d}, rec);
    std::vector<Dim> argmax(static_cast<size_t>(d), 0);
    auto xm = x.mat();
    for (Dim j = 0; j < d; ++j) {
        Dim best = 0;
        for (Dim i = 1; i < n; ++i)
            if (xm(i, j) > xm(best, j)) best = i;
        argmax[static_cast<size_t>(j)] = best;
        out.value()[j] = xm(best, j);
    }
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on, argmax, n, d] {
            if (!xn->requires_grad) return;
            typename Tensor<S>::MatMap xg(xn->grad_ref().data(), n, d);
            for (Dim j = 0; j < d; ++j) xg(argmax[static_cast<size_t>(j)], j) += on->grad[j];
        });
    }
    return out;
}

// Elementwise max; ties route the gradient to the first argument.
template <typename S>
Tensor<S> cwise_max(const Tensor<S>& a, const Tensor<S>& b) {
    check_shape(a.shape() == b.shape(),
                "cwise_max: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rec = detail::recording<S>({&a, &b});
    Tensor<S> out = detail::make_op_result<S>(a.shape(), rec);
    out.value() = a.value().cwiseMax(b.value());
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        detail::record(out, [an, bn, on] {
            if (an->requires_grad) an->grad_ref();  // populate even if it never wins
            if (bn->requires_grad) bn->grad_ref();
            for (Dim i = 0; i < on->grad.size(); ++i) {
                if (an->value[i] >= bn->value[i]) {
                    if (an->requires_grad) an->grad[i] += on->grad[i];
                } else if (bn->requires_grad) {
                    bn->grad[i] += on->grad[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>({1}, rec);
    out.value()[0] = x.value().sum();
    if (rec) {
        auto xn = x.node(), on = out.node();
        detail::record(out, [xn, on] {
            if (xn->requires_grad)
                xn->grad_ref().array() += on->grad[0];
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    check_shape(x.numel() > 0, "mean_all: empty tensor");
    bool rec = detail::recording<S>({&x});
    Tensor<S> out = detail::make_op_result<S>({1}, rec);
    out.value()[0] = x.value().mean();
    if (rec) {
        auto xn = x.node(), on = out.node();
        S inv = S(1) / S(x.numel());
        detail::record(out, [xn, on, inv] {
            if (xn->requires_grad)
                xn->grad_ref().array() += on->grad[0] * inv;
        });
    }
    return out;
}

// Mean softmax cross-entropy over the rows of a (R,C) logit matrix.
template <typename S>
Tensor<S> softmax_cross_entropy_rows(const Tensor<S>& logits, const std::vector<int>& targets) {
    check_shape(logits.rank() == 2, "softmax_cross_entropy_rows: logits must be rank 2");
    const Dim r = logits.dim(0), c = logits.dim(1);
    check_shape(static_cast<Dim>(targets.size()) == r,
                "softmax_cross_entropy_rows: target count mismatch");
    check_shape(c >= 2, "softmax_cross_entropy_rows: need at least 2 classes");
    for (int t : targets)
        if (t < 0 || t >= c)
            throw IndexError("softmax_cross_entropy_rows: target " + std::to_string(t) +
                             " outside [0," + std::to_string(c) + ")");
    if (!logits.value().allFinite())
        throw NumericError("softmax_cross_entropy_rows: non-finite logits");

    bool rec = detail::recording<S>({&logits});
    Tensor<S> out = detail::make_op_result<S>({1}, rec);
    using Mat = typename Tensor<S>::Mat;
    Mat probs(r, c);
    auto lm = logits.mat();
    S total = S(0);
    for (Dim i = 0; i < r; ++i) {
        S m = lm.row(i).maxCoeff();
        probs.row(i) = (lm.row(i).array() - m).exp();
        S z = probs.row(i).sum();
        probs.row(i) /= z;
        total += std::log(z) + m - lm(i, targets[static_cast<size_t>(i)]);
    }
    out.value()[0] = total / S(r);
    if (rec) {
        auto ln = logits.node(), on = out.node();
        detail::record(out, [ln, on, probs, targets, r, c] {
            if (!ln->requires_grad) return;
            S g = on->grad[0] / S(r);
            typename Tensor<S>::MatMap lg(ln->grad_ref().data(), r, c);
            lg += probs * g;
            for (Dim i = 0; i < r; ++i) lg(i, targets[static_cast<size_t>(i)]) -= g;
        });
    }
    return out;
}

// Single-vector convenience form; logits is a rank-1 C-vector.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, int target) {
    check_shape(logits.rank() == 1, "softmax_cross_entropy: logits must be rank 1");
    const Dim c = logits.dim(0);
    check_shape(c >= 2, "softmax_cross_entropy: need at least 2 classes");
    if (target < 0 || target >= c)
        throw IndexError("softmax_cross_entropy: target " + std::to_string(target) + " outside [0," +
                         std::to_string(c) + ")");
    if (!logits.value().allFinite()) throw NumericError("softmax_cross_entropy: non-finite logits");

    bool rec = detail::recording<S>({&logits});
    Tensor<S> out = detail::make_op_result<S>({1}, rec);
    S m = logits.value().maxCoeff();
    typename Tensor<S>::Vec p = (logits.value().array() - m).exp();
    S z = p.sum();
    p /= z;
    out.value()[0] = std::log(z) + m - logits.value()[target];
    if (rec) {
        auto ln = logits.node(), on = out.node();
        detail::record(out, [ln, on, p, target] {
            if (!ln->requires_grad) return;
            auto& lg = ln->grad_ref();
            lg += p * on->grad[0];
            lg[target] -= on->grad[0];
        });
    }
    return out;
}

// Mean binary cross-entropy of sigmoid(logits) against boolean labels,
// computed in the numerically stable log1p form.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const std::vector<uint8_t>& labels) {
    const Dim n = logits.numel();
    check_shape(static_cast<Dim>(labels.size()) == n, "bce_with_logits: label count mismatch");
    check_shape(n >= 1, "bce_with_logits: empty input");
    if (!logits.value().allFinite()) throw NumericError("bce_with_logits: non-finite logits");
    bool rec = detail::recording<S>({&logits});
    Tensor<S> out = detail::make_op_result<S>({1}, rec);
    S total = S(0);
    for (Dim i = 0; i < n; ++i) {
        S z = logits.value()[i];
        S y = labels[static_cast<size_t>(i)] ? S(1) : S(0);
        total += std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    out.value()[0] = total / S(n);
    if (rec) {
        auto ln = logits.node(), on = out.node();
        detail::record(out, [ln, on, labels, n] {
            if (!ln->requires_grad) return;
            auto& lg = ln->grad_ref();
            S g = on->grad[0] / S(n);
            for (Dim i = 0; i < n; ++i) {
                S z = ln->value[i];
                S sig = S(1) / (S(1) + std::exp(-z));
                S y = labels[static_cast<size_t>(i)] ? S(1) : S(0);
                lg[i] += g * (sig - y);
            }
        });
    }
    return out;
}

}  // namespace dialenc
