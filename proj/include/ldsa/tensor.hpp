#pragma once

// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Tape owns every node created during one forward pass; a Tensor is a cheap
// handle (tape pointer + node id). Calling backward() on a scalar root first
// marks the ancestors of the root, then walks node ids in reverse creation
// order pulling gradients into parents. Nodes that are not ancestors of the
// root never get a gradient buffer. Tapes are built per forward pass and
// discarded after use; they are not thread-safe and must stay thread-confined.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ldsa/errors.hpp"

namespace ldsa {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline void check_shape_valid(const Shape& s, const char* op) {
    if (s.empty()) throw ShapeError(std::string(op) + ": empty shape");
    for (int d : s) {
        if (d <= 0) throw ShapeError(std::string(op) + ": non-positive dimension in " + shape_str(s));
    }
}

class Tape;

class Tensor {
public:
    Tensor() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

    const Shape& shape() const;
    std::span<const double> values() const;
    std::span<const double> grad() const;  // empty when backward never reached this node
    double scalar() const;

private:
    friend class Tape;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> pull;
        std::vector<double> aux;  // op-specific forward cache
    };

    Tensor leaf(Shape shape, std::vector<double> values) {
        check_shape_valid(shape, "leaf");
        if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
            throw ShapeError("leaf: value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        }
        Node n;
        n.shape = std::move(shape);
        n.val = std::move(values);
        nodes_.push_back(std::move(n));
        return Tensor(this, static_cast<int>(nodes_.size()) - 1);
    }

    Tensor leaf(Shape shape, std::span<const double> values) {
        return leaf(std::move(shape), std::vector<double>(values.begin(), values.end()));
    }

    Tensor zeros(Shape shape) {
        check_shape_valid(shape, "zeros");
        std::int64_t n = numel(shape);
        return leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }

    Tensor full(Shape shape, double v) {
        check_shape_valid(shape, "full");
        std::int64_t n = numel(shape);
        return leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
    }

    // Internal: append a node with uninitialised values sized to shape.
    int add_node(Shape shape, std::vector<int> parents) {
        check_shape_valid(shape, "op");
        Node n;
        n.val.resize(static_cast<std::size_t>(numel(shape)));
        n.shape = std::move(shape);
        n.parents = std::move(parents);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    std::vector<double>& val(int id) { return nodes_[static_cast<std::size_t>(id)].val; }
    std::vector<double>& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    const Shape& shape_of(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

    Tensor handle(int id) { return Tensor(this, id); }

    std::size_t size() const { return nodes_.size(); }

    // Reverse pass from a scalar root. Gradient buffers are (re)allocated and
    // zeroed for exactly the ancestors of the root, so repeated calls are
    // reproducible and non-ancestors never expose a gradient.
    void backward(const Tensor& root) {
        if (root.tape() != this) throw ContractViolation("backward: root lives on a different tape");
        if (numel(shape_of(root.id())) != 1) {
            throw ContractViolation("backward: root must be scalar, got shape " + shape_str(shape_of(root.id())));
        }
        const int rid = root.id();
        std::vector<std::uint8_t> reach(nodes_.size(), 0);
        std::vector<int> stack{rid};
        while (!stack.empty()) {
            int id = stack.back();
            stack.pop_back();
            if (reach[static_cast<std::size_t>(id)]) continue;
            reach[static_cast<std::size_t>(id)] = 1;
            for (int p : nodes_[static_cast<std::size_t>(id)].parents) stack.push_back(p);
        }
        for (std::size_t id = 0; id < nodes_.size(); ++id) {
            if (reach[id]) {
                nodes_[id].grad.assign(nodes_[id].val.size(), 0.0);
            } else {
                nodes_[id].grad.clear();
            }
        }
        nodes_[static_cast<std::size_t>(rid)].grad[0] = 1.0;
        for (int id = rid; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (reach[static_cast<std::size_t>(id)] && n.pull) n.pull(*this, id);
        }
    }

private:
    std::vector<Node> nodes_;
};

inline const Shape& Tensor::shape() const { return tape_->shape_of(id_); }
inline std::span<const double> Tensor::values() const { return tape_->node(id_).val; }
inline std::span<const double> Tensor::grad() const { return tape_->node(id_).grad; }
inline double Tensor::scalar() const {
    if (numel(shape()) != 1) throw ShapeError("scalar: tensor has shape " + shape_str(shape()));
    return values()[0];
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline MatMap mat(std::vector<double>& v, int r, int c) { return MatMap(v.data(), r, c); }
inline ConstMatMap mat(const std::vector<double>& v, int r, int c) { return ConstMatMap(v.data(), r, c); }

inline void require_same_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.tape() != b.tape()) throw ContractViolation(std::string(op) + ": operands live on different tapes");
}

inline void require_rank(const Tensor& t, int rank, const char* op) {
    if (static_cast<int>(t.shape().size()) != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace detail

// ---- linear algebra ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b, "matmul");
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const int p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
    if (b.shape()[0] != q) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tape& t = *a.tape();
    int id = t.add_node({p, r}, {a.id(), b.id()});
    detail::mat(t.val(id), p, r).noalias() = detail::mat(t.val(a.id()), p, q) * detail::mat(t.val(b.id()), q, r);
    t.node(id).pull = [p, q, r, pa = a.id(), pb = b.id()](Tape& tp, int self) {
        auto g = detail::mat(tp.grad(self), p, r);
        if (!tp.grad(pa).empty()) {
            detail::mat(tp.grad(pa), p, q).noalias() += g * detail::mat(tp.val(pb), q, r).transpose();
        }
        if (!tp.grad(pb).empty()) {
            detail::mat(tp.grad(pb), q, r).noalias() += detail::mat(tp.val(pa), p, q).transpose() * g;
        }
    };
    return t.handle(id);
}

// y = x * w + b (bias broadcast over rows).
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::require_same_tape(x, w, "affine");
    detail::require_same_tape(x, b, "affine");
    detail::require_rank(x, 2, "affine");
    detail::require_rank(w, 2, "affine");
    detail::require_rank(b, 1, "affine");
    const int r = x.shape()[0], i = x.shape()[1], o = w.shape()[1];
    if (w.shape()[0] != i || b.shape()[0] != o) {
        throw ShapeError("affine: shapes disagree: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()) +
                         ", b " + shape_str(b.shape()));
    }
    Tape& t = *x.tape();
    int id = t.add_node({r, o}, {x.id(), w.id(), b.id()});
    auto y = detail::mat(t.val(id), r, o);
    y.noalias() = detail::mat(t.val(x.id()), r, i) * detail::mat(t.val(w.id()), i, o);
    const auto& bv = t.val(b.id());
    for (int row = 0; row < r; ++row) {
        for (int col = 0; col < o; ++col) y(row, col) += bv[static_cast<std::size_t>(col)];
    }
    t.node(id).pull = [r, i, o, px = x.id(), pw = w.id(), pb = b.id()](Tape& tp, int self) {
        auto g = detail::mat(tp.grad(self), r, o);
        if (!tp.grad(px).empty()) {
            detail::mat(tp.grad(px), r, i).noalias() += g * detail::mat(tp.val(pw), i, o).transpose();
        }
        if (!tp.grad(pw).empty()) {
            detail::mat(tp.grad(pw), i, o).noalias() += detail::mat(tp.val(px), r, i).transpose() * g;
        }
        if (!tp.grad(pb).empty()) {
            auto& bg = tp.grad(pb);
            for (int row = 0; row < r; ++row) {
                for (int col = 0; col < o; ++col) bg[static_cast<std::size_t>(col)] += g(row, col);
            }
        }
    };
    return t.handle(id);
}

// Batched matmul over the leading dimension: [n,p,q] x [n,q,r] -> [n,p,r].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b, "bmm");
    detail::require_rank(a, 3, "bmm");
    detail::require_rank(b, 3, "bmm");
    const int n = a.shape()[0], p = a.shape()[1], q = a.shape()[2], r = b.shape()[2];
    if (b.shape()[0] != n || b.shape()[1] != q) {
        throw ShapeError("bmm: shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tape& t = *a.tape();
    int id = t.add_node({n, p, r}, {a.id(), b.id()});
    for (int k = 0; k < n; ++k) {
        detail::MatMap y(t.val(id).data() + static_cast<std::ptrdiff_t>(k) * p * r, p, r);
        detail::ConstMatMap av(t.val(a.id()).data() + static_cast<std::ptrdiff_t>(k) * p * q, p, q);
        detail::ConstMatMap bv(t.val(b.id()).data() + static_cast<std::ptrdiff_t>(k) * q * r, q, r);
        y.noalias() = av * bv;
    }
    t.node(id).pull = [n, p, q, r, pa = a.id(), pb = b.id()](Tape& tp, int self) {
        for (int k = 0; k < n; ++k) {
            detail::ConstMatMap g(tp.grad(self).data() + static_cast<std::ptrdiff_t>(k) * p * r, p, r);
            detail::ConstMatMap av(tp.val(pa).data() + static_cast<std::ptrdiff_t>(k) * p * q, p, q);
            detail::ConstMatMap bv(tp.val(pb).data() + static_cast<std::ptrdiff_t>(k) * q * r, q, r);
            if (!tp.grad(pa).empty()) {
                detail::MatMap ga(tp.grad(pa).data() + static_cast<std::ptrdiff_t>(k) * p * q, p, q);
                ga.noalias() += g * bv.transpose();
            }
            if (!tp.grad(pb).empty()) {
                detail::MatMap gb(tp.grad(pb).data() + static_cast<std::ptrdiff_t>(k) * q * r, q, r);
                gb.noalias() += av.transpose() * g;
            }
        }
    };
    return t.handle(id);
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank(a, 2, "transpose");
    const int r = a.shape()[0], c = a.shape()[1];
    Tape& t = *a.tape();
    int id = t.add_node({c, r}, {a.id()});
    detail::mat(t.val(id), c, r) = detail::mat(t.val(a.id()), r, c).transpose();
    t.node(id).pull = [r, c, pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        detail::mat(tp.grad(pa), r, c) += detail::mat(tp.grad(self), c, r).transpose();
    };
    return t.handle(id);
}

inline Tensor reshape(const Tensor& a, Shape s) {
    check_shape_valid(s, "reshape");
    if (numel(s) != numel(a.shape())) {
        throw ShapeError("reshape: element count mismatch: " + shape_str(a.shape()) + " vs " + shape_str(s));
    }
    Tape& t = *a.tape();
    int id = t.add_node(std::move(s), {a.id()});
    t.val(id) = t.val(a.id());
    t.node(id).pull = [pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        auto& gp = tp.grad(pa);
        const auto& g = tp.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    };
    return t.handle(id);
}

inline Tensor slice_cols(const Tensor& a, int c0, int len) {
    detail::require_rank(a, 2, "slice_cols");
    const int r = a.shape()[0], c = a.shape()[1];
    if (c0 < 0 || len <= 0 || c0 + len > c) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c0 + len) +
                         ") out of bounds for " + shape_str(a.shape()));
    }
    Tape& t = *a.tape();
    int id = t.add_node({r, len}, {a.id()});
    detail::mat(t.val(id), r, len) = detail::mat(t.val(a.id()), r, c).middleCols(c0, len);
    t.node(id).pull = [r, c, c0, len, pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        detail::mat(tp.grad(pa), r, c).middleCols(c0, len) += detail::mat(tp.grad(self), r, len);
    };
    return t.handle(id);
}

// Single row of a matrix as a rank-1 tensor.
inline Tensor slice_row(const Tensor& a, int row) {
    detail::require_rank(a, 2, "slice_row");
    const int r = a.shape()[0], c = a.shape()[1];
    if (row < 0 || row >= r) {
        throw ShapeError("slice_row: row " + std::to_string(row) + " out of bounds for " + shape_str(a.shape()));
    }
    Tape& t = *a.tape();
    int id = t.add_node({c}, {a.id()});
    const auto& av = t.val(a.id());
    std::copy(av.begin() + static_cast<std::ptrdiff_t>(row) * c,
              av.begin() + static_cast<std::ptrdiff_t>(row + 1) * c, t.val(id).begin());
    t.node(id).pull = [row, c, pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        auto& gp = tp.grad(pa);
        const auto& g = tp.grad(self);
        for (int i = 0; i < c; ++i) gp[static_cast<std::size_t>(row) * c + i] += g[static_cast<std::size_t>(i)];
    };
    return t.handle(id);
}

inline Tensor slice_1d(const Tensor& a, int start, int len) {
    detail::require_rank(a, 1, "slice_1d");
    const int n = a.shape()[0];
    if (start < 0 || len <= 0 || start + len > n) {
        throw ShapeError("slice_1d: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of bounds for " + shape_str(a.shape()));
    }
    Tape& t = *a.tape();
    int id = t.add_node({len}, {a.id()});
    const auto& av = t.val(a.id());
    std::copy(av.begin() + start, av.begin() + start + len, t.val(id).begin());
    t.node(id).pull = [start, len, pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        auto& gp = tp.grad(pa);
        const auto& g = tp.grad(self);
        for (int i = 0; i < len; ++i) gp[static_cast<std::size_t>(start + i)] += g[static_cast<std::size_t>(i)];
    };
    return t.handle(id);
}

// Single column of a matrix as a rank-1 tensor.
inline Tensor column(const Tensor& a, int col) {
    detail::require_rank(a, 2, "column");
    const int r = a.shape()[0], c = a.shape()[1];
    if (col < 0 || col >= c) {
        throw ShapeError("column: column " + std::to_string(col) + " out of bounds for " + shape_str(a.shape()));
    }
    Tape& t = *a.tape();
    int id = t.add_node({r}, {a.id()});
    const auto& av = t.val(a.id());
    for (int i = 0; i < r; ++i) t.val(id)[static_cast<std::size_t>(i)] = av[static_cast<std::size_t>(i) * c + col];
    t.node(id).pull = [r, c, col, pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        auto& gp = tp.grad(pa);
        const auto& g = tp.grad(self);
        for (int i = 0; i < r; ++i) gp[static_cast<std::size_t>(i) * c + col] += g[static_cast<std::size_t>(i)];
    };
    return t.handle(id);
}

// ---- elementwise binary ----

namespace detail {

template <class Fwd, class Pull>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Pull pull) {
    require_same_tape(a, b, op);
    require_same_shape(a, b, op);
    Tape& t = *a.tape();
    int id = t.add_node(a.shape(), {a.id(), b.id()});
    const auto& av = t.val(a.id());
    const auto& bv = t.val(b.id());
    auto& y = t.val(id);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(av[i], bv[i]);
    t.node(id).pull = pull;
    return t.handle(id);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_same_shape(
        a, b, "add", [](double x, double y) { return x + y; },
        [pa = a.id(), pb = b.id()](Tape& tp, int self) {
            const auto& g = tp.grad(self);
            if (!tp.grad(pa).empty()) {
                auto& ga = tp.grad(pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (!tp.grad(pb).empty()) {
                auto& gb = tp.grad(pb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_same_shape(
        a, b, "sub", [](double x, double y) { return x - y; },
        [pa = a.id(), pb = b.id()](Tape& tp, int self) {
            const auto& g = tp.grad(self);
            if (!tp.grad(pa).empty()) {
                auto& ga = tp.grad(pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (!tp.grad(pb).empty()) {
                auto& gb = tp.grad(pb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_same_shape(
        a, b, "mul", [](double x, double y) { return x * y; },
        [pa = a.id(), pb = b.id()](Tape& tp, int self) {
            const auto& g = tp.grad(self);
            const auto& av = tp.val(pa);
            const auto& bv = tp.val(pb);
            if (!tp.grad(pa).empty()) {
                auto& ga = tp.grad(pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (!tp.grad(pb).empty()) {
                auto& gb = tp.grad(pb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
}

// mat[r,c] + vec[c], vec broadcast over rows.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    detail::require_same_tape(m, v, "add_rowvec");
    detail::require_rank(m, 2, "add_rowvec");
    detail::require_rank(v, 1, "add_rowvec");
    const int r = m.shape()[0], c = m.shape()[1];
    if (v.shape()[0] != c) {
        throw ShapeError("add_rowvec: shapes disagree: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
    }
    Tape& t = *m.tape();
    int id = t.add_node({r, c}, {m.id(), v.id()});
    const auto& mv = t.val(m.id());
    const auto& vv = t.val(v.id());
    auto& y = t.val(id);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            y[static_cast<std::size_t>(i) * c + j] = mv[static_cast<std::size_t>(i) * c + j] + vv[static_cast<std::size_t>(j)];
        }
    }
    t.node(id).pull = [r, c, pm = m.id(), pv = v.id()](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        if (!tp.grad(pm).empty()) {
            auto& gm = tp.grad(pm);
            for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
        }
        if (!tp.grad(pv).empty()) {
            auto& gv = tp.grad(pv);
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * c + j];
            }
        }
    };
    return t.handle(id);
}

// mat[r,c] with row i scaled by vec[i].
inline Tensor scale_rows(const Tensor& m, const Tensor& v) {
    detail::require_same_tape(m, v, "scale_rows");
    detail::require_rank(m, 2, "scale_rows");
    detail::require_rank(v, 1, "scale_rows");
    const int r = m.shape()[0], c = m.shape()[1];
    if (v.shape()[0] != r) {
        throw ShapeError("scale_rows: shapes disagree: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
    }
    Tape& t = *m.tape();
    int id = t.add_node({r, c}, {m.id(), v.id()});
    const auto& mv = t.val(m.id());
    const auto& vv = t.val(v.id());
    auto& y = t.val(id);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            y[static_cast<std::size_t>(i) * c + j] = mv[static_cast<std::size_t>(i) * c + j] * vv[static_cast<std::size_t>(i)];
        }
    }
    t.node(id).pull = [r, c, pm = m.id(), pv = v.id()](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& mv = tp.val(pm);
        const auto& vv = tp.val(pv);
        if (!tp.grad(pm).empty()) {
            auto& gm = tp.grad(pm);
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) {
                    gm[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(i) * c + j] * vv[static_cast<std::size_t>(i)];
                }
            }
        }
        if (!tp.grad(pv).empty()) {
            auto& gv = tp.grad(pv);
            for (int i = 0; i < r; ++i) {
                double acc = 0.0;
                for (int j = 0; j < c; ++j) {
                    acc += g[static_cast<std::size_t>(i) * c + j] * mv[static_cast<std::size_t>(i) * c + j];
                }
                gv[static_cast<std::size_t>(i)] += acc;
            }
        }
    };
    return t.handle(id);
}

// ---- elementwise unary ----

namespace detail {

// dfn(x, y) must return dy/dx given input x and output y.
template <class Fn, class Dfn>
Tensor unary(const Tensor& a, const char* op, Fn fn, Dfn dfn) {
    (void)op;
    Tape& t = *a.tape();
    int id = t.add_node(a.shape(), {a.id()});
    const auto& av = t.val(a.id());
    auto& y = t.val(id);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fn(av[i]);
    t.node(id).pull = [pa = a.id(), dfn](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        const auto& g = tp.grad(self);
        const auto& x = tp.val(pa);
        const auto& y = tp.val(self);
        auto& gp = tp.grad(pa);
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * dfn(x[i], y[i]);
    };
    return t.handle(id);
}

}  // namespace detail

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary(
        a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_const(const Tensor& a, double c) {
    return detail::unary(
        a, "add_const", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor tanh(const Tensor& a) {
    return detail::unary(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor elu(const Tensor& a, double alpha = 1.0) {
    return detail::unary(
        a, "elu", [alpha](double x) { return x > 0.0 ? x : alpha * (std::exp(x) - 1.0); },
        [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

// Subgradient 0 at the kink.
inline Tensor abs(const Tensor& a) {
    return detail::unary(
        a, "abs", [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    const auto vals = a.values();
    for (double x : vals) {
        if (!(x > 0.0)) {
            throw std::domain_error("log: input " + std::to_string(x) + " is not strictly positive");
        }
    }
    return detail::unary(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// max(x, floor); gradient 0 where the floor is active.
inline Tensor clamp_min(const Tensor& a, double floor) {
    return detail::unary(
        a, "clamp_min", [floor](double x) { return x > floor ? x : floor; },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& a) {
    Tape& t = *a.tape();
    int id = t.add_node({1}, {a.id()});
    double acc = 0.0;
    for (double v : t.val(a.id())) acc += v;
    t.val(id)[0] = acc;
    t.node(id).pull = [pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        const double g = tp.grad(self)[0];
        auto& gp = tp.grad(pa);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g;
    };
    return t.handle(id);
}

// Row sums of a matrix: [r,c] -> [r].
inline Tensor row_sums(const Tensor& a) {
    detail::require_rank(a, 2, "row_sums");
    const int r = a.shape()[0], c = a.shape()[1];
    Tape& t = *a.tape();
    int id = t.add_node({r}, {a.id()});
    const auto& av = t.val(a.id());
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += av[static_cast<std::size_t>(i) * c + j];
        t.val(id)[static_cast<std::size_t>(i)] = acc;
    }
    t.node(id).pull = [r, c, pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        const auto& g = tp.grad(self);
        auto& gp = tp.grad(pa);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) gp[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(i)];
        }
    };
    return t.handle(id);
}

// ---- softmax and sampling ----

// Row-wise softmax with max subtraction for stability.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_rank(a, 2, "softmax_rows");
    const int r = a.shape()[0], c = a.shape()[1];
    Tape& t = *a.tape();
    int id = t.add_node({r, c}, {a.id()});
    const auto& av = t.val(a.id());
    auto& y = t.val(id);
    for (int i = 0; i < r; ++i) {
        const double* row = av.data() + static_cast<std::ptrdiff_t>(i) * c;
        double* out = y.data() + static_cast<std::ptrdiff_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - mx);
            z += out[j];
        }
        for (int j = 0; j < c; ++j) out[j] /= z;
    }
    t.node(id).pull = [r, c, pa = a.id()](Tape& tp, int self) {
        if (tp.grad(pa).empty()) return;
        const auto& g = tp.grad(self);
        const auto& y = tp.val(self);
        auto& gp = tp.grad(pa);
        for (int i = 0; i < r; ++i) {
            const double* grow = g.data() + static_cast<std::ptrdiff_t>(i) * c;
            const double* prow = y.data() + static_cast<std::ptrdiff_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += grow[j] * prow[j];
            for (int j = 0; j < c; ++j) {
                gp[static_cast<std::size_t>(i) * c + j] += prow[j] * (grow[j] - dot);
            }
        }
    };
    return t.handle(id);
}

// Straight-through Gumbel-Softmax over probability rows. Forward emits a hard
// one-hot at argmax(log p + g); backward flows through the relaxed sample
// softmax((log p + g) / tau) as if it had been the forward output.
// `noise` supplies one Gumbel draw per entry and is treated as a constant.
inline Tensor gumbel_st(const Tensor& probs, double temperature, std::span<const double> noise) {
    detail::require_rank(probs, 2, "gumbel_st");
    if (!(temperature > 0.0)) {
        throw std::domain_error("gumbel_st: temperature must be positive, got " + std::to_string(temperature));
    }
    const int r = probs.shape()[0], c = probs.shape()[1];
    if (static_cast<std::int64_t>(noise.size()) != numel(probs.shape())) {
        throw ShapeError("gumbel_st: noise count " + std::to_string(noise.size()) + " does not match " +
                         shape_str(probs.shape()));
    }
    constexpr double kProbFloor = 1e-10;
    Tape& t = *probs.tape();
    int id = t.add_node({r, c}, {probs.id()});
    Tape::Node& n = t.node(id);
    n.aux.resize(static_cast<std::size_t>(r) * c);  // relaxed sample
    const auto& pv = t.val(probs.id());
    auto& y = t.val(id);
    for (int i = 0; i < r; ++i) {
        const double* prow = pv.data() + static_cast<std::ptrdiff_t>(i) * c;
        const double* grow = noise.data() + static_cast<std::ptrdiff_t>(i) * c;
        double* hard = y.data() + static_cast<std::ptrdiff_t>(i) * c;
        double* soft = n.aux.data() + static_cast<std::ptrdiff_t>(i) * c;
        double best = -1e300;
        int arg = 0;
        double mx = -1e300;
        for (int j = 0; j < c; ++j) {
            double p = prow[j];
            if (!std::isfinite(p)) {
                throw std::domain_error("gumbel_st: non-finite probability at row " + std::to_string(i));
            }
            double u = (std::log(p > kProbFloor ? p : kProbFloor) + grow[j]) / temperature;
            soft[j] = u;
            if (u > mx) mx = u;
            if (u > best) {
                best = u;
                arg = j;
            }
        }
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            soft[j] = std::exp(soft[j] - mx);
            z += soft[j];
        }
        for (int j = 0; j < c; ++j) {
            soft[j] /= z;
            hard[j] = (j == arg) ? 1.0 : 0.0;
        }
    }
    n.pull = [r, c, temperature, pp = probs.id()](Tape& tp, int self) {
        if (tp.grad(pp).empty()) return;
        const auto& g = tp.grad(self);
        const auto& soft = tp.node(self).aux;
        const auto& pv = tp.val(pp);
        auto& gp = tp.grad(pp);
        for (int i = 0; i < r; ++i) {
            const double* grow = g.data() + static_cast<std::ptrdiff_t>(i) * c;
            const double* yrow = soft.data() + static_cast<std::ptrdiff_t>(i) * c;
            const double* prow = pv.data() + static_cast<std::ptrdiff_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += grow[j] * yrow[j];
            for (int j = 0; j < c; ++j) {
                double p = prow[j] > kProbFloor ? prow[j] : kProbFloor;
                double dlogit = yrow[j] * (grow[j] - dot) / temperature;  // grad into (log p + g)/1
                if (prow[j] > kProbFloor) {
                    gp[static_cast<std::size_t>(i) * c + j] += dlogit / p;
                }
            }
        }
    };
    return t.handle(id);
}

// Relaxed Gumbel-Softmax sample built from primitive ops. Forward equals the
// soft sample; used by gradient checks where the hard forward is by design
// inconsistent with its straight-through backward.
inline Tensor gumbel_relaxed(const Tensor& probs, double temperature, std::span<const double> noise) {
    detail::require_rank(probs, 2, "gumbel_relaxed");
    if (!(temperature > 0.0)) {
        throw std::domain_error("gumbel_relaxed: temperature must be positive, got " + std::to_string(temperature));
    }
    if (static_cast<std::int64_t>(noise.size()) != numel(probs.shape())) {
        throw ShapeError("gumbel_relaxed: noise count " + std::to_string(noise.size()) + " does not match " +
                         shape_str(probs.shape()));
    }
    Tape& t = *probs.tape();
    Tensor g = t.leaf(probs.shape(), noise);
    Tensor logits = add(log(clamp_min(probs, 1e-10)), g);
    return softmax_rows(scale(logits, 1.0 / temperature));
}

// ---- fused recurrent cell ----

// One GRU step. Gate layout in the weight matrices is [reset | update | candidate].
//   r = sigmoid(x Wx_r + bx_r + h Wh_r + bh_r)
//   z = sigmoid(x Wx_z + bx_z + h Wh_z + bh_z)
//   n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
//   h' = (1 - z) * n + z * h
inline Tensor gru_step(const Tensor& x, const Tensor& h, const Tensor& wx, const Tensor& wh,
                       const Tensor& bx, const Tensor& bh) {
    detail::require_rank(x, 2, "gru_step");
    detail::require_rank(h, 2, "gru_step");
    detail::require_rank(wx, 2, "gru_step");
    detail::require_rank(wh, 2, "gru_step");
    detail::require_rank(bx, 1, "gru_step");
    detail::require_rank(bh, 1, "gru_step");
    const int R = x.shape()[0], I = x.shape()[1], H = h.shape()[1];
    if (h.shape()[0] != R || wx.shape()[0] != I || wx.shape()[1] != 3 * H || wh.shape()[0] != H ||
        wh.shape()[1] != 3 * H || bx.shape()[0] != 3 * H || bh.shape()[0] != 3 * H) {
        throw ShapeError("gru_step: shapes disagree: x " + shape_str(x.shape()) + ", h " + shape_str(h.shape()) +
                         ", wx " + shape_str(wx.shape()) + ", wh " + shape_str(wh.shape()) + ", bx " +
                         shape_str(bx.shape()) + ", bh " + shape_str(bh.shape()));
    }
    Tape& t = *x.tape();
    int id = t.add_node({R, H}, {x.id(), h.id(), wx.id(), wh.id(), bx.id(), bh.id()});
    Tape::Node& node = t.node(id);
    // aux layout: r, z, n, q (q = h Wh_n + bh_n), each R x H
    node.aux.resize(static_cast<std::size_t>(4) * R * H);
    double* rg = node.aux.data();
    double* zg = rg + static_cast<std::ptrdiff_t>(R) * H;
    double* ng = zg + static_cast<std::ptrdiff_t>(R) * H;
    double* qg = ng + static_cast<std::ptrdiff_t>(R) * H;

    detail::RowMat px = detail::mat(t.val(x.id()), R, I) * detail::mat(t.val(wx.id()), I, 3 * H);
    detail::RowMat ph = detail::mat(t.val(h.id()), R, H) * detail::mat(t.val(wh.id()), H, 3 * H);
    const auto& bxv = t.val(bx.id());
    const auto& bhv = t.val(bh.id());
    const auto& hv = t.val(h.id());
    auto& y = t.val(id);
    for (int i = 0; i < R; ++i) {
        for (int j = 0; j < H; ++j) {
            const std::size_t ij = static_cast<std::size_t>(i) * H + j;
            double ar = px(i, j) + bxv[static_cast<std::size_t>(j)] + ph(i, j) + bhv[static_cast<std::size_t>(j)];
            double az = px(i, H + j) + bxv[static_cast<std::size_t>(H + j)] + ph(i, H + j) + bhv[static_cast<std::size_t>(H + j)];
            double q = ph(i, 2 * H + j) + bhv[static_cast<std::size_t>(2 * H + j)];
            double r = 1.0 / (1.0 + std::exp(-ar));
            double z = 1.0 / (1.0 + std::exp(-az));
            double n = std::tanh(px(i, 2 * H + j) + bxv[static_cast<std::size_t>(2 * H + j)] + r * q);
            rg[ij] = r;
            zg[ij] = z;
            ng[ij] = n;
            qg[ij] = q;
            y[ij] = (1.0 - z) * n + z * hv[ij];
        }
    }
    node.pull = [R, I, H, pxid = x.id(), phid = h.id(), pwx = wx.id(), pwh = wh.id(), pbx = bx.id(),
                 pbh = bh.id()](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& aux = tp.node(self).aux;
        const double* rg = aux.data();
        const double* zg = rg + static_cast<std::ptrdiff_t>(R) * H;
        const double* ng = zg + static_cast<std::ptrdiff_t>(R) * H;
        const double* qg = ng + static_cast<std::ptrdiff_t>(R) * H;
        const auto& hv = tp.val(phid);
        // Packed gate-preactivation gradients: Gx feeds the x side, Gh the h side.
        detail::RowMat Gx(R, 3 * H), Gh(R, 3 * H);
        for (int i = 0; i < R; ++i) {
            for (int j = 0; j < H; ++j) {
                const std::size_t ij = static_cast<std::size_t>(i) * H + j;
                double go = g[ij];
                double r = rg[ij], z = zg[ij], n = ng[ij], q = qg[ij];
                double dn = go * (1.0 - z);
                double dz = go * (hv[ij] - n);
                double dan = dn * (1.0 - n * n);
                double dr = dan * q;
                double daz = dz * z * (1.0 - z);
                double dar = dr * r * (1.0 - r);
                Gx(i, j) = dar;
                Gx(i, H + j) = daz;
                Gx(i, 2 * H + j) = dan;
                Gh(i, j) = dar;
                Gh(i, H + j) = daz;
                Gh(i, 2 * H + j) = dan * r;
            }
        }
        if (!tp.grad(pxid).empty()) {
            detail::mat(tp.grad(pxid), R, I).noalias() += Gx * detail::mat(tp.val(pwx), I, 3 * H).transpose();
        }
        if (!tp.grad(pwx).empty()) {
            detail::mat(tp.grad(pwx), I, 3 * H).noalias() += detail::mat(tp.val(pxid), R, I).transpose() * Gx;
        }
        if (!tp.grad(phid).empty()) {
            auto gh = detail::mat(tp.grad(phid), R, H);
            gh.noalias() += Gh * detail::mat(tp.val(pwh), H, 3 * H).transpose();
            for (int i = 0; i < R; ++i) {
                for (int j = 0; j < H; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i) * H + j;
                    gh(i, j) += g[ij] * zg[ij];
                }
            }
        }
        if (!tp.grad(pwh).empty()) {
            detail::mat(tp.grad(pwh), H, 3 * H).noalias() += detail::mat(tp.val(phid), R, H).transpose() * Gh;
        }
        if (!tp.grad(pbx).empty()) {
            auto& gbx = tp.grad(pbx);
            for (int i = 0; i < R; ++i) {
                for (int j = 0; j < 3 * H; ++j) gbx[static_cast<std::size_t>(j)] += Gx(i, j);
            }
        }
        if (!tp.grad(pbh).empty()) {
            auto& gbh = tp.grad(pbh);
            for (int i = 0; i < R; ++i) {
                for (int j = 0; j < 3 * H; ++j) gbh[static_cast<std::size_t>(j)] += Gh(i, j);
            }
        }
    };
    return t.handle(id);
}

}  // namespace ldsa
