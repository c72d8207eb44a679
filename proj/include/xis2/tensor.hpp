#ifndef XIS2_TENSOR_HPP
#define XIS2_TENSOR_HPP

// Tape-based reverse-mode autodiff over dense row-major tensors.
// The graph is rebuilt on every forward pass; backward() walks it in
// reverse topological order. Matrix products go through Eigen, everything
// else is plain loops, so results are deterministic given identical inputs.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xis2/common.hpp"
#include "xis2/rng.hpp"

namespace xis2 {

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

// vector allocator that skips value-initialization on resize; intermediate
// buffers are fully written right after allocation and the zeroing pass
// would dominate the elementwise ops
template <class T>
struct DefaultInitAlloc : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = DefaultInitAlloc<U>;
    };
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};
}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// RAII guard that disables graph recording in its scope.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <class S>
using Values = std::vector<S, detail::DefaultInitAlloc<S>>;

template <class S>
struct Node {
    Shape shape;
    Values<S> value;
    Values<S> grad;  // empty until first accumulation
    bool tracked = false; // gradient flows through this node
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(const Node<S>&)> back;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
    }
};

template <class S>
class TensorT {
public:
    using Scalar = S;
    using Buffer = Values<S>;

    TensorT() = default;

    static TensorT zeros(const Shape& shape) { return filled(shape, S(0)); }

    static TensorT filled(const Shape& shape, S v) {
        TensorT t = uninit(shape);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static TensorT from(const Shape& shape, Buffer values) {
        check_shape(xis2::numel(shape) == static_cast<int64_t>(values.size()),
                    "tensor init: shape " + shape_str(shape) + " does not match " +
                        std::to_string(values.size()) + " values");
        TensorT t;
        t.n_ = std::make_shared<Node<S>>();
        t.n_->shape = shape;
        t.n_->value = std::move(values);
        return t;
    }

    static TensorT scalar(S v) { return from({1}, {v}); }

    static TensorT randn(const Shape& shape, Rng& rng, S stddev = S(1)) {
        TensorT t = uninit(shape);
        for (auto& x : t.data()) x = static_cast<S>(rng.normal() * static_cast<double>(stddev));
        return t;
    }

    static TensorT uninit(const Shape& shape) {
        for (int64_t d : shape)
            check_shape(d > 0, "tensor init: nonpositive dim in " + shape_str(shape));
        TensorT t;
        t.n_ = std::make_shared<Node<S>>();
        t.n_->shape = shape;
        t.n_->value.resize(static_cast<size_t>(xis2::numel(shape)));
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return n_->numel(); }
    int64_t dim(size_t i) const { return n_->shape[i]; }
    size_t rank() const { return n_->shape.size(); }

    Buffer& data() { return n_->value; }
    const Buffer& data() const { return n_->value; }

    S item() const {
        check_shape(numel() == 1, "item(): tensor is not scalar, shape " + shape_str(shape()));
        return n_->value[0];
    }

    bool tracked() const { return n_ && n_->tracked; }
    void set_requires_grad(bool v) { n_->tracked = v; }

    const Buffer& grad() const {
        static const Buffer empty;
        return n_->grad.empty() ? empty : n_->grad;
    }
    Buffer grad_or_zeros() const {
        if (n_->grad.empty()) {
            Buffer z;
            z.assign(n_->value.size(), S(0));
            return z;
        }
        return n_->grad;
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
    }

    std::shared_ptr<Node<S>> node() const { return n_; }

    // Reverse accumulation from a scalar loss. Grads accumulate (+=) into
    // every tracked ancestor; repeated calls without zeroing add up.
    void backward() const {
        if (numel() != 1)
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(shape()));
        std::vector<Node<S>*> order;
        std::unordered_set<Node<S>*> seen;
        topo(n_.get(), seen, order);
        // interior grads are per-sweep scratch; only leaves accumulate
        // across repeated backward calls
        for (Node<S>* nd : order)
            if (nd->back) nd->grad.clear();
        n_->ensure_grad();
        n_->grad[0] += S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<S>* nd = *it;
            if (nd->back && !nd->grad.empty()) nd->back(*nd);
        }
    }

private:
    static void topo(Node<S>* nd, std::unordered_set<Node<S>*>& seen,
                     std::vector<Node<S>*>& order) {
        if (!nd->tracked || seen.count(nd)) return;
        seen.insert(nd);
        for (auto& p : nd->parents) topo(p.get(), seen, order);
        order.push_back(nd);
    }

    std::shared_ptr<Node<S>> n_;
};

namespace detail {

template <class S>
bool track(std::initializer_list<const TensorT<S>*> ins) {
    if (!grad_mode_enabled()) return false;
    for (auto* t : ins)
        if (t->tracked()) return true;
    return false;
}

template <class S>
void attach(TensorT<S>& out, std::vector<std::shared_ptr<Node<S>>> parents,
            std::function<void(const Node<S>&)> back) {
    out.node()->tracked = true;
    out.node()->parents = std::move(parents);
    out.node()->back = std::move(back);
}

template <class S>
void acc(const std::shared_ptr<Node<S>>& p, const S* g, int64_t n) {
    if (!p->tracked) return;
    p->ensure_grad();
    S* dst = p->grad.data();
    for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

}  // namespace detail

// ---- elementwise ----

template <class S, class Fwd, class Bwd>
TensorT<S> unary_op(const TensorT<S>& a, Fwd fwd, Bwd dfdx) {
    TensorT<S> out = TensorT<S>::uninit(a.shape());
    const S* x = a.data().data();
    S* y = out.data().data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node(), dfdx](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S* xv = pa->value.data();
            const S* yv = self.value.data();
            const S* g = self.grad.data();
            for (int64_t i = 0; i < self.numel(); ++i)
                pa->grad[static_cast<size_t>(i)] += dfdx(xv[i], yv[i]) * g[i];
        });
    }
    return out;
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
    return unary_op(
        a, [](S x) { return x > S(0) ? x : S(0); },
        [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <class S>
TensorT<S> leaky_relu(const TensorT<S>& a, S slope = S(0.2)) {
    return unary_op(
        a, [slope](S x) { return x > S(0) ? x : slope * x; },
        [slope](S x, S) { return x > S(0) ? S(1) : slope; });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
    return unary_op(
        a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
        [](S, S y) { return y * (S(1) - y); });
}

template <class S>
TensorT<S> log_(const TensorT<S>& a) {
    return unary_op(
        a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
TensorT<S> exp_(const TensorT<S>& a) {
    return unary_op(
        a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
TensorT<S> square(const TensorT<S>& a) {
    return unary_op(
        a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <class S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
    return unary_op(
        a, [lo, hi](S x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](S x, S) { return (x > lo && x < hi) ? S(1) : S(0); });
}

template <class S>
TensorT<S> abs_(const TensorT<S>& a) {
    return unary_op(
        a, [](S x) { return std::abs(x); },
        [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <class S>
TensorT<S> neg(const TensorT<S>& a) {
    return unary_op(
        a, [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <class S>
TensorT<S> add(const TensorT<S>& a, S c) {
    return unary_op(
        a, [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, S c) {
    return unary_op(
        a, [c](S x) { return x * c; }, [c](S, S) { return c; });
}

template <class S, class Fwd>
TensorT<S> binary_op(const TensorT<S>& a, const TensorT<S>& b, const char* name, Fwd fwd,
                     std::function<void(const Node<S>&, Node<S>&, Node<S>&)> back) {
    check_shape(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    TensorT<S> out = TensorT<S>::uninit(a.shape());
    const S* x = a.data().data();
    const S* y = b.data().data();
    S* z = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) z[i] = fwd(x[i], y[i]);
    if (detail::track<S>({&a, &b})) {
        detail::attach<S>(out, {a.node(), b.node()},
                          [pa = a.node(), pb = b.node(), back](const Node<S>& self) {
                              back(self, *pa, *pb);
                          });
    }
    return out;
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op<S>(
        a, b, "add", [](S x, S y) { return x + y; },
        [](const Node<S>& self, Node<S>& pa, Node<S>& pb) {
            const S* g = self.grad.data();
            const int64_t n = self.numel();
            if (pa.tracked) {
                pa.ensure_grad();
                for (int64_t i = 0; i < n; ++i) pa.grad[static_cast<size_t>(i)] += g[i];
            }
            if (pb.tracked) {
                pb.ensure_grad();
                for (int64_t i = 0; i < n; ++i) pb.grad[static_cast<size_t>(i)] += g[i];
            }
        });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op<S>(
        a, b, "sub", [](S x, S y) { return x - y; },
        [](const Node<S>& self, Node<S>& pa, Node<S>& pb) {
            const S* g = self.grad.data();
            const int64_t n = self.numel();
            if (pa.tracked) {
                pa.ensure_grad();
                for (int64_t i = 0; i < n; ++i) pa.grad[static_cast<size_t>(i)] += g[i];
            }
            if (pb.tracked) {
                pb.ensure_grad();
                for (int64_t i = 0; i < n; ++i) pb.grad[static_cast<size_t>(i)] -= g[i];
            }
        });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op<S>(
        a, b, "mul", [](S x, S y) { return x * y; },
        [](const Node<S>& self, Node<S>& pa, Node<S>& pb) {
            const S* g = self.grad.data();
            const int64_t n = self.numel();
            if (pa.tracked) {
                pa.ensure_grad();
                const S* yv = pb.value.data();
                for (int64_t i = 0; i < n; ++i) pa.grad[static_cast<size_t>(i)] += g[i] * yv[i];
            }
            if (pb.tracked) {
                pb.ensure_grad();
                const S* xv = pa.value.data();
                for (int64_t i = 0; i < n; ++i) pb.grad[static_cast<size_t>(i)] += g[i] * xv[i];
            }
        });
}

// ---- reductions ----

template <class S>
TensorT<S> sum(const TensorT<S>& a) {
    S acc = S(0);
    for (S v : a.data()) acc += v;
    TensorT<S> out = TensorT<S>::scalar(acc);
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node()](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S g = self.grad[0];
            for (auto& gv : pa->grad) gv += g;
        });
    }
    return out;
}

template <class S>
TensorT<S> mean(const TensorT<S>& a) {
    const S inv = S(1) / static_cast<S>(a.numel());
    S acc = S(0);
    for (S v : a.data()) acc += v;
    TensorT<S> out = TensorT<S>::scalar(acc * inv);
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node(), inv](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S g = self.grad[0] * inv;
            for (auto& gv : pa->grad) gv += g;
        });
    }
    return out;
}

// ---- structure ----

template <class S>
TensorT<S> reshape(const TensorT<S>& a, const Shape& shape) {
    check_shape(numel(shape) == a.numel(), "reshape: element count mismatch " +
                                               shape_str(a.shape()) + " -> " + shape_str(shape));
    TensorT<S> out = TensorT<S>::from(shape, a.data());
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node()](const Node<S>& self) {
            detail::acc(pa, self.grad.data(), self.numel());
        });
    }
    return out;
}

template <class S>
TensorT<S> detach(const TensorT<S>& a) {
    return TensorT<S>::from(a.shape(), a.data());
}

template <class S>
TensorT<S> transpose(const TensorT<S>& a) {
    check_shape(a.rank() == 2, "transpose: expected rank-2, got " + shape_str(a.shape()));
    const int64_t r = a.dim(0), c = a.dim(1);
    TensorT<S> out = TensorT<S>::uninit({c, r});
    const S* x = a.data().data();
    S* y = out.data().data();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node(), r, c](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S* g = self.grad.data();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j)
                    pa->grad[static_cast<size_t>(i * c + j)] += g[j * r + i];
        });
    }
    return out;
}

// rows [start,end) of a rank-2 tensor
template <class S>
TensorT<S> slice_rows(const TensorT<S>& a, int64_t start, int64_t end) {
    check_shape(a.rank() == 2, "slice_rows: expected rank-2, got " + shape_str(a.shape()));
    check_shape(0 <= start && start < end && end <= a.dim(0),
                "slice_rows: range [" + std::to_string(start) + "," + std::to_string(end) +
                    ") out of bounds for " + shape_str(a.shape()));
    const int64_t c = a.dim(1);
    TensorT<S> out = TensorT<S>::uninit({end - start, c});
    std::copy_n(a.data().data() + start * c, (end - start) * c, out.data().data());
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node(), start, c](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S* g = self.grad.data();
            for (int64_t i = 0; i < self.numel(); ++i)
                pa->grad[static_cast<size_t>(start * c + i)] += g[i];
        });
    }
    return out;
}

// columns [start,end) of a rank-2 tensor
template <class S>
TensorT<S> slice_cols(const TensorT<S>& a, int64_t start, int64_t end) {
    check_shape(a.rank() == 2, "slice_cols: expected rank-2, got " + shape_str(a.shape()));
    check_shape(0 <= start && start < end && end <= a.dim(1),
                "slice_cols: range [" + std::to_string(start) + "," + std::to_string(end) +
                    ") out of bounds for " + shape_str(a.shape()));
    const int64_t r = a.dim(0), c = a.dim(1), w = end - start;
    TensorT<S> out = TensorT<S>::uninit({r, w});
    const S* x = a.data().data();
    S* y = out.data().data();
    for (int64_t i = 0; i < r; ++i)
        std::copy_n(x + i * c + start, w, y + i * w);
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node(), start, r, c, w](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S* g = self.grad.data();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < w; ++j)
                    pa->grad[static_cast<size_t>(i * c + start + j)] += g[i * w + j];
        });
    }
    return out;
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
    check_shape(!parts.empty(), "concat_cols: empty input");
    const int64_t r = parts[0].dim(0);
    int64_t w = 0;
    for (const auto& p : parts) {
        check_shape(p.rank() == 2 && p.dim(0) == r,
                    "concat_cols: row mismatch, expected " + std::to_string(r) + " got " +
                        shape_str(p.shape()));
        w += p.dim(1);
    }
    TensorT<S> out = TensorT<S>::uninit({r, w});
    S* y = out.data().data();
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t pc = p.dim(1);
        const S* x = p.data().data();
        for (int64_t i = 0; i < r; ++i) std::copy_n(x + i * pc, pc, y + i * w + off);
        off += pc;
    }
    bool any = false;
    if (grad_mode_enabled())
        for (const auto& p : parts) any = any || p.tracked();
    if (any) {
        std::vector<std::shared_ptr<Node<S>>> ps;
        std::vector<int64_t> widths;
        for (const auto& p : parts) {
            ps.push_back(p.node());
            widths.push_back(p.dim(1));
        }
        detail::attach<S>(out, ps, [ps, widths, r, w](const Node<S>& self) {
            const S* g = self.grad.data();
            int64_t off2 = 0;
            for (size_t k = 0; k < ps.size(); ++k) {
                if (ps[k]->tracked) {
                    ps[k]->ensure_grad();
                    for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < widths[k]; ++j)
                            ps[k]->grad[static_cast<size_t>(i * widths[k] + j)] +=
                                g[i * w + off2 + j];
                }
                off2 += widths[k];
            }
        });
    }
    return out;
}

// out[i,:] = a[idx[i],:]; backward scatter-adds, so a row picked n times
// receives n times the gradient
template <class S>
TensorT<S> gather_rows(const TensorT<S>& a, const std::vector<int64_t>& idx) {
    check_shape(a.rank() == 2, "gather_rows: expected rank-2, got " + shape_str(a.shape()));
    check_shape(!idx.empty(), "gather_rows: empty index list");
    const int64_t c = a.dim(1);
    for (int64_t i : idx)
        check_shape(0 <= i && i < a.dim(0), "gather_rows: index " + std::to_string(i) +
                                                " out of range for " + shape_str(a.shape()));
    TensorT<S> out = TensorT<S>::uninit({static_cast<int64_t>(idx.size()), c});
    const S* x = a.data().data();
    S* y = out.data().data();
    for (size_t i = 0; i < idx.size(); ++i) std::copy_n(x + idx[i] * c, c, y + i * c);
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node(), idx, c](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S* g = self.grad.data();
            for (size_t i = 0; i < idx.size(); ++i)
                for (int64_t j = 0; j < c; ++j)
                    pa->grad[static_cast<size_t>(idx[i] * c + j)] += g[i * c + j];
        });
    }
    return out;
}

// broadcast-add a length-d bias to every row of (r,d); the only sanctioned
// broadcast besides scalars
template <class S>
TensorT<S> add_rowwise(const TensorT<S>& a, const TensorT<S>& bias) {
    check_shape(a.rank() == 2 && bias.rank() == 1 && bias.dim(0) == a.dim(1),
                "add_rowwise: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
    const int64_t r = a.dim(0), c = a.dim(1);
    TensorT<S> out = TensorT<S>::uninit(a.shape());
    const S* x = a.data().data();
    const S* b = bias.data().data();
    S* y = out.data().data();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] + b[j];
    if (detail::track<S>({&a, &bias})) {
        detail::attach<S>(out, {a.node(), bias.node()},
                          [pa = a.node(), pb = bias.node(), r, c](const Node<S>& self) {
                              const S* g = self.grad.data();
                              if (pa->tracked) detail::acc(pa, g, r * c);
                              if (pb->tracked) {
                                  pb->ensure_grad();
                                  for (int64_t i = 0; i < r; ++i)
                                      for (int64_t j = 0; j < c; ++j)
                                          pb->grad[static_cast<size_t>(j)] += g[i * c + j];
                              }
                          });
    }
    return out;
}

// broadcast-add a length-r bias down the rows of (r,c): y[i,j] = x[i,j] + b[i].
// Used for per-channel conv biases where rows are channels.
template <class S>
TensorT<S> add_colwise(const TensorT<S>& a, const TensorT<S>& bias) {
    check_shape(a.rank() == 2 && bias.rank() == 1 && bias.dim(0) == a.dim(0),
                "add_colwise: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
    const int64_t r = a.dim(0), c = a.dim(1);
    TensorT<S> out = TensorT<S>::uninit(a.shape());
    const S* x = a.data().data();
    const S* b = bias.data().data();
    S* y = out.data().data();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] + b[i];
    if (detail::track<S>({&a, &bias})) {
        detail::attach<S>(out, {a.node(), bias.node()},
                          [pa = a.node(), pb = bias.node(), r, c](const Node<S>& self) {
                              const S* g = self.grad.data();
                              if (pa->tracked) detail::acc(pa, g, r * c);
                              if (pb->tracked) {
                                  pb->ensure_grad();
                                  for (int64_t i = 0; i < r; ++i) {
                                      S s = S(0);
                                      for (int64_t j = 0; j < c; ++j) s += g[i * c + j];
                                      pb->grad[static_cast<size_t>(i)] += s;
                                  }
                              }
                          });
    }
    return out;
}

// broadcast-add a per-channel bias over a rank-3 (C,F,T) tensor
template <class S>
TensorT<S> add_chanwise(const TensorT<S>& a, const TensorT<S>& bias) {
    check_shape(a.rank() == 3 && bias.rank() == 1 && bias.dim(0) == a.dim(0),
                "add_chanwise: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
    const int64_t c = a.dim(0), plane = a.dim(1) * a.dim(2);
    TensorT<S> out = TensorT<S>::uninit(a.shape());
    const S* x = a.data().data();
    const S* b = bias.data().data();
    S* y = out.data().data();
    for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < plane; ++j) y[i * plane + j] = x[i * plane + j] + b[i];
    if (detail::track<S>({&a, &bias})) {
        detail::attach<S>(out, {a.node(), bias.node()},
                          [pa = a.node(), pb = bias.node(), c, plane](const Node<S>& self) {
                              const S* g = self.grad.data();
                              if (pa->tracked) detail::acc(pa, g, c * plane);
                              if (pb->tracked) {
                                  pb->ensure_grad();
                                  for (int64_t i = 0; i < c; ++i) {
                                      S s = S(0);
                                      for (int64_t j = 0; j < plane; ++j) s += g[i * plane + j];
                                      pb->grad[static_cast<size_t>(i)] += s;
                                  }
                              }
                          });
    }
    return out;
}

// ---- linear algebra ----

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    check_shape(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<S> out = TensorT<S>::uninit({m, n});
    detail::ECMap<S> A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::EMap<S> C(out.data().data(), m, n);
    C.noalias() = A * B;
    if (detail::track<S>({&a, &b})) {
        detail::attach<S>(out, {a.node(), b.node()},
                          [pa = a.node(), pb = b.node(), m, k, n](const Node<S>& self) {
                              detail::ECMap<S> G(self.grad.data(), m, n);
                              if (pa->tracked) {
                                  pa->ensure_grad();
                                  detail::ECMap<S> B2(pb->value.data(), k, n);
                                  detail::EMap<S> GA(pa->grad.data(), m, k);
                                  GA.noalias() += G * B2.transpose();
                              }
                              if (pb->tracked) {
                                  pb->ensure_grad();
                                  detail::ECMap<S> A2(pa->value.data(), m, k);
                                  detail::EMap<S> GB(pb->grad.data(), k, n);
                                  GB.noalias() += A2.transpose() * G;
                              }
                          });
    }
    return out;
}

// row-wise softmax of a rank-2 tensor; each output row sums to 1
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& a) {
    check_shape(a.rank() == 2, "softmax_rows: expected rank-2, got " + shape_str(a.shape()));
    const int64_t r = a.dim(0), c = a.dim(1);
    TensorT<S> out = TensorT<S>::uninit(a.shape());
    const S* x = a.data().data();
    S* y = out.data().data();
    for (int64_t i = 0; i < r; ++i) {
        S mx = x[i * c];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
        S z = S(0);
        for (int64_t j = 0; j < c; ++j) {
            y[i * c + j] = std::exp(x[i * c + j] - mx);
            z += y[i * c + j];
        }
        const S inv = S(1) / z;
        for (int64_t j = 0; j < c; ++j) y[i * c + j] *= inv;
    }
    if (detail::track<S>({&a})) {
        detail::attach<S>(out, {a.node()}, [pa = a.node(), r, c](const Node<S>& self) {
            if (!pa->tracked) return;
            pa->ensure_grad();
            const S* yv = self.value.data();
            const S* g = self.grad.data();
            for (int64_t i = 0; i < r; ++i) {
                S dot = S(0);
                for (int64_t j = 0; j < c; ++j) dot += g[i * c + j] * yv[i * c + j];
                for (int64_t j = 0; j < c; ++j)
                    pa->grad[static_cast<size_t>(i * c + j)] +=
                        yv[i * c + j] * (g[i * c + j] - dot);
            }
        });
    }
    return out;
}

// layer norm over the last axis; gamma/beta have length d
template <class S>
TensorT<S> layer_norm(const TensorT<S>& a, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5)) {
    check_shape(a.rank() >= 1, "layer_norm: rank-0 input");
    const int64_t d = a.shape().back();
    check_shape(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
                "layer_norm: gamma/beta must have length " + std::to_string(d));
    const int64_t rows = a.numel() / d;
    TensorT<S> out = TensorT<S>::uninit(a.shape());
    const S* x = a.data().data();
    const S* gm = gamma.data().data();
    const S* bt = beta.data().data();
    S* y = out.data().data();
    std::vector<S> rstd(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        S mu = S(0);
        for (int64_t j = 0; j < d; ++j) mu += x[i * d + j];
        mu /= static_cast<S>(d);
        S var = S(0);
        for (int64_t j = 0; j < d; ++j) {
            const S t = x[i * d + j] - mu;
            var += t * t;
        }
        var /= static_cast<S>(d);
        const S rs = S(1) / std::sqrt(var + eps);
        rstd[static_cast<size_t>(i)] = rs;
        for (int64_t j = 0; j < d; ++j) y[i * d + j] = (x[i * d + j] - mu) * rs * gm[j] + bt[j];
    }
    if (detail::track<S>({&a, &gamma, &beta})) {
        detail::attach<S>(
            out, {a.node(), gamma.node(), beta.node()},
            [pa = a.node(), pg = gamma.node(), pb = beta.node(), rows, d,
             rstd = std::move(rstd)](const Node<S>& self) {
                const S* g = self.grad.data();
                const S* xv = pa->value.data();
                const S* gm = pg->value.data();
                if (pa->tracked) pa->ensure_grad();
                if (pg->tracked) pg->ensure_grad();
                if (pb->tracked) pb->ensure_grad();
                for (int64_t i = 0; i < rows; ++i) {
                    const S rs = rstd[static_cast<size_t>(i)];
                    S mu = S(0);
                    for (int64_t j = 0; j < d; ++j) mu += xv[i * d + j];
                    mu /= static_cast<S>(d);
                    // dxhat, plus running means used by the fused dx formula
                    S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
                    for (int64_t j = 0; j < d; ++j) {
                        const S xhat = (xv[i * d + j] - mu) * rs;
                        const S dxhat = g[i * d + j] * gm[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                        if (pg->tracked) pg->grad[static_cast<size_t>(j)] += g[i * d + j] * xhat;
                        if (pb->tracked) pb->grad[static_cast<size_t>(j)] += g[i * d + j];
                    }
                    if (!pa->tracked) continue;
                    mean_dxhat /= static_cast<S>(d);
                    mean_dxhat_xhat /= static_cast<S>(d);
                    for (int64_t j = 0; j < d; ++j) {
                        const S xhat = (xv[i * d + j] - mu) * rs;
                        const S dxhat = g[i * d + j] * gm[j];
                        pa->grad[static_cast<size_t>(i * d + j)] +=
                            rs * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            });
    }
    return out;
}

// ---- convolution (cross-correlation semantics) ----

inline int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t padding,
                               int64_t dilation = 1) {
    const int64_t eff = dilation * (kernel - 1) + 1;
    if (in + 2 * padding < eff) return 0;
    return (in + 2 * padding - eff) / stride + 1;
}

namespace detail {

// valid output range [lo,hi) for source index o*stride + off in [0,extent)
inline void conv_valid_range(int64_t off, int64_t stride, int64_t extent, int64_t out,
                             int64_t& lo, int64_t& hi) {
    lo = off < 0 ? (-off + stride - 1) / stride : 0;
    hi = off >= extent ? 0 : (extent - 1 - off) / stride + 1;
    hi = std::min(hi, out);
    lo = std::min(lo, hi);
}

// col[(ci*K+k), t] = x[ci, t*stride - pad + k], zero outside
template <class S>
void im2col_1d(const S* x, int64_t cin, int64_t tin, int64_t k, int64_t stride, int64_t pad,
               int64_t tout, S* col) {
    for (int64_t c = 0; c < cin; ++c)
        for (int64_t kk = 0; kk < k; ++kk) {
            S* row = col + (c * k + kk) * tout;
            const int64_t off = kk - pad;
            int64_t lo, hi;
            conv_valid_range(off, stride, tin, tout, lo, hi);
            std::fill(row, row + lo, S(0));
            const S* src = x + c * tin + off;
            if (stride == 1)
                std::copy(src + lo, src + hi, row + lo);
            else
                for (int64_t t = lo; t < hi; ++t) row[t] = src[t * stride];
            std::fill(row + hi, row + tout, S(0));
        }
}

template <class S>
void col2im_1d(const S* col, int64_t cin, int64_t tin, int64_t k, int64_t stride, int64_t pad,
               int64_t tout, S* dx) {
    for (int64_t c = 0; c < cin; ++c)
        for (int64_t kk = 0; kk < k; ++kk) {
            const S* row = col + (c * k + kk) * tout;
            const int64_t off = kk - pad;
            int64_t lo, hi;
            conv_valid_range(off, stride, tin, tout, lo, hi);
            S* dst = dx + c * tin + off;
            for (int64_t t = lo; t < hi; ++t) dst[t * stride] += row[t];
        }
}

template <class S>
void im2col_2d(const S* x, int64_t cin, int64_t fin, int64_t tin, int64_t kf, int64_t kt,
               int64_t sf, int64_t st, int64_t df, int64_t dt, int64_t pf, int64_t pt,
               int64_t fout, int64_t tout, S* col) {
    const int64_t patch = kf * kt;
    for (int64_t c = 0; c < cin; ++c)
        for (int64_t i = 0; i < kf; ++i) {
            const int64_t foff = i * df - pf;
            int64_t fo_lo, fo_hi;
            conv_valid_range(foff, sf, fin, fout, fo_lo, fo_hi);
            for (int64_t j = 0; j < kt; ++j) {
                S* row = col + (c * patch + i * kt + j) * (fout * tout);
                const int64_t toff = j * dt - pt;
                int64_t to_lo, to_hi;
                conv_valid_range(toff, st, tin, tout, to_lo, to_hi);
                std::fill(row, row + fo_lo * tout, S(0));
                for (int64_t fo = fo_lo; fo < fo_hi; ++fo) {
                    S* r = row + fo * tout;
                    const S* src = x + (c * fin + fo * sf + foff) * tin + toff;
                    std::fill(r, r + to_lo, S(0));
                    if (st == 1)
                        std::copy(src + to_lo, src + to_hi, r + to_lo);
                    else
                        for (int64_t to = to_lo; to < to_hi; ++to) r[to] = src[to * st];
                    std::fill(r + to_hi, r + tout, S(0));
                }
                std::fill(row + fo_hi * tout, row + fout * tout, S(0));
            }
        }
}

template <class S>
void col2im_2d(const S* col, int64_t cin, int64_t fin, int64_t tin, int64_t kf, int64_t kt,
               int64_t sf, int64_t st, int64_t df, int64_t dt, int64_t pf, int64_t pt,
               int64_t fout, int64_t tout, S* dx) {
    const int64_t patch = kf * kt;
    for (int64_t c = 0; c < cin; ++c)
        for (int64_t i = 0; i < kf; ++i) {
            const int64_t foff = i * df - pf;
            int64_t fo_lo, fo_hi;
            conv_valid_range(foff, sf, fin, fout, fo_lo, fo_hi);
            for (int64_t j = 0; j < kt; ++j) {
                const S* row = col + (c * patch + i * kt + j) * (fout * tout);
                const int64_t toff = j * dt - pt;
                int64_t to_lo, to_hi;
                conv_valid_range(toff, st, tin, tout, to_lo, to_hi);
                for (int64_t fo = fo_lo; fo < fo_hi; ++fo) {
                    const S* r = row + fo * tout;
                    S* dst = dx + (c * fin + fo * sf + foff) * tin + toff;
                    for (int64_t to = to_lo; to < to_hi; ++to) dst[to * st] += r[to];
                }
            }
        }
}

}  // namespace detail

// x: (C_in,T), w: (C_out,C_in,K) -> (C_out,T')
template <class S>
TensorT<S> conv1d(const TensorT<S>& x, const TensorT<S>& w, int64_t stride = 1,
                  int64_t padding = 0) {
    check_shape(x.rank() == 2 && w.rank() == 3, "conv1d: expected x (C_in,T) and w (C_out,C_in,K)");
    check_shape(x.dim(0) == w.dim(1), "conv1d: channel mismatch " + shape_str(x.shape()) +
                                          " vs " + shape_str(w.shape()));
    const int64_t cin = x.dim(0), tin = x.dim(1);
    const int64_t cout = w.dim(0), k = w.dim(2);
    const int64_t tout = conv_out_extent(tin, k, stride, padding);
    if (tout < 1)
        throw DimensionError("conv1d: input too short, T=" + std::to_string(tin) + " kernel " +
                             std::to_string(k) + " padding " + std::to_string(padding));
    TensorT<S> out = TensorT<S>::uninit({cout, tout});
    std::vector<S> col(static_cast<size_t>(cin * k * tout));
    detail::im2col_1d(x.data().data(), cin, tin, k, stride, padding, tout, col.data());
    detail::ECMap<S> W(w.data().data(), cout, cin * k), Col(col.data(), cin * k, tout);
    detail::EMap<S> Y(out.data().data(), cout, tout);
    Y.noalias() = W * Col;
    if (detail::track<S>({&x, &w})) {
        detail::attach<S>(out, {x.node(), w.node()},
                          [px = x.node(), pw = w.node(), cin, tin, cout, k, stride, padding, tout,
                           col = std::move(col)](const Node<S>& self) {
                              detail::ECMap<S> G(self.grad.data(), cout, tout);
                              if (pw->tracked) {
                                  pw->ensure_grad();
                                  detail::ECMap<S> Col(col.data(), cin * k, tout);
                                  detail::EMap<S> GW(pw->grad.data(), cout, cin * k);
                                  GW.noalias() += G * Col.transpose();
                              }
                              if (px->tracked) {
                                  px->ensure_grad();
                                  std::vector<S> dcol(static_cast<size_t>(cin * k * tout));
                                  detail::ECMap<S> W2(pw->value.data(), cout, cin * k);
                                  detail::EMap<S> DCol(dcol.data(), cin * k, tout);
                                  DCol.noalias() = W2.transpose() * G;
                                  detail::col2im_1d(dcol.data(), cin, tin, k, stride, padding,
                                                    tout, px->grad.data());
                              }
                          });
    }
    return out;
}

// x: (C_in,F,T), w: (C_out,C_in,Kf,Kt) -> (C_out,F',T')
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, std::pair<int64_t, int64_t> stride,
                  std::pair<int64_t, int64_t> dilation, std::pair<int64_t, int64_t> padding) {
    check_shape(x.rank() == 3 && w.rank() == 4,
                "conv2d: expected x (C_in,F,T) and w (C_out,C_in,Kf,Kt)");
    check_shape(x.dim(0) == w.dim(1), "conv2d: channel mismatch " + shape_str(x.shape()) +
                                          " vs " + shape_str(w.shape()));
    const int64_t cin = x.dim(0), fin = x.dim(1), tin = x.dim(2);
    const int64_t cout = w.dim(0), kf = w.dim(2), kt = w.dim(3);
    const int64_t fout = conv_out_extent(fin, kf, stride.first, padding.first, dilation.first);
    const int64_t tout = conv_out_extent(tin, kt, stride.second, padding.second, dilation.second);
    if (fout < 1 || tout < 1)
        throw DimensionError("conv2d: input too short, (F,T)=(" + std::to_string(fin) + "," +
                             std::to_string(tin) + ") gives output extent (" +
                             std::to_string(fout) + "," + std::to_string(tout) + ")");
    TensorT<S> out = TensorT<S>::uninit({cout, fout, tout});
    const int64_t patch = cin * kf * kt;
    std::vector<S> col(static_cast<size_t>(patch * fout * tout));
    detail::im2col_2d(x.data().data(), cin, fin, tin, kf, kt, stride.first, stride.second,
                      dilation.first, dilation.second, padding.first, padding.second, fout, tout,
                      col.data());
    detail::ECMap<S> W(w.data().data(), cout, patch), Col(col.data(), patch, fout * tout);
    detail::EMap<S> Y(out.data().data(), cout, fout * tout);
    Y.noalias() = W * Col;
    if (detail::track<S>({&x, &w})) {
        detail::attach<S>(
            out, {x.node(), w.node()},
            [px = x.node(), pw = w.node(), cin, fin, tin, cout, kf, kt, stride, dilation, padding,
             fout, tout, patch, col = std::move(col)](const Node<S>& self) {
                detail::ECMap<S> G(self.grad.data(), cout, fout * tout);
                if (pw->tracked) {
                    pw->ensure_grad();
                    detail::ECMap<S> Col(col.data(), patch, fout * tout);
                    detail::EMap<S> GW(pw->grad.data(), cout, patch);
                    GW.noalias() += G * Col.transpose();
                }
                if (px->tracked) {
                    px->ensure_grad();
                    std::vector<S> dcol(static_cast<size_t>(patch * fout * tout));
                    detail::ECMap<S> W2(pw->value.data(), cout, patch);
                    detail::EMap<S> DCol(dcol.data(), patch, fout * tout);
                    DCol.noalias() = W2.transpose() * G;
                    detail::col2im_2d(dcol.data(), cin, fin, tin, kf, kt, stride.first,
                                      stride.second, dilation.first, dilation.second,
                                      padding.first, padding.second, fout, tout, px->grad.data());
                }
            });
    }
    return out;
}

// inverted dropout; identity when not training
template <class S>
TensorT<S> dropout(const TensorT<S>& a, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return a;
    Values<S> mask(a.data().size());
    const S keep = static_cast<S>(1.0 / (1.0 - p));
    for (auto& m : mask) m = rng.uniform() < p ? S(0) : keep;
    TensorT<S> mt = TensorT<S>::from(a.shape(), std::move(mask));
    return mul(a, mt);
}

// ---- gradient checking ----

struct GradCheckReport {
    double max_rel_error = 0.0;
    int64_t elements_checked = 0;
};

// Central finite differences against the analytic gradient. The relative
// error denominator is floored so that FD noise on near-zero gradients does
// not register as failure.
template <class S, class F>
GradCheckReport grad_check(F&& f, std::vector<TensorT<S>> leaves, double h = 1e-5,
                           double denom_floor = 1e-4) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    TensorT<S> loss = f();
    loss.backward();
    std::vector<Values<S>> analytic;
    analytic.reserve(leaves.size());
    for (auto& l : leaves) analytic.push_back(l.grad_or_zeros());

    GradCheckReport rep;
    NoGradGuard ng;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].data();
        for (size_t i = 0; i < vals.size(); ++i) {
            const S orig = vals[i];
            vals[i] = orig + static_cast<S>(h);
            const double fp = static_cast<double>(f().item());
            vals[i] = orig - static_cast<S>(h);
            const double fm = static_cast<double>(f().item());
            vals[i] = orig;
            const double num = (fp - fm) / (2.0 * h);
            const double ana = static_cast<double>(analytic[li][i]);
            const double denom = std::max({std::abs(num), std::abs(ana), denom_floor});
            rep.max_rel_error = std::max(rep.max_rel_error, std::abs(num - ana) / denom);
            ++rep.elements_checked;
        }
    }
    return rep;
}

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

}  // namespace xis2

#endif
