#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mgp/error.hpp"
#include "mgp/rng.hpp"

namespace mgp {

using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;    // allocated lazily during backward
    bool requires_grad = false;  // set on leaves by the caller
    bool tracked = false;        // produced by a recorded operation
};

using ImplPtr = std::shared_ptr<TensorImpl>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline void ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
}

}  // namespace detail

/// Dense 64-bit real tensor, NCHW layout for image-like data. Value
/// semantics with a shared implementation; copies are cheap handles.
class Tensor {
public:
    Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

    static Tensor full(Shape shape, double value) {
        Tensor t;
        const std::size_t n = detail::shape_numel(shape);
        t.impl_->shape = std::move(shape);
        t.impl_->values.assign(n, value);
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<double> values) {
        if (detail::shape_numel(shape) != values.size())
            throw ShapeError("tensor: shape " + detail::shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        Tensor t;
        t.impl_->shape = std::move(shape);
        t.impl_->values = std::move(values);
        return t;
    }

    static Tensor scalar(double v) { return from_values({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng) {
        Tensor t = zeros(std::move(shape));
        for (double& v : t.impl_->values) v = rng.normal();
        return t;
    }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->values.size(); }
    std::size_t extent(std::size_t dim) const { return impl_->shape.at(dim); }

    std::span<const double> values() const { return impl_->values; }
    std::span<double> values_mut() { return impl_->values; }

    double item() const {
        if (numel() != 1)
            throw ContractError("item: tensor " + detail::shape_str(shape()) + " is not scalar");
        return impl_->values[0];
    }

    double& at(std::initializer_list<std::size_t> idx) {
        return impl_->values[flat_index(idx)];
    }
    double at(std::initializer_list<std::size_t> idx) const {
        return impl_->values[flat_index(idx)];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        if (b && impl_->tracked)
            throw ContractError("set_requires_grad: only leaf tensors may require gradients");
        impl_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const {
        if (impl_->grad.empty())
            throw ContractError("grad: no gradient present; run backward() first");
        return impl_->grad;
    }
    std::span<double> grad_mut() {
        if (impl_->grad.empty())
            throw ContractError("grad: no gradient present; run backward() first");
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.clear(); }

    /// Deep copy of shape and values; grad state is not copied.
    Tensor clone() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->values = impl_->values;
        return t;
    }

    bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }

    const detail::ImplPtr& impl() const { return impl_; }

private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        const Shape& s = impl_->shape;
        if (idx.size() != s.size())
            throw ContractError("at: index rank " + std::to_string(idx.size()) +
                                " does not match tensor rank " + std::to_string(s.size()));
        std::size_t flat = 0;
        std::size_t d = 0;
        for (std::size_t i : idx) {
            if (i >= s[d])
                throw ContractError("at: index " + std::to_string(i) + " out of range for dim " +
                                    std::to_string(d) + " of " + detail::shape_str(s));
            flat = flat * s[d] + i;
            ++d;
        }
        return flat;
    }

    detail::ImplPtr impl_;
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

/// Append-only record of executed operations. Backward replays the
/// closures in exact reverse append order; every node's inputs precede it
/// by construction. One tape per thread; an inversion run owns its tape.
class Tape {
public:
    static Tape& active() {
        thread_local Tape tape;
        return tape;
    }

    void record(detail::ImplPtr out, std::function<void()> backward_fn) {
        nodes_.push_back({std::move(out), std::move(backward_fn)});
    }

    std::size_t size() const { return nodes_.size(); }

    /// Drops all recorded nodes and clears tracking marks so previously
    /// produced tensors become plain values.
    void reset() {
        for (Node& n : nodes_) {
            n.out->tracked = false;
            n.out->grad.clear();
        }
        nodes_.clear();
    }

    void backward(const Tensor& loss) {
        if (loss.shape() != Shape{1})
            throw ContractError("backward: loss must have shape [1], got " +
                                detail::shape_str(loss.shape()));
        detail::ensure_grad(*loss.impl());
        loss.impl()->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->out->grad.empty()) it->backward_fn();
        }
        // Leaves are never operation outputs, so this discards exactly the
        // non-leaf gradients.
        for (Node& n : nodes_) n.out->grad.clear();
    }

private:
    struct Node {
        detail::ImplPtr out;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
};

inline void backward(const Tensor& loss) { Tape::active().backward(loss); }

namespace detail {

inline int& no_grad_depth() {
    thread_local int depth = 0;
    return depth;
}

}  // namespace detail

/// Disables tape recording for its lifetime (finite differences, optimizer
/// updates, plain evaluation).
class NoGradGuard {
public:
    NoGradGuard() { ++detail::no_grad_depth(); }
    ~NoGradGuard() { --detail::no_grad_depth(); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

inline bool grad_enabled() { return no_grad_depth() == 0; }

inline bool needs_grad(const ImplPtr& p) { return p->requires_grad || p->tracked; }

inline void mark_and_record(const Tensor& out, std::function<void()> backward_fn) {
    out.impl()->tracked = true;
    Tape::active().record(out.impl(), std::move(backward_fn));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

// Valid index interval [lo, hi) for i in [0, count) with
// win_lo <= i*stride + offset < win_hi.
inline void conv_range_window(long offset, long stride, long win_lo, long win_hi, long count,
                              long& lo, long& hi) {
    const long bottom = win_lo - offset;
    lo = bottom <= 0 ? 0 : (bottom + stride - 1) / stride;
    const long top = win_hi - 1 - offset;
    hi = top < 0 ? 0 : std::min(count, top / stride + 1);
    if (lo > hi) lo = hi;
}

inline void conv_range(long offset, long stride, long limit, long count, long& lo, long& hi) {
    conv_range_window(offset, stride, 0, limit, count, lo, hi);
}

// Rows per blocking window such that a row-major [rows, W*C] accumulator
// slab stays L1-resident while a full channel reduction streams over it.
inline long conv_block_rows(long W, long C) {
    const long rows = 3072 / std::max(1L, W * C);
    return std::max(1L, rows);
}

// Fixed four-lane reduction tree; deterministic and pipeline-friendly.
inline double dot4(const double* a, const double* b, long n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    long i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

inline double dot4_strided(const double* a, const double* b, long n, long stride_b) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    long i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i * stride_b];
        s1 += a[i + 1] * b[(i + 1) * stride_b];
        s2 += a[i + 2] * b[(i + 2) * stride_b];
        s3 += a[i + 3] * b[(i + 3) * stride_b];
    }
    for (; i < n; ++i) s0 += a[i] * b[i * stride_b];
    return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise and reduction operations

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    if (detail::grad_enabled() && (detail::needs_grad(a.impl()) || detail::needs_grad(b.impl()))) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::mark_and_record(out, [ai, bi, oi, n] {
            if (detail::needs_grad(ai)) {
                detail::ensure_grad(*ai);
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
            }
            if (detail::needs_grad(bi)) {
                detail::ensure_grad(*bi);
                for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
    if (detail::grad_enabled() && (detail::needs_grad(a.impl()) || detail::needs_grad(b.impl()))) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::mark_and_record(out, [ai, bi, oi, n] {
            if (detail::needs_grad(ai)) {
                detail::ensure_grad(*ai);
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
            }
            if (detail::needs_grad(bi)) {
                detail::ensure_grad(*bi);
                for (std::size_t i = 0; i < n; ++i) bi->grad[i] -= oi->grad[i];
            }
        });
    }
    return out;
}

inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "elementwise_mul");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
    if (detail::grad_enabled() && (detail::needs_grad(a.impl()) || detail::needs_grad(b.impl()))) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::mark_and_record(out, [ai, bi, oi, n] {
            if (detail::needs_grad(ai)) {
                detail::ensure_grad(*ai);
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->values[i];
            }
            if (detail::needs_grad(bi)) {
                detail::ensure_grad(*bi);
                for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->values[i];
            }
        });
    }
    return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* av = a.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + c;
    if (detail::grad_enabled() && detail::needs_grad(a.impl())) {
        auto ai = a.impl(), oi = out.impl();
        detail::mark_and_record(out, [ai, oi, n] {
            detail::ensure_grad(*ai);
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* av = a.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * c;
    if (detail::grad_enabled() && detail::needs_grad(a.impl())) {
        auto ai = a.impl(), oi = out.impl();
        detail::mark_and_record(out, [ai, oi, n, c] {
            detail::ensure_grad(*ai);
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += c * oi->grad[i];
        });
    }
    return out;
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* xv = x.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        // Subgradient at exactly 0 is 1.
        detail::mark_and_record(out, [xi, oi, n, slope] {
            detail::ensure_grad(*xi);
            for (std::size_t i = 0; i < n; ++i)
                xi->grad[i] += (xi->values[i] >= 0.0 ? 1.0 : slope) * oi->grad[i];
        });
    }
    return out;
}

inline Tensor tanh(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* xv = x.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = std::tanh(xv[i]);
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, n] {
            detail::ensure_grad(*xi);
            for (std::size_t i = 0; i < n; ++i) {
                const double y = oi->values[i];
                xi->grad[i] += (1.0 - y * y) * oi->grad[i];
            }
        });
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    const double* xv = x.values().data();
    const long n = static_cast<long>(x.numel());
    long i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += xv[i];
        s1 += xv[i + 1];
        s2 += xv[i + 2];
        s3 += xv[i + 3];
    }
    for (; i < n; ++i) s0 += xv[i];
    Tensor out = Tensor::scalar((s0 + s1) + (s2 + s3));
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, n] {
            detail::ensure_grad(*xi);
            const double g = oi->grad[0];
            for (long k = 0; k < n; ++k) xi->grad[k] += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ContractError("mean: empty tensor");
    const double inv_n = 1.0 / static_cast<double>(x.numel());
    Tensor s = sum(x);
    return mul_scalar(s, inv_n);
}

/// Sum of squares of all entries.
inline Tensor l2_norm_sq(const Tensor& x) {
    const double* xv = x.values().data();
    const long n = static_cast<long>(x.numel());
    Tensor out = Tensor::scalar(detail::dot4(xv, xv, n));
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, n] {
            detail::ensure_grad(*xi);
            const double g = oi->grad[0];
            for (long k = 0; k < n; ++k) xi->grad[k] += 2.0 * xi->values[k] * g;
        });
    }
    return out;
}

/// Sum of absolute differences. Subgradient at ties is 0.
inline Tensor l1_dist(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "l1_dist");
    const std::size_t n = a.numel();
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(av[i] - bv[i]);
    Tensor out = Tensor::scalar(acc);
    if (detail::grad_enabled() && (detail::needs_grad(a.impl()) || detail::needs_grad(b.impl()))) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::mark_and_record(out, [ai, bi, oi, n] {
            const double g = oi->grad[0];
            const bool ga = detail::needs_grad(ai), gb = detail::needs_grad(bi);
            if (ga) detail::ensure_grad(*ai);
            if (gb) detail::ensure_grad(*bi);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = ai->values[i] - bi->values[i];
                const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (ga) ai->grad[i] += s * g;
                if (gb) bi->grad[i] -= s * g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural operations

/// Per-channel scaling: out[b,c,h,w] = feature[b,c,h,w] * alpha[c].
inline Tensor channel_scale(const Tensor& feature, const Tensor& alpha) {
    if (feature.rank() != 4)
        throw ShapeError("channel_scale: feature must be rank 4, got " +
                         detail::shape_str(feature.shape()));
    const std::size_t B = feature.extent(0), C = feature.extent(1);
    const std::size_t plane = feature.extent(2) * feature.extent(3);
    if (alpha.shape() != Shape{C})
        throw ShapeError("channel_scale: alpha " + detail::shape_str(alpha.shape()) +
                         " does not match feature channels " + detail::shape_str(feature.shape()));
    Tensor out = Tensor::zeros(feature.shape());
    const double* fv = feature.values().data();
    const double* av = alpha.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double s = av[c];
            const std::size_t base = (b * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) ov[base + i] = fv[base + i] * s;
        }
    if (detail::grad_enabled() &&
        (detail::needs_grad(feature.impl()) || detail::needs_grad(alpha.impl()))) {
        auto fi = feature.impl(), ai = alpha.impl(), oi = out.impl();
        detail::mark_and_record(out, [fi, ai, oi, B, C, plane] {
            const bool gf = detail::needs_grad(fi), ga = detail::needs_grad(ai);
            if (gf) detail::ensure_grad(*fi);
            if (ga) detail::ensure_grad(*ai);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t base = (b * C + c) * plane;
                    if (gf) {
                        const double s = ai->values[c];
                        for (std::size_t i = 0; i < plane; ++i)
                            fi->grad[base + i] += s * oi->grad[base + i];
                    }
                    if (ga) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < plane; ++i)
                            acc += oi->grad[base + i] * fi->values[base + i];
                        ai->grad[c] += acc;
                    }
                }
        });
    }
    return out;
}

/// Broadcast a single-channel map to `channels` identical channels.
inline Tensor replicate_channels(const Tensor& x, std::size_t channels) {
    if (x.rank() != 4 || x.extent(1) != 1)
        throw ShapeError("replicate_channels: expected [B,1,H,W], got " +
                         detail::shape_str(x.shape()));
    const std::size_t B = x.extent(0), H = x.extent(2), W = x.extent(3);
    const std::size_t plane = H * W;
    Tensor out = Tensor::zeros({B, channels, H, W});
    const double* xv = x.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            std::copy(xv + b * plane, xv + (b + 1) * plane, ov + (b * channels + c) * plane);
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, B, channels, plane] {
            detail::ensure_grad(*xi);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < channels; ++c) {
                    const std::size_t base = (b * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i)
                        xi->grad[b * plane + i] += oi->grad[base + i];
                }
        });
    }
    return out;
}

/// Contiguous range of the flattened tensor as a rank-1 tensor.
inline Tensor slice_flat(const Tensor& x, std::size_t offset, std::size_t count) {
    if (offset + count > x.numel())
        throw ContractError("slice_flat: range [" + std::to_string(offset) + "," +
                            std::to_string(offset + count) + ") exceeds " +
                            std::to_string(x.numel()) + " elements");
    Tensor out = Tensor::zeros({count});
    std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(offset),
              x.values().begin() + static_cast<std::ptrdiff_t>(offset + count),
              out.values_mut().begin());
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, offset, count] {
            detail::ensure_grad(*xi);
            for (std::size_t i = 0; i < count; ++i) xi->grad[offset + i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (detail::shape_numel(shape) != x.numel())
        throw ShapeError("reshape: " + detail::shape_str(x.shape()) + " cannot become " +
                         detail::shape_str(shape));
    Tensor out = Tensor::from_values(std::move(shape),
                                     std::vector<double>(x.values().begin(), x.values().end()));
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        const std::size_t n = x.numel();
        detail::mark_and_record(out, [xi, oi, n] {
            detail::ensure_grad(*xi);
            for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

/// Nearest-neighbour upsampling by an integer factor.
inline Tensor nearest_upsample(const Tensor& x, std::size_t factor) {
    if (x.rank() != 4)
        throw ShapeError("nearest_upsample: expected rank 4, got " + detail::shape_str(x.shape()));
    if (factor < 1) throw ContractError("nearest_upsample: factor must be >= 1");
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const std::size_t Ho = H * factor, Wo = W * factor;
    Tensor out = Tensor::zeros({B, C, Ho, Wo});
    const double* xv = x.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t h = 0; h < Ho; ++h) {
            const double* src = xv + (bc * H + h / factor) * W;
            double* dst = ov + (bc * Ho + h) * Wo;
            for (std::size_t w = 0; w < Wo; ++w) dst[w] = src[w / factor];
        }
    if (detail::grad_enabled() && detail::needs_grad(x.impl())) {
        auto xi = x.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, B, C, H, W, factor] {
            detail::ensure_grad(*xi);
            const std::size_t Ho = H * factor, Wo = W * factor;
            for (std::size_t bc = 0; bc < B * C; ++bc)
                for (std::size_t h = 0; h < Ho; ++h) {
                    const double* g = oi->grad.data() + (bc * Ho + h) * Wo;
                    double* dst = xi->grad.data() + (bc * H + h / factor) * W;
                    for (std::size_t w = 0; w < Wo; ++w) dst[w / factor] += g[w];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions. Cross-correlation semantics, zero padding. Kernels work in
// a channels-innermost scratch layout so the hot loops run contiguously
// over the channel axis; per output element the accumulation order over
// (ci,kh,kw) stays fixed, keeping results bit-reproducible.

namespace detail {

// weight [A,B,k,k] reordered to [A,k,k,B].
inline std::vector<double> channels_last_weight(const double* w, long A, long Bc, long k) {
    std::vector<double> wt(static_cast<std::size_t>(A * Bc * k * k));
    for (long a = 0; a < A; ++a)
        for (long b = 0; b < Bc; ++b)
            for (long kk = 0; kk < k * k; ++kk)
                wt[(a * k * k + kk) * Bc + b] = w[(a * Bc + b) * k * k + kk];
    return wt;
}

// plane-major [C,H*W] to position-major [H*W,C].
inline void to_position_major(const double* src, long C, long HW, double* dst) {
    for (long c = 0; c < C; ++c)
        for (long i = 0; i < HW; ++i) dst[i * C + c] = src[c * HW + i];
}

struct ConvDims {
    long B, Ci, H, W, Co, k, Ho, Wo, stride, padding;
};

// Shared core of conv2d forward and conv_transpose2d input-gradient: a
// gather over (ci,kh,kw) accumulated into a position-major output buffer.
// Output rows are processed in L1-sized blocks; blocking partitions the
// outputs, not the reduction, so per-element accumulation order is
// unchanged.
inline void conv_gather(const double* x, const double* wt, double* out_pm, const ConvDims& d,
                        long b) {
    const long block = conv_block_rows(d.Wo, d.Co);
    for (long row0 = 0; row0 < d.Ho; row0 += block) {
        const long row1 = std::min(d.Ho, row0 + block);
        for (long ci = 0; ci < d.Ci; ++ci) {
            const double* xplane = x + (b * d.Ci + ci) * d.H * d.W;
            for (long kh = 0; kh < d.k; ++kh)
                for (long kw = 0; kw < d.k; ++kw) {
                    const double* wrow = wt + ((ci * d.k + kh) * d.k + kw) * d.Co;
                    long ho_lo, ho_hi, wo_lo, wo_hi;
                    conv_range(kh - d.padding, d.stride, d.H, d.Ho, ho_lo, ho_hi);
                    conv_range(kw - d.padding, d.stride, d.W, d.Wo, wo_lo, wo_hi);
                    ho_lo = std::max(ho_lo, row0);
                    ho_hi = std::min(ho_hi, row1);
                    for (long ho = ho_lo; ho < ho_hi; ++ho) {
                        const double* xrow = xplane + (ho * d.stride + kh - d.padding) * d.W;
                        for (long wo = wo_lo; wo < wo_hi; ++wo) {
                            const double xv = xrow[wo * d.stride + kw - d.padding];
                            double* orow = out_pm + (ho * d.Wo + wo) * d.Co;
                            for (long co = 0; co < d.Co; ++co) orow[co] += xv * wrow[co];
                        }
                    }
                }
        }
    }
}

// Weight gradient shared by both convolutions: accumulates the outer
// products of input rows with position-major output gradients into a
// channels-last buffer [Ci,k,k,Co].
inline void conv_weight_grad(const double* x, const double* gout_pm, double* gwt,
                             const ConvDims& d, long b) {
    for (long ci = 0; ci < d.Ci; ++ci) {
        const double* xplane = x + (b * d.Ci + ci) * d.H * d.W;
        for (long kh = 0; kh < d.k; ++kh)
            for (long kw = 0; kw < d.k; ++kw) {
                double* gwrow = gwt + ((ci * d.k + kh) * d.k + kw) * d.Co;
                long ho_lo, ho_hi, wo_lo, wo_hi;
                conv_range(kh - d.padding, d.stride, d.H, d.Ho, ho_lo, ho_hi);
                conv_range(kw - d.padding, d.stride, d.W, d.Wo, wo_lo, wo_hi);
                for (long ho = ho_lo; ho < ho_hi; ++ho) {
                    const double* xrow = xplane + (ho * d.stride + kh - d.padding) * d.W;
                    for (long wo = wo_lo; wo < wo_hi; ++wo) {
                        const double xv = xrow[wo * d.stride + kw - d.padding];
                        const double* grow = gout_pm + (ho * d.Wo + wo) * d.Co;
                        for (long co = 0; co < d.Co; ++co) gwrow[co] += xv * grow[co];
                    }
                }
            }
    }
}

inline void bias_grad(const double* gout, long B, long Co, long HW, std::vector<double>& gb) {
    for (long co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (long b = 0; b < B; ++b) {
            const double* gplane = gout + (b * Co + co) * HW;
            for (long i = 0; i < HW; ++i) acc += gplane[i];
        }
        gb[static_cast<std::size_t>(co)] += acc;
    }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, long stride,
                     long padding) {
    if (input.rank() != 4 || weight.rank() != 4)
        throw ShapeError("conv2d: input " + detail::shape_str(input.shape()) + " and weight " +
                         detail::shape_str(weight.shape()) + " must be rank 4");
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
    const long B = static_cast<long>(input.extent(0));
    const long Ci = static_cast<long>(input.extent(1));
    const long H = static_cast<long>(input.extent(2));
    const long W = static_cast<long>(input.extent(3));
    const long Co = static_cast<long>(weight.extent(0));
    const long k = static_cast<long>(weight.extent(2));
    if (static_cast<long>(weight.extent(1)) != Ci)
        throw ShapeError("conv2d: weight expects " + std::to_string(weight.extent(1)) +
                         " input channels but input " + detail::shape_str(input.shape()) + " has " +
                         std::to_string(Ci));
    if (static_cast<long>(weight.extent(3)) != k)
        throw ShapeError("conv2d: kernel must be square, got " + detail::shape_str(weight.shape()));
    if (bias.shape() != Shape{static_cast<std::size_t>(Co)})
        throw ShapeError("conv2d: bias " + detail::shape_str(bias.shape()) + " must be [" +
                         std::to_string(Co) + "]");
    if (k > H + 2 * padding || k > W + 2 * padding)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                         detail::shape_str(input.shape()) + " with padding " +
                         std::to_string(padding));
    const long Ho = (H + 2 * padding - k) / stride + 1;
    const long Wo = (W + 2 * padding - k) / stride + 1;
    const detail::ConvDims dims{B, Ci, H, W, Co, k, Ho, Wo, stride, padding};

    Tensor out = Tensor::zeros({static_cast<std::size_t>(B), static_cast<std::size_t>(Co),
                                static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
    {
        // wt[ci,kh,kw,co] = w[co,ci,kh,kw]
        std::vector<double> wt(static_cast<std::size_t>(Ci * Co * k * k));
        const double* wv = weight.values().data();
        for (long co = 0; co < Co; ++co)
            for (long ci = 0; ci < Ci; ++ci)
                for (long kk = 0; kk < k * k; ++kk)
                    wt[(ci * k * k + kk) * Co + co] = wv[(co * Ci + ci) * k * k + kk];

        std::vector<double> out_pm(static_cast<std::size_t>(Ho * Wo * Co));
        const double* bv = bias.values().data();
        double* ov = out.values_mut().data();
        for (long b = 0; b < B; ++b) {
            for (long i = 0; i < Ho * Wo; ++i)
                std::copy(bv, bv + Co, out_pm.data() + i * Co);
            detail::conv_gather(input.values().data(), wt.data(), out_pm.data(), dims, b);
            for (long co = 0; co < Co; ++co) {
                double* oplane = ov + (b * Co + co) * Ho * Wo;
                for (long i = 0; i < Ho * Wo; ++i) oplane[i] = out_pm[i * Co + co];
            }
        }
    }

    const bool need = detail::needs_grad(input.impl()) || detail::needs_grad(weight.impl()) ||
                      detail::needs_grad(bias.impl());
    if (detail::grad_enabled() && need) {
        auto xi = input.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, wi, bi, oi, dims] {
            const long B = dims.B, Ci = dims.Ci, H = dims.H, W = dims.W, Co = dims.Co, k = dims.k,
                       Ho = dims.Ho, Wo = dims.Wo, stride = dims.stride, padding = dims.padding;
            const double* gout = oi->grad.data();
            std::vector<double> gout_pm(static_cast<std::size_t>(Ho * Wo * Co));
            if (detail::needs_grad(xi)) {
                detail::ensure_grad(*xi);
                // w2[co,kh,kw,ci] = w[co,ci,kh,kw]
                std::vector<double> w2 =
                    detail::channels_last_weight(wi->values.data(), Co, Ci, k);
                std::vector<double> gx_pm(static_cast<std::size_t>(H * W * Ci));
                const long block = detail::conv_block_rows(W, Ci);
                for (long b = 0; b < B; ++b) {
                    std::fill(gx_pm.begin(), gx_pm.end(), 0.0);
                    for (long row0 = 0; row0 < H; row0 += block) {
                        const long row1 = std::min(H, row0 + block);
                        for (long co = 0; co < Co; ++co) {
                            const double* gplane = gout + (b * Co + co) * Ho * Wo;
                            for (long kh = 0; kh < k; ++kh)
                                for (long kw = 0; kw < k; ++kw) {
                                    const double* wrow =
                                        w2.data() + ((co * k + kh) * k + kw) * Ci;
                                    long ho_lo, ho_hi, wo_lo, wo_hi;
                                    detail::conv_range_window(kh - padding, stride, row0, row1,
                                                              Ho, ho_lo, ho_hi);
                                    detail::conv_range(kw - padding, stride, W, Wo, wo_lo, wo_hi);
                                    for (long ho = ho_lo; ho < ho_hi; ++ho) {
                                        const double* grow = gplane + ho * Wo;
                                        const long ih = ho * stride + kh - padding;
                                        for (long wo = wo_lo; wo < wo_hi; ++wo) {
                                            const double gv = grow[wo];
                                            double* gxrow =
                                                gx_pm.data() +
                                                (ih * W + wo * stride + kw - padding) * Ci;
                                            for (long ci = 0; ci < Ci; ++ci)
                                                gxrow[ci] += gv * wrow[ci];
                                        }
                                    }
                                }
                        }
                    }
                    double* gx = xi->grad.data() + b * Ci * H * W;
                    for (long ci = 0; ci < Ci; ++ci)
                        for (long i = 0; i < H * W; ++i) gx[ci * H * W + i] += gx_pm[i * Ci + ci];
                }
            }
            if (detail::needs_grad(wi)) {
                detail::ensure_grad(*wi);
                std::vector<double> gwt(static_cast<std::size_t>(Ci * k * k * Co), 0.0);
                for (long b = 0; b < B; ++b) {
                    detail::to_position_major(gout + b * Co * Ho * Wo, Co, Ho * Wo,
                                              gout_pm.data());
                    detail::conv_weight_grad(xi->values.data(), gout_pm.data(), gwt.data(), dims,
                                             b);
                }
                for (long co = 0; co < Co; ++co)
                    for (long ci = 0; ci < Ci; ++ci)
                        for (long kk = 0; kk < k * k; ++kk)
                            wi->grad[(co * Ci + ci) * k * k + kk] +=
                                gwt[(ci * k * k + kk) * Co + co];
            }
            if (detail::needs_grad(bi)) {
                detail::ensure_grad(*bi);
                detail::bias_grad(gout, B, Co, Ho * Wo, bi->grad);
            }
        });
    }
    return out;
}

inline Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                               long stride, long padding) {
    if (input.rank() != 4 || weight.rank() != 4)
        throw ShapeError("conv_transpose2d: input " + detail::shape_str(input.shape()) +
                         " and weight " + detail::shape_str(weight.shape()) + " must be rank 4");
    if (stride < 1) throw ContractError("conv_transpose2d: stride must be >= 1");
    if (padding < 0) throw ContractError("conv_transpose2d: padding must be >= 0");
    const long B = static_cast<long>(input.extent(0));
    const long Ci = static_cast<long>(input.extent(1));
    const long H = static_cast<long>(input.extent(2));
    const long W = static_cast<long>(input.extent(3));
    const long Co = static_cast<long>(weight.extent(1));
    const long k = static_cast<long>(weight.extent(2));
    if (static_cast<long>(weight.extent(0)) != Ci)
        throw ShapeError("conv_transpose2d: weight expects " + std::to_string(weight.extent(0)) +
                         " input channels but input " + detail::shape_str(input.shape()) + " has " +
                         std::to_string(Ci));
    if (static_cast<long>(weight.extent(3)) != k)
        throw ShapeError("conv_transpose2d: kernel must be square, got " +
                         detail::shape_str(weight.shape()));
    if (bias.shape() != Shape{static_cast<std::size_t>(Co)})
        throw ShapeError("conv_transpose2d: bias " + detail::shape_str(bias.shape()) +
                         " must be [" + std::to_string(Co) + "]");
    const long Ho = (H - 1) * stride - 2 * padding + k;
    const long Wo = (W - 1) * stride - 2 * padding + k;
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv_transpose2d: non-positive output extent " + std::to_string(Ho) +
                         "x" + std::to_string(Wo) + " from input " +
                         detail::shape_str(input.shape()));
    // Roles swap: the scatter ranges run over the input against the output
    // extent bound.
    const detail::ConvDims dims{B, Ci, H, W, Co, k, Ho, Wo, stride, padding};

    Tensor out = Tensor::zeros({static_cast<std::size_t>(B), static_cast<std::size_t>(Co),
                                static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
    // wt[ci,kh,kw,co] = w[ci,co,kh,kw]
    std::vector<double> wt = detail::channels_last_weight(weight.values().data(), Ci, Co, k);
    {
        std::vector<double> out_pm(static_cast<std::size_t>(Ho * Wo * Co));
        const double* xv = input.values().data();
        const double* bv = bias.values().data();
        double* ov = out.values_mut().data();
        const long block = detail::conv_block_rows(Wo, Co);
        for (long b = 0; b < B; ++b) {
            for (long i = 0; i < Ho * Wo; ++i)
                std::copy(bv, bv + Co, out_pm.data() + i * Co);
            for (long row0 = 0; row0 < Ho; row0 += block) {
                const long row1 = std::min(Ho, row0 + block);
                for (long ci = 0; ci < Ci; ++ci) {
                    const double* xplane = xv + (b * Ci + ci) * H * W;
                    for (long kh = 0; kh < k; ++kh)
                        for (long kw = 0; kw < k; ++kw) {
                            const double* wrow = wt.data() + ((ci * k + kh) * k + kw) * Co;
                            long hi_lo, hi_hi, wi_lo, wi_hi;
                            detail::conv_range_window(kh - padding, stride, row0, row1, H, hi_lo,
                                                      hi_hi);
                            detail::conv_range(kw - padding, stride, Wo, W, wi_lo, wi_hi);
                            for (long hi = hi_lo; hi < hi_hi; ++hi) {
                                const double* xrow = xplane + hi * W;
                                const long oh = hi * stride + kh - padding;
                                for (long wi = wi_lo; wi < wi_hi; ++wi) {
                                    const double xvv = xrow[wi];
                                    double* orow = out_pm.data() +
                                                   (oh * Wo + wi * stride + kw - padding) * Co;
                                    for (long co = 0; co < Co; ++co) orow[co] += xvv * wrow[co];
                                }
                            }
                        }
                }
            }
            for (long co = 0; co < Co; ++co) {
                double* oplane = ov + (b * Co + co) * Ho * Wo;
                for (long i = 0; i < Ho * Wo; ++i) oplane[i] = out_pm[i * Co + co];
            }
        }
    }

    const bool need = detail::needs_grad(input.impl()) || detail::needs_grad(weight.impl()) ||
                      detail::needs_grad(bias.impl());
    if (detail::grad_enabled() && need) {
        auto xi = input.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, wi, bi, oi, dims, wt = std::move(wt)] {
            const long B = dims.B, Ci = dims.Ci, H = dims.H, W = dims.W, Co = dims.Co, k = dims.k,
                       Ho = dims.Ho, Wo = dims.Wo, stride = dims.stride, padding = dims.padding;
            const double* gout = oi->grad.data();
            std::vector<double> gout_pm(static_cast<std::size_t>(Ho * Wo * Co));
            const bool need_x = detail::needs_grad(xi);
            const bool need_w = detail::needs_grad(wi);
            if (need_x) detail::ensure_grad(*xi);
            if (need_w) detail::ensure_grad(*wi);
            std::vector<double> gwt;
            if (need_w) gwt.assign(static_cast<std::size_t>(Ci * k * k * Co), 0.0);
            std::vector<double> gx_pm;
            std::vector<double> w2;  // [co,kh,kw,ci]
            if (need_x) {
                gx_pm.resize(static_cast<std::size_t>(H * W * Ci));
                w2.resize(static_cast<std::size_t>(Ci * Co * k * k));
                for (long ci = 0; ci < Ci; ++ci)
                    for (long co = 0; co < Co; ++co)
                        for (long kk = 0; kk < k * k; ++kk)
                            w2[(co * k * k + kk) * Ci + ci] =
                                wi->values[(ci * Co + co) * k * k + kk];
            }
            for (long b = 0; b < B && (need_x || need_w); ++b) {
                detail::to_position_major(gout + b * Co * Ho * Wo, Co, Ho * Wo, gout_pm.data());
                if (need_x) {
                    // The adjoint of the scatter is a strided gather over
                    // the output gradient.
                    std::fill(gx_pm.begin(), gx_pm.end(), 0.0);
                    const long block = detail::conv_block_rows(W, Ci);
                    for (long row0 = 0; row0 < H; row0 += block) {
                        const long row1 = std::min(H, row0 + block);
                        for (long co = 0; co < Co; ++co) {
                            const double* gplane = gout + (b * Co + co) * Ho * Wo;
                            for (long kh = 0; kh < k; ++kh)
                                for (long kw = 0; kw < k; ++kw) {
                                    const double* wrow =
                                        w2.data() + ((co * k + kh) * k + kw) * Ci;
                                    long hi_lo, hi_hi, wi_lo, wi_hi;
                                    detail::conv_range(kh - padding, stride, Ho, H, hi_lo, hi_hi);
                                    hi_lo = std::max(hi_lo, row0);
                                    hi_hi = std::min(hi_hi, row1);
                                    detail::conv_range(kw - padding, stride, Wo, W, wi_lo, wi_hi);
                                    for (long hi = hi_lo; hi < hi_hi; ++hi) {
                                        const double* grow =
                                            gplane + (hi * stride + kh - padding) * Wo;
                                        for (long wi2 = wi_lo; wi2 < wi_hi; ++wi2) {
                                            const double gv = grow[wi2 * stride + kw - padding];
                                            double* gxrow = gx_pm.data() + (hi * W + wi2) * Ci;
                                            for (long ci = 0; ci < Ci; ++ci)
                                                gxrow[ci] += gv * wrow[ci];
                                        }
                                    }
                                }
                        }
                    }
                    double* gx = xi->grad.data() + b * Ci * H * W;
                    for (long ci = 0; ci < Ci; ++ci)
                        for (long i = 0; i < H * W; ++i) gx[ci * H * W + i] += gx_pm[i * Ci + ci];
                }
                if (need_w) {
                    for (long ci = 0; ci < Ci; ++ci) {
                        const double* xplane = xi->values.data() + (b * Ci + ci) * H * W;
                        for (long kh = 0; kh < k; ++kh)
                            for (long kw = 0; kw < k; ++kw) {
                                double* gwrow = gwt.data() + ((ci * k + kh) * k + kw) * Co;
                                long hi_lo, hi_hi, wi_lo, wi_hi;
                                detail::conv_range(kh - padding, stride, Ho, H, hi_lo, hi_hi);
                                detail::conv_range(kw - padding, stride, Wo, W, wi_lo, wi_hi);
                                for (long hi = hi_lo; hi < hi_hi; ++hi) {
                                    const long oh = hi * stride + kh - padding;
                                    for (long wi2 = wi_lo; wi2 < wi_hi; ++wi2) {
                                        const double xvv = xplane[hi * W + wi2];
                                        const double* grow =
                                            gout_pm.data() +
                                            (oh * Wo + wi2 * stride + kw - padding) * Co;
                                        for (long co = 0; co < Co; ++co)
                                            gwrow[co] += xvv * grow[co];
                                    }
                                }
                            }
                    }
                }
            }
            if (need_w) {
                for (long ci = 0; ci < Ci; ++ci)
                    for (long co = 0; co < Co; ++co)
                        for (long kk = 0; kk < k * k; ++kk)
                            wi->grad[(ci * Co + co) * k * k + kk] +=
                                gwt[(ci * k * k + kk) * Co + co];
            }
            if (detail::needs_grad(bi)) {
                detail::ensure_grad(*bi);
                detail::bias_grad(gout, B, Co, Ho * Wo, bi->grad);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operator sugar

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise_mul(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

}  // namespace mgp
