#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_set>
#include <vector>

#include "deeppyram/common.hpp"

namespace deeppyram {

template <typename T>
struct TensorImpl;

template <typename T>
using TensorImplPtr = std::shared_ptr<TensorImpl<T>>;

namespace detail {
inline std::atomic<uint64_t> g_node_counter{1};
}

// One node of the reverse-mode differentiation graph. The graph is the
// implicit DAG formed by `parents`; `node_id` is the creation order, which
// is a valid topological order for a dynamically built graph.
template <typename T>
struct TensorImpl {
    Shape4 shape{};
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad; // allocated lazily, same length as data

    uint64_t node_id = 0;
    const char* op_name = "leaf";
    std::vector<TensorImplPtr<T>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Value-semantic handle to a Tensor node. Copies share the underlying
// buffer; all ops are functional (they allocate new outputs).
template <typename T = float>
class Tensor {
public:
    using scalar_type = T;

    Tensor() = default;
    explicit Tensor(TensorImplPtr<T> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape4 s, bool requires_grad = false) {
        return full(s, T(0), requires_grad);
    }

    static Tensor full(Shape4 s, T value, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl<T>>();
        impl->shape = s;
        impl->data.assign(static_cast<size_t>(s.numel()), value);
        impl->requires_grad = requires_grad;
        impl->node_id = detail::g_node_counter.fetch_add(1);
        return Tensor(std::move(impl));
    }

    static Tensor from_data(Shape4 s, std::vector<T> values, bool requires_grad = false) {
        if (static_cast<int64_t>(values.size()) != s.numel())
            throw DimensionError("from_data: buffer length " + std::to_string(values.size()) +
                                 " does not match shape " + s.str());
        auto impl = std::make_shared<TensorImpl<T>>();
        impl->shape = s;
        impl->data = std::move(values);
        impl->requires_grad = requires_grad;
        impl->node_id = detail::g_node_counter.fetch_add(1);
        return Tensor(std::move(impl));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return full({1, 1, 1, 1}, value, requires_grad);
    }

    static Tensor randn(Shape4 s, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        Tensor t = zeros(s, requires_grad);
        for (auto& v : t.impl_->data) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape4& shape() const { return impl_->shape; }
    int64_t numel() const { return impl_->shape.numel(); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        const Shape4& s = impl_->shape;
        return impl_->data[static_cast<size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
    }
    T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return const_cast<Tensor*>(this)->at(n, c, h, w);
    }

    T item() const {
        if (numel() != 1) throw UsageError("item() requires a scalar tensor");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Handle semantics: a const Tensor still exposes the shared node's
    // mutable gradient buffer (mirrors shared_ptr constness).
    std::vector<T>& grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    // Reverse sweep from this scalar. Visits every reachable node exactly
    // once, children before parents, accumulating (summing) gradients.
    void backward() const {
        if (numel() != 1) throw UsageError("backward() requires a scalar loss");
        impl_->ensure_grad();
        impl_->grad[0] = T(1);

        std::vector<TensorImpl<T>*> order;
        std::unordered_set<TensorImpl<T>*> seen;
        std::vector<TensorImpl<T>*> stack{impl_.get()};
        seen.insert(impl_.get());
        while (!stack.empty()) {
            TensorImpl<T>* node = stack.back();
            stack.pop_back();
            order.push_back(node);
            for (auto& p : node->parents) {
                if (seen.insert(p.get()).second) stack.push_back(p.get());
            }
        }
        std::sort(order.begin(), order.end(),
                  [](const TensorImpl<T>* a, const TensorImpl<T>* b) { return a->node_id > b->node_id; });
        for (TensorImpl<T>* node : order) {
            if (node->backward_fn) {
                node->ensure_grad();
                node->backward_fn();
            }
        }
    }

    TensorImpl<T>* impl() const { return impl_.get(); }
    const TensorImplPtr<T>& impl_ptr() const { return impl_; }

    // Detached copy of the values (leaf, no history).
    Tensor detach_copy(bool requires_grad = false) const {
        return from_data(impl_->shape, impl_->data, requires_grad);
    }

private:
    TensorImplPtr<T> impl_;
};

namespace detail {

// Registers `out` as the result of an op over `parents`. `backward` is
// invoked with the raw output impl; it must accumulate into parent grads.
template <typename T, typename F>
void attach_backward(Tensor<T>& out, const char* op_name,
                     std::initializer_list<Tensor<T>> parents, F&& backward) {
    bool any = false;
    for (const auto& p : parents)
        if (p.requires_grad()) any = true;
    out.impl()->op_name = op_name;
    if (!any) return;
    out.impl()->requires_grad = true;
    for (const auto& p : parents) out.impl()->parents.push_back(p.impl_ptr());
    TensorImpl<T>* self = out.impl();
    out.impl()->backward_fn = [self, fn = std::forward<F>(backward)]() mutable { fn(*self); };
}

} // namespace detail

// ---- elementwise / scalar graph primitives ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    detail::attach_backward(out, "add", {a, b}, [a, b](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        if (a.requires_grad()) {
            T* ga = a.grad().data();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            T* gb = b.grad().data();
            for (int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    detail::attach_backward(out, "sub", {a, b}, [a, b](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        if (a.requires_grad()) {
            T* ga = a.grad().data();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            T* gb = b.grad().data();
            for (int64_t i = 0; i < b.numel(); ++i) gb[i] -= g[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    detail::attach_backward(out, "mul", {a, b}, [a, b](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        const T* pa = a.data();
        const T* pb = b.data();
        if (a.requires_grad()) {
            T* ga = a.grad().data();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * pb[i];
        }
        if (b.requires_grad()) {
            T* gb = b.grad().data();
            for (int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i] * pa[i];
        }
    });
    return out;
}

// out = scale * x + shift, elementwise with scalar coefficients
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = scale * px[i] + shift;
    detail::attach_backward(out, "affine", {x}, [x, scale](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += scale * g[i];
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return affine(x, s, T(0));
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::log(px[i]);
    detail::attach_backward(out, "log", {x}, [x](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        const T* px = x.data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i] / px[i];
    });
    return out;
}

// Clamp values to [lo, hi]; gradient passes through on the closed interval.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::min(hi, std::max(lo, px[i]));
    detail::attach_backward(out, "clamp", {x}, [x, lo, hi](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        const T* px = x.data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i)
            if (px[i] >= lo && px[i] <= hi) gx[i] += g[i];
    });
    return out;
}

// Sum over all elements -> scalar tensor (1,1,1,1).
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    const T* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    detail::attach_backward(out, "sum", {x}, [x](TensorImpl<T>& self) mutable {
        const T g = self.grad[0];
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Copy of channel c as a (N,1,H,W) tensor.
template <typename T>
Tensor<T> select_channel(const Tensor<T>& x, int64_t c) {
    const Shape4 s = x.shape();
    if (c < 0 || c >= s.c) throw DimensionError("select_channel: channel out of range");
    Tensor<T> out = Tensor<T>::zeros({s.n, 1, s.h, s.w});
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.n; ++n)
        std::copy_n(x.data() + (n * s.c + c) * plane, plane, out.data() + n * plane);
    detail::attach_backward(out, "select_channel", {x}, [x, c, plane, s](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t n = 0; n < s.n; ++n) {
            T* dst = gx + (n * s.c + c) * plane;
            const T* src = g + n * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    });
    return out;
}

// Casts values between scalar types (leaf result, no graph edge).
template <typename TOut, typename TIn>
Tensor<TOut> cast_values(const Tensor<TIn>& x, bool requires_grad = false) {
    std::vector<TOut> out(static_cast<size_t>(x.numel()));
    const TIn* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) out[static_cast<size_t>(i)] = static_cast<TOut>(px[i]);
    return Tensor<TOut>::from_data(x.shape(), std::move(out), requires_grad);
}

} // namespace deeppyram
