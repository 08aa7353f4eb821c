#include "convcaps/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace convcaps {

i64 numel(const Shape& s) {
    i64 n = 1;
    for (i64 e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
    for (i64 e : shape) {
        if (e <= 0) throw usage_error("tensor extents must be positive, got " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(numel(impl_->shape)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
    if (numel(shape) != static_cast<i64>(values.size()))
        throw usage_error("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1) throw usage_error("item() on tensor of size " + std::to_string(size()));
    return impl_->data[0];
}

namespace {
template <typename T>
thread_local Tape<T>* g_tape = nullptr;
}  // namespace

template <typename T>
Tape<T>* active_tape() {
    return g_tape<T>;
}

template <typename T>
bool tape_active() {
    return g_tape<T> != nullptr;
}

template <typename T>
void tape_record(const char* op, std::function<void()> fn) {
    g_tape<T>->record(op, std::move(fn));
}

template <typename T>
TapeScope<T>::TapeScope() : prev_(g_tape<T>) {
    g_tape<T> = &tape_;
}

template <typename T>
TapeScope<T>::~TapeScope() {
    g_tape<T> = prev_;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw usage_error("backward() expects a scalar loss");
    auto impl = loss.impl();
    impl->ensure_grad();
    impl->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
}

template <typename T>
void check_finite(const char* op, const Tensor<T>& t) {
    if (!finite_checks_enabled()) return;
    const T* p = t.data();
    const i64 n = t.size();
    for (i64 i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(p[i])))
            throw numeric_error(std::string("non-finite value produced by op '") + op + "'");
    }
}

namespace {

// Shared plumbing: decide whether an op output joins the autodiff graph, and
// if so mark it and pre-allocate gradients on the differentiable inputs.
template <typename T>
bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape_active<T>()) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
void prepare(const Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs) {
    const_cast<Tensor<T>&>(out).set_requires_grad(true);
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) t->impl()->ensure_grad();
}

struct AxisSplit {
    i64 outer, n, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw usage_error("axis out of range for shape " + shape_str(s));
    AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw usage_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    const i64 n = a.size();
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (i64 i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    check_finite("add", out);
    if (wants_grad<T>({&a, &b})) {
        prepare(out, {&a, &b});
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        tape_record<T>("add", [ai, bi, oi, n] {
            for (i64 i = 0; i < n; ++i) {
                const T g = oi->grad[static_cast<size_t>(i)];
                if (ai->requires_grad) ai->grad[static_cast<size_t>(i)] += g;
                if (bi->requires_grad) bi->grad[static_cast<size_t>(i)] += g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    const i64 n = a.size();
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (i64 i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    check_finite("sub", out);
    if (wants_grad<T>({&a, &b})) {
        prepare(out, {&a, &b});
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        tape_record<T>("sub", [ai, bi, oi, n] {
            for (i64 i = 0; i < n; ++i) {
                const T g = oi->grad[static_cast<size_t>(i)];
                if (ai->requires_grad) ai->grad[static_cast<size_t>(i)] += g;
                if (bi->requires_grad) bi->grad[static_cast<size_t>(i)] -= g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    const i64 n = a.size();
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (i64 i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    check_finite("mul", out);
    if (wants_grad<T>({&a, &b})) {
        prepare(out, {&a, &b});
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        tape_record<T>("mul", [ai, bi, oi, n] {
            for (i64 i = 0; i < n; ++i) {
                const size_t k = static_cast<size_t>(i);
                const T g = oi->grad[k];
                if (ai->requires_grad) ai->grad[k] += g * bi->data[k];
                if (bi->requires_grad) bi->grad[k] += g * ai->data[k];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
    Tensor<T> out(a.shape());
    const i64 n = a.size();
    const T* pa = a.data();
    T* po = out.data();
    const T fs = static_cast<T>(s);
    for (i64 i = 0; i < n; ++i) po[i] = pa[i] * fs;
    check_finite("scale", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("scale", [ai, oi, n, fs] {
            for (i64 i = 0; i < n; ++i)
                ai->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(i)] * fs;
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
    Tensor<T> out(a.shape());
    const i64 n = a.size();
    const T* pa = a.data();
    T* po = out.data();
    const T fs = static_cast<T>(s);
    for (i64 i = 0; i < n; ++i) po[i] = pa[i] + fs;
    check_finite("add_scalar", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("add_scalar", [ai, oi, n] {
            for (i64 i = 0; i < n; ++i)
                ai->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    const i64 n = a.size();
    const T* pa = a.data();
    T* po = out.data();
    for (i64 i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
    check_finite("relu", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("relu", [ai, oi, n] {
            for (i64 i = 0; i < n; ++i) {
                const size_t k = static_cast<size_t>(i);
                if (ai->data[k] > T(0)) ai->grad[k] += oi->grad[k];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a, double floor) {
    if (floor <= 0) throw usage_error("log_clamped floor must be positive");
    Tensor<T> out(a.shape());
    const i64 n = a.size();
    const T* pa = a.data();
    T* po = out.data();
    const T f = static_cast<T>(floor);
    for (i64 i = 0; i < n; ++i) po[i] = std::log(pa[i] > f ? pa[i] : f);
    check_finite("log_clamped", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("log_clamped", [ai, oi, n, f] {
            for (i64 i = 0; i < n; ++i) {
                const size_t k = static_cast<size_t>(i);
                if (ai->data[k] > f) ai->grad[k] += oi->grad[k] / ai->data[k];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw usage_error("concat of zero tensors");
    const int rank = parts[0].rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw usage_error("concat axis out of range");
    Shape out_shape = parts[0].shape();
    i64 total_axis = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw usage_error("concat rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d == axis) continue;
            if (p.dim(d) != out_shape[static_cast<size_t>(d)])
                throw usage_error("concat: extents differ off the concat axis");
        }
        total_axis += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total_axis;
    Tensor<T> out(out_shape);

    const AxisSplit sp = split_axis(out_shape, axis);
    T* po = out.data();
    i64 offset = 0;  // start of this part along the concat axis
    for (const auto& p : parts) {
        const i64 pn = p.dim(axis);
        const T* pp = p.data();
        for (i64 o = 0; o < sp.outer; ++o)
            std::copy(pp + o * pn * sp.inner, pp + (o + 1) * pn * sp.inner,
                      po + (o * sp.n + offset) * sp.inner);
        offset += pn;
    }
    check_finite("concat", out);

    bool any_grad = false;
    if (tape_active<T>())
        for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
    if (any_grad) {
        const_cast<Tensor<T>&>(out).set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl<T>>> impls;
        std::vector<i64> offs, lens;
        i64 off = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) p.impl()->ensure_grad();
            impls.push_back(p.impl());
            offs.push_back(off);
            lens.push_back(p.dim(axis));
            off += p.dim(axis);
        }
        auto oi = out.impl();
        tape_record<T>("concat", [impls, offs, lens, oi, sp] {
            for (size_t pi = 0; pi < impls.size(); ++pi) {
                auto& in = impls[pi];
                if (!in->requires_grad) continue;
                const i64 pn = lens[pi];
                for (i64 o = 0; o < sp.outer; ++o) {
                    const T* g = oi->grad.data() + (o * sp.n + offs[pi]) * sp.inner;
                    T* dst = in->grad.data() + o * pn * sp.inner;
                    for (i64 i = 0; i < pn * sp.inner; ++i) dst[i] += g[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape target) {
    if (numel(target) != a.size())
        throw usage_error("reshape from " + shape_str(a.shape()) + " to " + shape_str(target) +
                          " changes element count");
    Tensor<T> out(std::move(target), std::vector<T>(a.vec()));
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        const i64 n = a.size();
        tape_record<T>("reshape", [ai, oi, n] {
            for (i64 i = 0; i < n; ++i)
                ai->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    const AxisSplit sp = split_axis(a.shape(), axis);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (i64 o = 0; o < sp.outer; ++o) {
        for (i64 in = 0; in < sp.inner; ++in) {
            const i64 base = o * sp.n * sp.inner + in;
            T m = pa[base];
            for (i64 i = 1; i < sp.n; ++i) m = std::max(m, pa[base + i * sp.inner]);
            T z = T(0);
            for (i64 i = 0; i < sp.n; ++i) {
                const T e = std::exp(pa[base + i * sp.inner] - m);
                po[base + i * sp.inner] = e;
                z += e;
            }
            for (i64 i = 0; i < sp.n; ++i) po[base + i * sp.inner] /= z;
        }
    }
    check_finite("softmax", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("softmax", [ai, oi, sp] {
            for (i64 o = 0; o < sp.outer; ++o) {
                for (i64 in = 0; in < sp.inner; ++in) {
                    const i64 base = o * sp.n * sp.inner + in;
                    T dot = T(0);
                    for (i64 i = 0; i < sp.n; ++i) {
                        const size_t k = static_cast<size_t>(base + i * sp.inner);
                        dot += oi->grad[k] * oi->data[k];
                    }
                    for (i64 i = 0; i < sp.n; ++i) {
                        const size_t k = static_cast<size_t>(base + i * sp.inner);
                        ai->grad[k] += oi->data[k] * (oi->grad[k] - dot);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    // Fixed left-to-right accumulation keeps the result reproducible.
    T acc = T(0);
    const T* pa = a.data();
    const i64 n = a.size();
    for (i64 i = 0; i < n; ++i) acc += pa[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    check_finite("sum", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("sum", [ai, oi, n] {
            const T g = oi->grad[0];
            for (i64 i = 0; i < n; ++i) ai->grad[static_cast<size_t>(i)] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    T acc = T(0);
    const T* pa = a.data();
    const i64 n = a.size();
    for (i64 i = 0; i < n; ++i) acc += pa[i];
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    check_finite("mean", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("mean", [ai, oi, n] {
            const T g = oi->grad[0] / static_cast<T>(n);
            for (i64 i = 0; i < n; ++i) ai->grad[static_cast<size_t>(i)] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
    if (a.rank() < 1) throw usage_error("sum_last needs rank >= 1");
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    if (out_shape.empty()) out_shape = Shape{};
    const i64 c = a.dim(a.rank() - 1);
    const i64 rows = a.size() / c;
    Tensor<T> out(out_shape.empty() ? Shape{} : out_shape,
                  std::vector<T>(static_cast<size_t>(rows), T(0)));
    const T* pa = a.data();
    T* po = out.data();
    for (i64 r = 0; r < rows; ++r) {
        T acc = T(0);
        for (i64 i = 0; i < c; ++i) acc += pa[r * c + i];
        po[r] = acc;
    }
    check_finite("sum_last", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("sum_last", [ai, oi, rows, c] {
            for (i64 r = 0; r < rows; ++r) {
                const T g = oi->grad[static_cast<size_t>(r)];
                for (i64 i = 0; i < c; ++i) ai->grad[static_cast<size_t>(r * c + i)] += g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> vector_norm_last(const Tensor<T>& a) {
    if (a.rank() < 1) throw usage_error("vector_norm_last needs rank >= 1");
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    const i64 c = a.dim(a.rank() - 1);
    const i64 rows = a.size() / c;
    Tensor<T> out(out_shape.empty() ? Shape{} : out_shape,
                  std::vector<T>(static_cast<size_t>(rows), T(0)));
    const T* pa = a.data();
    T* po = out.data();
    for (i64 r = 0; r < rows; ++r) {
        T acc = T(0);
        for (i64 i = 0; i < c; ++i) {
            const T v = pa[r * c + i];
            acc += v * v;
        }
        po[r] = std::sqrt(acc);
    }
    check_finite("vector_norm_last", out);
    if (wants_grad<T>({&a})) {
        prepare(out, {&a});
        auto ai = a.impl(), oi = out.impl();
        tape_record<T>("vector_norm_last", [ai, oi, rows, c] {
            for (i64 r = 0; r < rows; ++r) {
                const T norm = oi->data[static_cast<size_t>(r)];
                if (norm <= T(0)) continue;  // zero vector: subgradient 0
                const T g = oi->grad[static_cast<size_t>(r)] / norm;
                for (i64 i = 0; i < c; ++i) {
                    const size_t k = static_cast<size_t>(r * c + i);
                    ai->grad[k] += g * ai->data[k];
                }
            }
        });
    }
    return out;
}

template <typename T>
double grad_check(const std::function<Tensor<T>()>& forward, const std::vector<Tensor<T>>& params,
                  T eps) {
    for (const auto& p : params) const_cast<Tensor<T>&>(p).zero_grad();

    std::vector<std::vector<T>> analytic;
    {
        TapeScope<T> scope;
        Tensor<T> loss = forward();
        scope.backward(loss);
    }
    for (const auto& p : params) analytic.push_back(p.grad_vec());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& p = const_cast<Tensor<T>&>(params[pi]);
        for (i64 i = 0; i < p.size(); ++i) {
            const size_t k = static_cast<size_t>(i);
            const T saved = p.data()[k];
            p.data()[k] = saved + eps;
            const double up = static_cast<double>(forward().item());
            p.data()[k] = saved - eps;
            const double down = static_cast<double>(forward().item());
            p.data()[k] = saved;
            const double cd = (up - down) / (2.0 * static_cast<double>(eps));
            const double an = static_cast<double>(analytic[pi][k]);
            const double denom = std::max({std::abs(an), std::abs(cd), 1e-8});
            worst = std::max(worst, std::abs(an - cd) / denom);
        }
    }
    return worst;
}

template <typename T>
double grad_check_sampled(const std::function<Tensor<T>()>& forward,
                          const std::vector<Tensor<T>>& params, T eps, int samples_per_param,
                          std::uint64_t seed) {
    for (const auto& p : params) const_cast<Tensor<T>&>(p).zero_grad();

    std::vector<std::vector<T>> analytic;
    {
        TapeScope<T> scope;
        Tensor<T> loss = forward();
        scope.backward(loss);
    }
    for (const auto& p : params) analytic.push_back(p.grad_vec());

    Rng rng(seed);
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& p = const_cast<Tensor<T>&>(params[pi]);
        const int n = static_cast<int>(std::min<i64>(p.size(), samples_per_param));
        for (int s = 0; s < n; ++s) {
            const size_t k = static_cast<size_t>(rng.below(p.size()));
            const T saved = p.data()[k];
            p.data()[k] = saved + eps;
            const double up = static_cast<double>(forward().item());
            p.data()[k] = saved - eps;
            const double down = static_cast<double>(forward().item());
            p.data()[k] = saved;
            const double cd = (up - down) / (2.0 * static_cast<double>(eps));
            const double an = static_cast<double>(analytic[pi][k]);
            const double denom = std::max({std::abs(an), std::abs(cd), 1e-8});
            worst = std::max(worst, std::abs(an - cd) / denom);
        }
    }
    return worst;
}

// Explicit instantiations: training runs in f32, gradient verification in f64.
#define CONVCAPS_INSTANTIATE(T)                                                               \
    template class Tensor<T>;                                                                 \
    template class Tape<T>;                                                                   \
    template class TapeScope<T>;                                                              \
    template Tape<T>* active_tape<T>();                                                       \
    template bool tape_active<T>();                                                           \
    template void tape_record<T>(const char*, std::function<void()>);                         \
    template void check_finite<T>(const char*, const Tensor<T>&);                             \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> scale(const Tensor<T>&, double);                                       \
    template Tensor<T> add_scalar(const Tensor<T>&, double);                                  \
    template Tensor<T> relu(const Tensor<T>&);                                                \
    template Tensor<T> log_clamped(const Tensor<T>&, double);                                 \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                            \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
    template Tensor<T> softmax(const Tensor<T>&, int);                                        \
    template Tensor<T> sum(const Tensor<T>&);                                                 \
    template Tensor<T> mean(const Tensor<T>&);                                                \
    template Tensor<T> sum_last(const Tensor<T>&);                                            \
    template Tensor<T> vector_norm_last(const Tensor<T>&);                                    \
    template double grad_check(const std::function<Tensor<T>()>&, const std::vector<Tensor<T>>&, \
                               T);                                                            \
    template double grad_check_sampled(const std::function<Tensor<T>()>&,                     \
                                       const std::vector<Tensor<T>>&, T, int, std::uint64_t);

CONVCAPS_INSTANTIATE(float)
CONVCAPS_INSTANTIATE(double)
#undef CONVCAPS_INSTANTIATE

}  // namespace convcaps
