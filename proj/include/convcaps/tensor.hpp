#ifndef CONVCAPS_TENSOR_HPP
#define CONVCAPS_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "convcaps/common.hpp"

namespace convcaps {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

i64 numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Shared-ownership handle over a dense row-major buffer. Copies alias the same
// storage; autodiff closures capture the impl pointer, so in-place parameter
// updates are visible to subsequent forward passes.
template <typename T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    i64 dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    i64 size() const { return static_cast<i64>(impl_->data.size()); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        if (b) impl_->ensure_grad();
        return *this;
    }
    T* grad() {
        impl_->ensure_grad();
        return impl_->grad.data();
    }
    const std::vector<T>& grad_vec() const { return impl_->grad; }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    T item() const;  // value of a single-element tensor

    std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

  private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Reverse-mode tape. Ops executed while a TapeScope is live append a backward
// closure; backward() seeds d(loss)=1 and replays them in reverse, accumulating
// into .grad of every tensor that requires_grad. Gradients are never zeroed
// here — that is the caller's job between steps.
template <typename T>
class Tape {
  public:
    void record(const char* op, std::function<void()> fn) {
        nodes_.push_back({op, std::move(fn)});
    }
    void backward(const Tensor<T>& loss);
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        const char* op;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
};

// RAII activation of a tape for the current thread. Nesting restores the
// previous tape on destruction.
template <typename T>
class TapeScope {
  public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

    Tape<T>& tape() { return tape_; }
    void backward(const Tensor<T>& loss) { tape_.backward(loss); }

  private:
    Tape<T> tape_;
    Tape<T>* prev_;
};

template <typename T>
Tape<T>* active_tape();

// Helpers for ops defined in other translation units.
template <typename T>
bool tape_active();
template <typename T>
void tape_record(const char* op, std::function<void()> fn);
template <typename T>
void check_finite(const char* op, const Tensor<T>& t);

// ---- differentiable ops ---------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
// log(max(a, floor)); zero slope where the clamp is active
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a, double floor);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape target);
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
template <typename T>
Tensor<T> sum_last(const Tensor<T>& a);
// Euclidean norm over the last axis; zero gradient at exactly zero vectors
template <typename T>
Tensor<T> vector_norm_last(const Tensor<T>& a);

// ---- gradient verification -------------------------------------------------
//
// Runs `forward` once under a tape to collect analytic gradients of the scalar
// loss w.r.t. every entry of `params`, then compares against central
// differences. Returns max over entries of
//   |analytic - cd| / max(|analytic|, |cd|, 1e-8).
template <typename T>
double grad_check(const std::function<Tensor<T>()>& forward,
                  const std::vector<Tensor<T>>& params, T eps);

template <typename T>
double grad_check(const std::function<Tensor<T>()>& forward, const Tensor<T>& x, T eps) {
    return grad_check(forward, std::vector<Tensor<T>>{x}, eps);
}

// Sampled variant for whole networks, where perturbing every entry is
// intractable: one taped backward, then central differences at
// `samples_per_param` entries of each parameter, chosen by `seed`.
template <typename T>
double grad_check_sampled(const std::function<Tensor<T>()>& forward,
                          const std::vector<Tensor<T>>& params, T eps, int samples_per_param,
                          std::uint64_t seed);

}  // namespace convcaps

#endif
