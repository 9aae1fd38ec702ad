#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mffd/error.hpp"
#include "mffd/rng.hpp"

namespace mffd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    bool is_leaf = true;
};
}  // namespace detail

/// Dense row-major float64 tensor with optional gradient tracking.
///
/// Copies are shallow handles onto the same storage. Layout for images and
/// feature maps is NCHW.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
    static Tensor normal(Shape shape, Rng& rng, double stddev = 1.0);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim() const { return impl_->shape.size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double item() const;

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const noexcept { return impl_->is_leaf; }

    bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
    /// Gradient buffer; empty span before any backward pass reached this tensor.
    std::span<const double> grad() const { return impl_->grad; }
    /// Gradient buffer, zero-allocated on first access.
    std::span<double> grad_buffer() const;
    void zero_grad() { impl_->grad.clear(); }

    /// New leaf holding a copy of the values.
    Tensor detach() const;
    Tensor reshaped_copy(Shape shape) const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
    detail::TensorImpl* impl() const noexcept { return impl_.get(); }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations executed on this thread.
///
/// Each entry holds the op output and a closure that reads the output's
/// gradient and accumulates into the inputs it captured. backward() replays
/// entries in reverse and consumes the tape.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    static Tape& current();

    void push(Tensor output, BackwardFn fn);
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    void clear() noexcept { entries_.clear(); }

    bool recording() const noexcept { return recording_ > 0; }

private:
    friend class NoGradGuard;
    friend class TapeIsolation;
    friend void backward(const Tensor& loss);

    struct Entry {
        Tensor output;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
    int recording_ = 1;
};

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() { --Tape::current().recording_; }
    ~NoGradGuard() { ++Tape::current().recording_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Gives the current thread a fresh, recording tape for its lifetime so a
/// nested forward/backward pass (e.g. input-gradient features) neither
/// consumes the outer entries nor depends on an enclosing NoGradGuard.
class TapeIsolation {
public:
    TapeIsolation() : saved_(std::move(Tape::current().entries_)), recording_(Tape::current().recording_) {
        Tape::current().entries_.clear();
        Tape::current().recording_ = 1;
    }
    ~TapeIsolation() {
        Tape::current().entries_ = std::move(saved_);
        Tape::current().recording_ = recording_;
    }
    TapeIsolation(const TapeIsolation&) = delete;
    TapeIsolation& operator=(const TapeIsolation&) = delete;

private:
    std::vector<Tape::Entry> saved_;
    int recording_;
};

/// Reverse-mode pass from a scalar loss. Leaf gradients accumulate.
/// Double-backward is not supported: closures run with recording disabled.
void backward(const Tensor& loss);

/// True when an op over these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Marks `out` as a non-leaf requiring grad and pushes its adjoint closure.
/// Op implementations call this only when needs_grad() was true.
void record_op(Tensor& out, Tape::BackwardFn fn);

/// Throws NonFinite when finite-checking is on (env MFFD_CHECK_FINITE=1)
/// and the tensor holds NaN or Inf.
void check_finite(const Tensor& t, const char* op_name);
bool finite_checks_enabled();
void set_finite_checks(bool on);

}  // namespace mffd
