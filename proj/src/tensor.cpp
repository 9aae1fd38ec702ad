#include "mffd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace mffd {

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
    require(shape_numel(shape) == data.size(), ErrorCode::ShapeMismatch,
            "shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::normal(Shape shape, Rng& rng, double stddev) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

std::size_t Tensor::size(std::size_t axis) const {
    require(axis < dim(), ErrorCode::InvalidArgument,
            "axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return impl_->shape[axis];
}

double Tensor::item() const {
    require(numel() == 1, ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

std::span<double> Tensor::grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

Tensor Tensor::reshaped_copy(Shape shape) const { return Tensor(std::move(shape), impl_->data); }

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::push(Tensor output, BackwardFn fn) { entries_.push_back({std::move(output), std::move(fn)}); }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current().recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void record_op(Tensor& out, Tape::BackwardFn fn) {
    out.set_requires_grad(true);
    out.impl()->is_leaf = false;
    Tape::current().push(out, std::move(fn));
}

void backward(const Tensor& loss) {
    require(loss.defined() && loss.numel() == 1, ErrorCode::AutodiffMisuse,
            "backward requires a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
    auto& tape = Tape::current();
    require(!tape.empty(), ErrorCode::AutodiffMisuse, "backward on an empty tape");
    require(loss.requires_grad(), ErrorCode::AutodiffMisuse, "loss does not depend on any tracked tensor");

    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;

    auto entries = std::move(tape.entries_);
    tape.entries_.clear();
    NoGradGuard no_grad;
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->output.has_grad()) it->fn();
        // Release saved inputs as soon as their adjoint has run.
        it->fn = nullptr;
        if (!it->output.is_leaf()) it->output.zero_grad();
    }
}

namespace {
std::atomic<int>& finite_flag() {
    static std::atomic<int> flag = [] {
        const char* env = std::getenv("MFFD_CHECK_FINITE");
        return (env && std::string(env) != "0" && std::string(env) != "") ? 1 : 0;
    }();
    return flag;
}
}  // namespace

bool finite_checks_enabled() { return finite_flag().load() != 0; }
void set_finite_checks(bool on) { finite_flag().store(on ? 1 : 0); }

void check_finite(const Tensor& t, const char* op_name) {
    if (!finite_checks_enabled()) return;
    for (double v : t.data()) {
        if (!std::isfinite(v)) fail(ErrorCode::NonFinite, std::string("non-finite value produced by ") + op_name);
    }
}

}  // namespace mffd
