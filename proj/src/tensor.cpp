#include "shapectl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "shapectl/errors.hpp"

namespace shapectl::nn {

namespace {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw InvariantError("tensor extents must be positive");
    n *= d;
  }
  return n;
}

thread_local TapeScope* t_current_tape = nullptr;

}  // namespace

void TensorImpl::ensure_grad() {
  if (grad_live) return;
  if (dtype == DType::kF32)
    g32.assign(static_cast<std::size_t>(numel), 0.0f);
  else
    g64.assign(static_cast<std::size_t>(numel), 0.0);
  grad_live = true;
}

void TensorImpl::clear_grad() {
  g32.clear();
  g64.clear();
  grad_live = false;
}

Tensor Tensor::zeros(std::vector<int> shape, DType dt, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->numel = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->dtype = dt;
  impl->requires_grad = requires_grad;
  if (dt == DType::kF32)
    impl->d32.assign(static_cast<std::size_t>(impl->numel), 0.0f);
  else
    impl->d64.assign(static_cast<std::size_t>(impl->numel), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, DType dt,
                    bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  if (dt == DType::kF32) {
    float v = static_cast<float>(value);
    for (auto& x : t.impl()->d32) x = v;
  } else {
    for (auto& x : t.impl()->d64) x = value;
  }
  return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

Tensor Tensor::from_f32(std::vector<int> shape, std::vector<float> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->numel = shape_numel(shape);
  if (static_cast<std::size_t>(impl->numel) != data.size())
    throw InvariantError("from_f32: data length does not match shape");
  impl->shape = std::move(shape);
  impl->dtype = DType::kF32;
  impl->d32 = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_f64(std::vector<int> shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->numel = shape_numel(shape);
  if (static_cast<std::size_t>(impl->numel) != data.size())
    throw InvariantError("from_f64: data length does not match shape");
  impl->shape = std::move(shape);
  impl->dtype = DType::kF64;
  impl->d64 = std::move(data);
  return Tensor(std::move(impl));
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < impl_->shape.size(); ++i) {
    if (i) os << ",";
    os << impl_->shape[i];
  }
  os << "]";
  return os.str();
}

double Tensor::at(std::int64_t i) const {
  return impl_->dtype == DType::kF32
             ? static_cast<double>(impl_->d32[static_cast<std::size_t>(i)])
             : impl_->d64[static_cast<std::size_t>(i)];
}

void Tensor::set(std::int64_t i, double v) {
  if (impl_->dtype == DType::kF32)
    impl_->d32[static_cast<std::size_t>(i)] = static_cast<float>(v);
  else
    impl_->d64[static_cast<std::size_t>(i)] = v;
}

double Tensor::grad_at(std::int64_t i) const {
  if (!impl_->grad_live) return 0.0;
  return impl_->dtype == DType::kF32
             ? static_cast<double>(impl_->g32[static_cast<std::size_t>(i)])
             : impl_->g64[static_cast<std::size_t>(i)];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->numel = impl_->numel;
  impl->dtype = impl_->dtype;
  impl->requires_grad = impl_->requires_grad;
  impl->d32 = impl_->d32;
  impl->d64 = impl_->d64;
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.impl()->requires_grad = false;
  return t;
}

Tensor Tensor::to_dtype(DType dt) const {
  if (dt == impl_->dtype) return clone();
  Tensor t = Tensor::zeros(impl_->shape, dt, false);
  for (std::int64_t i = 0; i < impl_->numel; ++i) t.set(i, at(i));
  return t;
}

bool Tensor::all_finite() const {
  if (impl_->dtype == DType::kF32) {
    for (float v : impl_->d32)
      if (!std::isfinite(v)) return false;
  } else {
    for (double v : impl_->d64)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (std::int64_t i = 0; i < impl_->numel; ++i)
    m = std::max(m, std::fabs(at(i)));
  return m;
}

Tensor wrap_impl(std::shared_ptr<TensorImpl> impl) {
  return Tensor(std::move(impl));
}

TapeScope::TapeScope() : prev_(t_current_tape) { t_current_tape = this; }

TapeScope::~TapeScope() { t_current_tape = prev_; }

TapeScope* TapeScope::current() { return t_current_tape; }

void TapeScope::record(std::function<void()> backward_fn) {
  ops_.push_back(std::move(backward_fn));
}

void TapeScope::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw InvariantError("backward: loss must be a scalar tensor, got " +
                         (loss.defined() ? loss.shape_str() : "<null>"));
  if (!std::isfinite(loss.at(0)))
    throw InvariantError("backward: loss is not finite");
  loss.impl()->ensure_grad();
  if (loss.dtype() == DType::kF32)
    loss.impl()->g32[0] = 1.0f;
  else
    loss.impl()->g64[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (t_current_tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

NoGradScope::NoGradScope() : saved_(t_current_tape) { t_current_tape = nullptr; }

NoGradScope::~NoGradScope() { t_current_tape = saved_; }

}  // namespace shapectl::nn
