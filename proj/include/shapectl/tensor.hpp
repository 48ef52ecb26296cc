#pragma once

// Dense N-d tensors with reverse-mode autodiff over a dynamic tape.
//
// Storage is float32 for everything the artifact trains and samples with;
// float64 instances of the same ops back the finite-difference gradcheck
// harness, where f32 rounding would drown the comparison. Ops record their
// backward closures onto the innermost active TapeScope; without a scope
// they are plain eager math (used on all sampling/eval paths).

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace shapectl::nn {

enum class DType { kF32, kF64 };

inline const char* dtype_name(DType dt) {
  return dt == DType::kF32 ? "f32" : "f64";
}

struct TensorImpl {
  std::vector<int> shape;
  std::int64_t numel = 0;
  DType dtype = DType::kF32;
  bool requires_grad = false;
  std::vector<float> d32;
  std::vector<double> d64;
  std::vector<float> g32;
  std::vector<double> g64;
  bool grad_live = false;

  void ensure_grad();
  void clear_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, DType dt = DType::kF32,
                      bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     DType dt = DType::kF32, bool requires_grad = false);
  static Tensor scalar(double value, DType dt = DType::kF32);
  static Tensor from_f32(std::vector<int> shape, std::vector<float> data);
  static Tensor from_f64(std::vector<int> shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return impl_->numel; }
  DType dtype() const { return impl_->dtype; }
  std::string shape_str() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  float* f32() { return impl_->d32.data(); }
  const float* f32() const { return impl_->d32.data(); }
  double* f64() { return impl_->d64.data(); }
  const double* f64() const { return impl_->d64.data(); }

  // dtype-agnostic element access (slow path; tests and small code only)
  double at(std::int64_t i) const;
  void set(std::int64_t i, double v);

  bool has_grad() const { return impl_->grad_live; }
  float* grad_f32() { return impl_->g32.data(); }
  double* grad_f64() { return impl_->g64.data(); }
  double grad_at(std::int64_t i) const;
  void zero_grad() const { impl_->clear_grad(); }
  void ensure_grad() const { impl_->ensure_grad(); }

  // deep copy without graph linkage
  Tensor clone() const;
  // graph-cutting copy: gradients never flow through (stop-gradient marker)
  Tensor detach() const;
  // dtype conversion (deep copy, no graph linkage)
  Tensor to_dtype(DType dt) const;

  bool all_finite() const;
  double max_abs() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend Tensor wrap_impl(std::shared_ptr<TensorImpl> impl);
};

Tensor wrap_impl(std::shared_ptr<TensorImpl> impl);

// RAII gradient tape. Nesting pushes a new innermost scope.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  static TapeScope* current();
  void record(std::function<void()> backward_fn);
  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss)=1 and replays recorded ops in reverse.
  // loss must be a finite scalar.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> ops_;
  TapeScope* prev_ = nullptr;
};

// true when a tape is active and grad should be tracked for these inputs
bool tracing(std::initializer_list<const Tensor*> inputs);

// RAII region with no active tape: forward math only, nothing recorded.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  TapeScope* saved_;
};

}  // namespace shapectl::nn
