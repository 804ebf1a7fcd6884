#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace karat {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until the first gradient accumulation reaches this tensor.
  std::vector<double> grad;
  bool requires_grad = false;

  std::vector<double>& ensure_grad();
};

/// Dense row-major array of doubles with shared ownership.
///
/// Copies alias the same storage; use `clone()` for a deep copy. Values are
/// treated as immutable once a tensor has been used as an op input, except by
/// optimizers and initializers that own the parameter.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const;
  double at(std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient values; zeros when no gradient has been accumulated.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const { return impl_->grad; }
  std::vector<double>& grad_buffer() { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;
  /// Deep copy with no gradient tracking.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>, bool);

  std::shared_ptr<TensorImpl> impl_;
};

/// Wraps freshly computed values as a tensor; used by op implementations.
Tensor make_result(Shape shape, std::vector<double> data, bool requires_grad);

/// Ordered record of differentiable ops for one logical training thread.
///
/// Recording order is topological by construction, so backward simply walks
/// the node list in reverse. Nodes whose output never received a gradient are
/// skipped; every other node runs exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

  struct Node {
    std::shared_ptr<TensorImpl> output;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    BackwardFn backward;
  };

  /// The calling thread's tape.
  static Tape& current();

  void record(const Tensor& output, std::vector<Tensor> parents, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1, propagates to every reachable tensor, then
  /// clears the tape.
  void backward(const Tensor& loss);

  void reset() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes whose backward ran during the last `backward` call.
  std::size_t last_visited() const { return last_visited_; }

 private:
  std::vector<Node> nodes_;
  std::size_t last_visited_ = 0;
};

/// True when ops on this thread should be recorded.
bool grad_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs reverse mode on the current thread's tape; `loss` must be a scalar.
void backward(const Tensor& loss);

}  // namespace karat
