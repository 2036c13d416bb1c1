#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace geomim {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a primitive produces NaN/Inf while finite checking is enabled.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string primitive, const std::string& what)
      : std::runtime_error(what), primitive_(std::move(primitive)) {}
  const std::string& primitive() const { return primitive_; }

 private:
  std::string primitive_;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  // Tape bookkeeping for non-leaf tensors.
  std::uint64_t tape_generation = 0;
  std::size_t node_index = 0;
  bool has_node = false;
};

/// Dense row-major f64 array with an optional gradient. Copies share storage;
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  std::span<double> mutable_values() { return impl_->values; }
  double operator[](std::size_t i) const { return impl_->values[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return impl_->grad.has_value(); }
  std::span<const double> grad() const;
  void clear_grad() { impl_->grad.reset(); }

  /// Deep copy of values, detached from any tape, with no gradient.
  Tensor clone() const;
  /// Same values, cut from the graph (no requires_grad).
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>);
};

/// Ordered record of primitive applications on this thread. Backward walks the
/// records in exact reverse order.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& current();

  void clear();
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

  /// Registers `output` as produced by `op` from `inputs`. Returns the output
  /// tensor with requires_grad set when any input requires it. The backward
  /// closure reads output.grad() and calls accumulate_grad on inputs.
  Tensor record(std::string_view op, const std::vector<Tensor>& inputs, Tensor output,
                BackwardFn backward);

  void backward(const Tensor& loss);

  /// Names of recorded primitives in order (diagnostics and tests).
  std::vector<std::string> op_names() const;

 private:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
  bool consumed_ = false;
};

void backward(const Tensor& loss);

/// Adds `g` into t's gradient if t requires grad.
void accumulate_grad(const Tensor& t, std::span<const double> g);

/// New untracked tensor (primitive outputs are built from this).
Tensor make_result(Shape shape, std::vector<double> values);

/// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Enables per-primitive finite checks on this thread while alive.
class FiniteCheckGuard {
 public:
  FiniteCheckGuard();
  ~FiniteCheckGuard();
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();
bool finite_checks_enabled();

/// Multiply-add counts (2 per MAC) issued by matmul on this thread. Calls made
/// while an AttentionCoreScope is alive are also tallied under `attention`.
struct FlopTally {
  std::uint64_t total = 0;
  std::uint64_t attention = 0;
};
FlopTally& flop_tally();
void reset_flop_tally();

class AttentionCoreScope {
 public:
  AttentionCoreScope();
  ~AttentionCoreScope();

 private:
  bool previous_;
};
bool in_attention_core();

}  // namespace geomim
