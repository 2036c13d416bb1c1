#include "geomim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace geomim {

namespace {

thread_local bool t_grad_enabled = true;
thread_local bool t_finite_checks = false;
thread_local bool t_attention_core = false;
thread_local FlopTally t_flops;

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  if (shape.size() == 1) out << ',';
  out << ')';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return impl_->values[0];
}

std::span<const double> Tensor::grad() const {
  if (!impl_->grad) throw TapeError("grad: tensor has no gradient");
  return *impl_->grad;
}

Tensor Tensor::clone() const { return from(shape(), impl_->values, false); }

Tensor Tensor::detach() const { return clone(); }

Tensor make_result(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return Tensor(std::move(impl));
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
  consumed_ = false;
}

Tensor Tape::record(std::string_view op, const std::vector<Tensor>& inputs, Tensor output,
                    BackwardFn backward) {
  if (t_finite_checks) {
    for (double v : output.values()) {
      if (!std::isfinite(v)) {
        throw NonFiniteError(std::string(op), "primitive '" + std::string(op) +
                                                  "' produced a non-finite value");
      }
    }
  }
  if (!t_grad_enabled) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return output;
  if (consumed_) clear();

  auto& impl = *output.impl_;
  impl.requires_grad = true;
  impl.has_node = true;
  impl.tape_generation = generation_;
  impl.node_index = nodes_.size();

  Node node;
  node.op = std::string(op);
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) node.inputs.push_back(t.impl_);
  node.output = output.impl_;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return output;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw TapeError("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw TapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  const auto& limpl = *loss.impl_;
  if (!limpl.has_node || limpl.tape_generation != generation_) {
    throw TapeError("backward: loss was not recorded on the current tape");
  }
  if (consumed_) {
    throw TapeError("backward: tape already consumed; re-record the forward pass");
  }
  consumed_ = true;

  for (auto& node : nodes_) {
    node.output->grad.reset();
    for (auto& in : node.inputs) in->grad.reset();
  }
  loss.impl_->grad = std::vector<double>{1.0};
  for (std::size_t i = limpl.node_index + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.output->grad) continue;
    node.backward();
  }
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.push_back(n.op);
  return names;
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

void accumulate_grad(const Tensor& t, std::span<const double> g) {
  auto& impl = *t.impl();
  if (!impl.requires_grad) return;
  if (g.size() != impl.values.size()) {
    throw ShapeError("accumulate_grad: gradient of size " + std::to_string(g.size()) +
                     " for tensor of shape " + shape_str(impl.shape));
  }
  if (!impl.grad) {
    impl.grad = std::vector<double>(g.begin(), g.end());
    return;
  }
  auto& dst = *impl.grad;
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

FiniteCheckGuard::FiniteCheckGuard() : previous_(t_finite_checks) { t_finite_checks = true; }
FiniteCheckGuard::~FiniteCheckGuard() { t_finite_checks = previous_; }

bool grad_enabled() { return t_grad_enabled; }
bool finite_checks_enabled() { return t_finite_checks; }

FlopTally& flop_tally() { return t_flops; }
void reset_flop_tally() { t_flops = {}; }

AttentionCoreScope::AttentionCoreScope() : previous_(t_attention_core) {
  t_attention_core = true;
}
AttentionCoreScope::~AttentionCoreScope() { t_attention_core = previous_; }
bool in_attention_core() { return t_attention_core; }

}  // namespace geomim
