#include "clopa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace clopa::ad {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class Real>
BasicTensor<Real>::BasicTensor(Shape shape, std::vector<Real> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one axis");
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                shape_to_string(shape));
  }
  if (!std::all_of(data.begin(), data.end(), [](Real v) { return std::isfinite(v); })) {
    throw std::invalid_argument("tensor data contains NaN or Inf");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return BasicTensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::scalar(Real value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<Real>{value}, requires_grad);
}

template <class Real>
Real BasicTensor<Real>::item() const {
  if (impl_->data.size() != 1) throw std::logic_error("item() requires a single-element tensor");
  return impl_->data[0];
}

template <class Real>
void BasicTensor<Real>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) release_grad();
}

template <class Real>
std::span<Real> BasicTensor<Real>::grad_buffer() {
  if (!impl_->requires_grad) throw std::logic_error("gradient requested for a tensor that does not require grad");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Real(0));
  return impl_->grad;
}

template <class Real>
void BasicTensor<Real>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::clone() const {
  BasicTensor out;
  out.impl_ = std::make_shared<Impl>(*impl_);
  return out;
}

template <class Real>
bool BasicTape<Real>::wants(std::initializer_list<const BasicTensor<Real>*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const BasicTensor<Real>* t) { return t->requires_grad(); });
}

template <class Real>
void BasicTape<Real>::record(std::string_view op, BasicTensor<Real> output, std::function<void()> backward_fn) {
  if (!recording_) throw std::logic_error("record() on a tape that is not recording");
  nodes_.push_back(Node{op, std::move(output), std::move(backward_fn)});
}

template <class Real>
void BasicTape<Real>::backward(const BasicTensor<Real>& loss) {
  if (!loss.defined() || loss.numel() != 1) throw std::invalid_argument("backward() requires a scalar loss");
  if (!loss.requires_grad()) throw std::invalid_argument("backward() loss was not produced through the tape");

  // Intermediate gradients restart from zero so repeated calls accumulate
  // only into leaves.
  for (auto& node : nodes_) node.output.zero_grad();

  auto loss_handle = loss;
  loss_handle.grad_buffer()[0] += Real(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward_fn();
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace clopa::ad
