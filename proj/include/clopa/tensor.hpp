#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace clopa::ad {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array with an optional gradient buffer.
///
/// A tensor is a shared handle: copies alias the same storage, so a tape
/// node and the caller observe the same gradient. Use clone() for a deep
/// copy. Values are required to be finite at construction.
template <class Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, Real value, bool requires_grad = false);
  static BasicTensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const Real> data() const { return impl_->data; }
  /// Mutable view for optimisers and loaders; callers keep values finite.
  std::span<Real> mutable_data() { return impl_->data; }
  Real item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  /// Turning gradients off also releases any allocated gradient buffer.
  void set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Real> grad() const { return impl_->grad; }
  /// Allocates a zero gradient on first use. Only valid when requires_grad.
  std::span<Real> grad_buffer();
  void zero_grad();
  void release_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  BasicTensor clone() const;
  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Nodes are appended in execution order, so every node's inputs were
/// produced by an earlier node or are leaves. backward() walks the list
/// once in reverse. A tape constructed with recording=false never stores
/// nodes, which is the inference mode.
template <class Real>
class BasicTape {
 public:
  explicit BasicTape(bool recording = true) : recording_(recording) {}

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// True when an op over these inputs must be recorded.
  bool wants(std::initializer_list<const BasicTensor<Real>*> inputs) const;

  void record(std::string_view op, BasicTensor<Real> output, std::function<void()> backward_fn);

  /// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
  void backward(const BasicTensor<Real>& loss);

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string_view op;
    BasicTensor<Real> output;
    std::function<void()> backward_fn;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace clopa::ad
