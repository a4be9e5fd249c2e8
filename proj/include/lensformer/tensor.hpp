#pragma once
/*
 * Dense row-major tensor with tape-based reverse-mode differentiation.
 *
 * A Tensor is a handle: copies share storage (and gradient). Operations in
 * ops.hpp record a node on the calling thread's Tape whenever one of their
 * inputs requires a gradient; backward() replays the tape in reverse and
 * clears it.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "lensformer/errors.hpp"

namespace lensformer {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using StoragePtr = std::shared_ptr<TensorStorage<T>>;

  Tensor() : Tensor(Shape{1}) {}

  explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<TensorStorage<T>>()) {
    check_extents(shape);
    s_->data.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<TensorStorage<T>>()) {
    check_extents(shape);
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* raw() { return s_->data.data(); }
  const T* raw() const { return s_->data.data(); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return s_->data[0];
  }

  T& operator[](std::size_t flat) { return s_->data[flat]; }
  T operator[](std::size_t flat) const { return s_->data[flat]; }

  T& at(std::initializer_list<std::size_t> idx) { return s_->data[offset(idx)]; }
  T at(std::initializer_list<std::size_t> idx) const { return s_->data[offset(idx)]; }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    s_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return s_->grad.size() == s_->data.size(); }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> mutable_grad() {
    s_->ensure_grad();
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  /// Deep copy without gradient history.
  Tensor clone() const {
    Tensor t(shape(), s_->data);
    t.set_requires_grad(requires_grad());
    return t;
  }

  /// Shares no storage and never requires a gradient.
  Tensor detach() const { return Tensor(shape(), s_->data); }

  const StoragePtr& storage() const { return s_; }
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  static void check_extents(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != rank()) throw DimensionError("index rank mismatch for shape " + to_string(shape()));
    std::size_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
      if (i >= s_->shape[k]) throw DimensionError("index out of range for shape " + to_string(shape()));
      off = off * s_->shape[k] + i;
      ++k;
    }
    return off;
  }

  StoragePtr s_;
};

/// Ordered record of differentiable operations executed on one thread.
template <typename T>
class Tape {
 public:
  using StoragePtr = typename Tensor<T>::StoragePtr;

  struct Node {
    std::vector<StoragePtr> inputs;
    StoragePtr output;
    std::function<void()> backward;
  };

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Records `fn` if any input requires a gradient; marks `out` as differentiable.
  template <typename Fn>
  void record(std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& out, Fn&& fn) {
    if (!enabled_) return;
    bool any = false;
    for (auto* t : inputs) any = any || t->requires_grad();
    if (!any) return;
    Node node;
    for (auto* t : inputs) node.inputs.push_back(t->storage());
    out.set_requires_grad(true);
    node.output = out.storage();
    node.backward = std::forward<Fn>(fn);
    nodes_.push_back(std::move(node));
  }

  template <typename Fn>
  void record(const std::vector<Tensor<T>>& inputs, Tensor<T>& out, Fn&& fn) {
    if (!enabled_) return;
    bool any = false;
    for (auto& t : inputs) any = any || t.requires_grad();
    if (!any) return;
    Node node;
    for (auto& t : inputs) node.inputs.push_back(t.storage());
    out.set_requires_grad(true);
    node.output = out.storage();
    node.backward = std::forward<Fn>(fn);
    nodes_.push_back(std::move(node));
  }

  /// Replays nodes newest-first; each node runs once.
  void replay() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward();
    }
  }

 private:
  std::vector<Node> nodes_;
  bool enabled_ = true;
};

/// Disables recording on the current thread for its lifetime.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard() : prev_(Tape<T>::current().enabled()) { Tape<T>::current().set_enabled(false); }
  ~NoGradGuard() { Tape<T>::current().set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Accumulates d(loss)/d(x) into every differentiable tensor reachable on the
/// tape, then clears the tape.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  auto& tape = Tape<T>::current();
  if (tape.empty()) throw ContractError("backward() called with an empty tape");
  auto& s = *loss.storage();
  s.ensure_grad();
  s.grad[0] += T(1);
  tape.replay();
  tape.clear();
}

}  // namespace lensformer
