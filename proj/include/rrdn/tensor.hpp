#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rrdn {

// Base error for everything the library rejects.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

namespace detail {

inline thread_local bool grad_enabled = true;
inline thread_local std::uint64_t next_seq = 0;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = next_seq++;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

/// Dense NCHW tensor with shared ownership of its storage and graph node.
///
/// Copies are shallow: two Tensor handles may refer to the same node.
/// Use clone() for a detached deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(shape, T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data.assign(shape.size(), value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != shape.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return full({1, 1, 1, 1}, value, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_scalar() const { return size() == 1; }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  // Empty until a backward pass reaches this tensor.
  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return node_->data[0];
  }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = shape();
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return node_->data[index(n, c, h, w)];
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return node_->data[index(n, c, h, w)];
  }

  // Deep copy of the values as a new leaf.
  Tensor clone(bool requires_grad = false) const {
    return from(shape(), data(), requires_grad);
  }
  Tensor detach() const { return clone(false); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data().begin(), data().end());
    return Tensor<U>::from(shape(), std::move(out));
  }

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

namespace detail {

// Builds an op result. Records parents and the backward rule only when
// recording is enabled and at least one input participates in the graph.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data = std::move(data);
  bool any = false;
  for (const auto& in : inputs) any = any || in->requires_grad;
  if (grad_enabled && any) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

/// Operations reachable from a scalar loss, in reverse recording order.
template <typename T>
class GradientTape {
 public:
  explicit GradientTape(const Tensor<T>& loss) : loss_(loss) {
    using NodeT = detail::Node<T>;
    std::unordered_set<const NodeT*> seen;
    std::vector<NodeT*> stack{loss.node().get()};
    while (!stack.empty()) {
      NodeT* node = stack.back();
      stack.pop_back();
      if (!node->requires_grad || !seen.insert(node).second) continue;
      if (node->backward) ops_.push_back(node);
      for (const auto& p : node->parents) stack.push_back(p.get());
    }
    std::sort(ops_.begin(), ops_.end(),
              [](const NodeT* a, const NodeT* b) { return a->seq > b->seq; });
  }

  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every backward rule once.
  // Returns the number of operations visited.
  std::size_t replay() {
    auto& g = loss_.node()->grad_buffer();
    g[0] += T(1);
    std::size_t visited = 0;
    for (auto* node : ops_) {
      if (!node->grad.empty()) node->backward(*node);
      ++visited;
    }
    return visited;
  }

 private:
  Tensor<T> loss_;
  std::vector<detail::Node<T>*> ops_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  GradientTape<T>(loss).replay();
}

}  // namespace rrdn
