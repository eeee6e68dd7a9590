#pragma once

// Dense row-major tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Ops in ops.hpp build new
// nodes; when any input requires grad (and grad mode is on) the result
// records its parents plus a closure that turns the output gradient into
// input gradients. backward() walks that graph in reverse topological
// order. Leaf gradients accumulate across calls until zero_grad().

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nutri {

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives this node's gradient; adds contributions into parents.
  std::function<void(std::span<const double>)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;  // negative axes count from the end
  int rank() const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view. Only valid on tensors that are not part of a recorded
  // graph (leaves, or results created under NoGradGuard).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, no graph, fresh storage.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                            std::initializer_list<Tensor> inputs,
                            std::function<void(std::span<const double>)> backward);
  friend Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                            const std::vector<Tensor>& inputs,
                            std::function<void(std::span<const double>)> backward);
  friend std::span<double> grad_sink(const Tensor& t);
  friend void backward(const Tensor& loss);
};

// Build the output of a differentiable op. Checks every value is finite
// (NumericIntegrityError naming `op` otherwise) and records the graph edge
// when grad mode is enabled and some input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward);

// Gradient buffer of `t`, zero-filled on first access. Backward closures
// add into it. Returns an empty span when t does not require grad.
std::span<double> grad_sink(const Tensor& t);

// Reverse pass from a scalar loss. Throws ContractError otherwise.
void backward(const Tensor& loss);

bool grad_enabled();

// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace nutri
