#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace changeseg {

/// Dense double tensor with reverse-mode autodiff.
///
/// Tensors are handles to graph nodes. Ops (ops.hpp) record a backward
/// closure per node; backward() walks the graph in reverse creation order,
/// so gradient accumulation order is deterministic. Single-threaded by design.
class Tensor {
 public:
  struct Node {
    std::uint64_t id = 0;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same size as value
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;  // reads grad, accumulates into inputs

    std::vector<double>& ensure_grad();
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const std::vector<int>& shape);
  static Tensor full(const std::vector<int>& shape, double v);
  static Tensor from_values(const std::vector<int>& shape, std::vector<double> v);
  /// Leaf with requires_grad=true; the unit optimizers update these in place.
  static Tensor param(const std::vector<int>& shape, std::vector<double> v);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b);
  void zero_grad();

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Make a fresh non-leaf node; used by op implementations.
std::shared_ptr<Tensor::Node> make_node(std::vector<int> shape,
                                        std::vector<std::shared_ptr<Tensor::Node>> inputs);

std::int64_t numel(const std::vector<int>& shape);

/// Reverse-mode sweep from a scalar root. Leaves accumulate into .grad;
/// call zero_grad() on parameters between steps.
void backward(const Tensor& root);

}  // namespace changeseg
