#include "changeseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_set>

namespace changeseg {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

std::int64_t numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::vector<double>& Tensor::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

std::shared_ptr<Tensor::Node> make_node(std::vector<int> shape,
                                        std::vector<std::shared_ptr<Tensor::Node>> inputs) {
  auto n = std::make_shared<Tensor::Node>();
  n->id = g_next_id.fetch_add(1);
  n->shape = std::move(shape);
  n->value.resize(static_cast<std::size_t>(numel(n->shape)));
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in->requires_grad) n->requires_grad = true;
  }
  return n;
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
  return full(shape, 0.0);
}

Tensor Tensor::full(const std::vector<int>& shape, double v) {
  auto n = make_node(shape, {});
  std::fill(n->value.begin(), n->value.end(), v);
  n->is_leaf = true;
  return Tensor(n);
}

Tensor Tensor::from_values(const std::vector<int>& shape, std::vector<double> v) {
  if (static_cast<std::int64_t>(v.size()) != numel(shape))
    throw std::invalid_argument("Tensor::from_values: size mismatch");
  auto n = make_node(shape, {});
  n->value = std::move(v);
  n->is_leaf = true;
  return Tensor(n);
}

Tensor Tensor::param(const std::vector<int>& shape, std::vector<double> v) {
  Tensor t = from_values(shape, std::move(v));
  t.node()->requires_grad = true;
  return t;
}

const std::vector<double>& Tensor::grad() const {
  return node_->ensure_grad();
}

void Tensor::set_requires_grad(bool b) {
  if (!node_->is_leaf) throw std::logic_error("set_requires_grad on non-leaf");
  node_->requires_grad = b;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1)
    throw std::invalid_argument("backward: root must be a defined scalar");
  if (!root.node()->requires_grad) return;

  // Collect reachable nodes; ids increase with creation order, so sorting by
  // id descending is a valid topological order for the reverse sweep.
  std::vector<Tensor::Node*> order;
  std::unordered_set<const Tensor::Node*> seen;
  std::vector<Tensor::Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Tensor::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Tensor::Node* a, const Tensor::Node* b) { return a->id > b->id; });

  root.node()->ensure_grad()[0] = 1.0;
  for (Tensor::Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace changeseg
