#include "dmmia/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace dmmia {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d < 0) throw ShapeError("tensor: negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

void TensorNode::accumulate(const Arr& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

void check_finite(const char* op, const Arr& v) {
  if (!v.allFinite()) {
    throw NumericalError(std::string(op) + ": non-finite value produced");
  }
}

TensorNode& Tensor::node() const {
  if (!node_) throw ContractError("tensor: use of default-constructed handle");
  return *node_;
}

Tensor Tensor::from_array(const Shape& shape, Arr data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  check_finite("tensor", data);
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_array(shape, Arr::Zero(shape_size(shape)), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return from_array(shape, Arr::Constant(shape_size(shape), v), requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  Arr a = Eigen::Map<const Arr>(data.data(), static_cast<Index>(data.size()));
  return from_array(shape, std::move(a), requires_grad);
}

Tensor Tensor::from_matrix(const Mat& m, bool requires_grad) {
  Arr a = Eigen::Map<const Arr>(m.data(), m.size());
  return from_array({m.rows(), m.cols()}, std::move(a), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_array({1}, Arr::Constant(1, v), requires_grad);
}

Index Tensor::rows() const {
  const Shape& s = shape();
  if (s.size() == 1) return 1;
  if (s.size() == 2) return s[0];
  throw ShapeError("tensor: matrix view of rank-" + std::to_string(s.size()) +
                   " tensor " + shape_str(s));
}

Index Tensor::cols() const {
  const Shape& s = shape();
  if (s.size() == 1) return s[0];
  if (s.size() == 2) return s[1];
  throw ShapeError("tensor: matrix view of rank-" + std::to_string(s.size()) +
                   " tensor " + shape_str(s));
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("tensor: item() on non-scalar of shape " + shape_str(shape()));
  }
  return node().value[0];
}

const Arr& Tensor::grad() const {
  static const Arr kEmpty;
  return has_grad() ? node().grad : kEmpty;
}

Arr Tensor::grad_or_zeros() const {
  return has_grad() ? node().grad : Arr(Arr::Zero(size()));
}

Tensor make_op(const char* op, Shape shape, Arr value, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward_fn) {
  if (shape_size(shape) != value.size()) {
    throw ShapeError(std::string(op) + ": output shape " + shape_str(shape) +
                     " does not match " + std::to_string(value.size()) + " values");
  }
  check_finite(op, value);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  n->parents.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    needs = needs || t.requires_grad();
    n->parents.push_back(t.ptr());
  }
  n->requires_grad = needs;
  if (needs) n->backward_fn = std::move(backward_fn);
  return Tensor(std::move(n));
}

namespace {

// Iterative post-order over the grad-requiring subgraph rooted at `root`.
std::vector<TensorNode*> topo_order(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children; reverse for the sweep
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any requires_grad tensor");
  }
  std::vector<TensorNode*> order = topo_order(&loss.node());
  // Intermediate (op-output) grads restart from zero each sweep; leaf grads
  // persist so repeated backward calls accumulate.
  for (TensorNode* n : order) {
    if (!n->is_leaf()) n->grad.resize(0);
  }
  loss.node().accumulate(Arr::Constant(1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

}  // namespace dmmia
