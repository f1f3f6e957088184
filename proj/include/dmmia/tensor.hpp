#ifndef DMMIA_TENSOR_HPP
#define DMMIA_TENSOR_HPP

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dmmia/errors.hpp"

namespace dmmia {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

// Dense row-major storage; every tensor is 64-bit float.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Arr = Eigen::ArrayXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

std::string shape_str(const Shape& s);
Index shape_size(const Shape& s);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the dynamically recorded computation graph. `value` is flat
// row-major; `grad` stays empty (size 0) until backward touches the node.
struct TensorNode {
  Shape shape;
  Arr value;
  Arr grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  // Pulls this node's grad into its parents' grads. Only set on op outputs.
  std::function<void(TensorNode&)> backward_fn;

  Index size() const { return value.size(); }
  bool is_leaf() const { return parents.empty(); }
  void accumulate(const Arr& g);
};

// Value-semantics handle onto a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  // Leaf constructors.
  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor from_array(const Shape& shape, Arr data, bool requires_grad = false);
  static Tensor from_matrix(const Mat& m, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Index rank() const { return static_cast<Index>(node().shape.size()); }
  Index size() const { return node().value.size(); }

  // Row/column view of a rank-1 or rank-2 tensor (rank-1 counts as one row).
  Index rows() const;
  Index cols() const;

  Arr& value() { return node().value; }
  const Arr& value() const { return node().value; }
  ConstMatMap matrix() const { return ConstMatMap(node().value.data(), rows(), cols()); }
  MatMap matrix() { return MatMap(node().value.data(), rows(), cols()); }
  Mat to_matrix() const { return matrix(); }

  // Scalar extraction; tensor must hold exactly one element.
  double item() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool b) { node().requires_grad = b; }

  bool has_grad() const { return node().grad.size() != 0; }
  const Arr& grad() const;
  Arr grad_or_zeros() const;
  void zero_grad() { node().grad.resize(0); }

  TensorNode& node() const;
  const NodePtr& ptr() const { return node_; }

 private:
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}
  NodePtr node_;

  friend Tensor make_op(const char* op, Shape shape, Arr value,
                        std::vector<Tensor> inputs,
                        std::function<void(TensorNode&)> backward_fn);
};

// Creates an op-output node: validates finiteness, wires parents, and sets
// requires_grad to the OR over the inputs.
Tensor make_op(const char* op, Shape shape, Arr value, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward_fn);

// Throws NumericalError naming `op` if any entry of `v` is NaN/Inf.
void check_finite(const char* op, const Arr& v);

// Reverse-mode sweep from a scalar loss. Gradients of intermediate nodes are
// recomputed from scratch each call; gradients of leaves accumulate until
// zero_grad() is called on them.
void backward(const Tensor& loss);

}  // namespace dmmia

#endif
