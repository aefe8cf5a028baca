#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ifmmin/rng.hpp"
#include "ifmmin/tensor.hpp"

// Tape-based reverse-mode differentiation over dense double tensors.
// Shapes must match exactly; there is no implicit broadcasting. The only
// row-wise expansion is the explicit AddRow kind used for biases.
namespace ifmmin::ad {

enum class OpKind : int {
  Leaf = 0,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddRow,
  Sigmoid,
  Tanh,
  Relu,
  Concat,
  SliceCols,
  SelectTime,
  Stack,
  Reshape,
  MaxOverTime,
  Conv1d,
  Dropout,
  Mean,
  MeanRows,
  Pow,
  Sqrt,
  Sum,
  SoftmaxCrossEntropy,
  Rmse,
};

inline constexpr int kNumOpKinds = static_cast<int>(OpKind::Rmse) + 1;

std::string_view kind_name(OpKind kind);

struct OpAttrs {
  int exponent = 1;                  // Pow
  double factor = 1.0;               // Scale
  double rate = 0.0;                 // Dropout: probability of dropping
  bool train = false;                // Dropout
  Rng* rng = nullptr;                // Dropout mask source (train mode only)
  std::size_t begin = 0;             // SliceCols, SelectTime index, Conv1d kernel width
  std::size_t end = 0;               // SliceCols
  Shape shape;                       // Reshape target
  std::vector<std::size_t> labels;   // SoftmaxCrossEntropy targets, one per row
  std::vector<std::size_t> lengths;  // MaxOverTime: valid steps per batch row
};

// Evaluates one primitive without recording anything.
Tensor forward_primitive(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

class Graph;

// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Gradients {
 public:
  // Gradient of a node that requires gradients, or nullptr.
  const Tensor* of(Var v) const;
  // Summed gradient over every binding of a parameter tensor, or nullptr.
  const Tensor* of_param(const Tensor& param) const;
  std::size_t param_count() const { return by_param_.size(); }

 private:
  friend class Graph;
  std::vector<std::optional<Tensor>> by_node_;
  std::unordered_map<const Tensor*, Tensor> by_param_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf that requires gradients.
  Var variable(Tensor value);
  // Binds a model parameter as a leaf; gradients are reported per source
  // tensor through Gradients::of_param when trainable.
  Var parameter(const Tensor& source, bool trainable);

  Var apply(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {});

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  Gradients backward(Var loss) const;

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    OpAttrs attrs;
    Tensor value;
    bool requires_grad = false;
    const Tensor* source = nullptr;
    std::vector<double> aux;          // dropout mask, softmax probabilities, conv unfold
    std::vector<std::size_t> argmax;  // max-over-time winners
  };

  Var push(Node node);

  std::deque<Node> nodes_;
};

// Named wrappers. All inputs must belong to the same graph.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var matrix, Var row);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var select_time(Var sequence, std::size_t step);
Var stack(std::span<const Var> steps);
Var reshape(Var a, Shape shape);
Var max_over_time(Var sequence, std::vector<std::size_t> lengths);
Var conv1d(Var sequence, Var weight, Var bias, std::size_t kernel);
Var dropout(Var a, double rate, bool train, Rng* rng);
Var mean(Var a);
Var mean_rows(Var a);
Var pow(Var a, int exponent);
Var sqrt(Var a);
Var sum(Var a);
Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels);
Var rmse(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  bool pass = false;
};

// Builds a fresh graph per evaluation: f receives the graph and a variable
// holding x and must return a scalar.
using ScalarFn = std::function<Var(Graph&, Var)>;

// Central-difference check of the analytic gradient of f at x. Relative
// error per coordinate is |a - n| / max(|a|, |n|, 1e-5); the floor keeps
// round-off on near-zero gradients from dominating.
GradCheckReport finite_difference_check(const ScalarFn& f, const Tensor& x, double step,
                                        double tol);

}  // namespace ifmmin::ad
