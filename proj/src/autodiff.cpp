#include "ifmmin/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ifmmin::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw ValidationError(std::string(kind_name(kind)) + ": " + detail);
}

void expect_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    shape_error(kind, "expected " + std::to_string(want) + " inputs, got " + std::to_string(got));
  }
}

void expect_rank(OpKind kind, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    shape_error(kind, "expected rank " + std::to_string(rank) + ", got shape " +
                          to_string(t.shape()));
  }
}

void expect_same(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(kind, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct Forward {
  Tensor value;
  std::vector<double> aux;
  std::vector<std::size_t> argmax;
};

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double int_pow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

// Rows of the unfolded conv input: row (p, n) holds frames p..p+k-1 of
// sequence n laid end to end.
std::vector<double> unfold(const Tensor& x, std::size_t kernel) {
  const std::size_t steps = x.dim(0), batch = x.dim(1), width = x.dim(2);
  const std::size_t positions = steps - kernel + 1;
  std::vector<double> out(positions * batch * kernel * width);
  auto src = x.data();
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t n = 0; n < batch; ++n) {
      double* row = out.data() + (p * batch + n) * kernel * width;
      for (std::size_t j = 0; j < kernel; ++j) {
        const double* frame = src.data() + ((p + j) * batch + n) * width;
        std::copy(frame, frame + width, row + j * width);
      }
    }
  }
  return out;
}

Forward run_forward(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& attrs) {
  Forward out;
  switch (kind) {
    case OpKind::Leaf:
      shape_error(kind, "leaf nodes are created with Graph::constant/variable/parameter");
    case OpKind::MatMul: {
      expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_error(kind, "cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
      }
      out.value = Tensor({a.dim(0), b.dim(1)});
      as_matrix(out.value, a.dim(0), b.dim(1)).noalias() =
          as_matrix(a, a.dim(0), a.dim(1)) * as_matrix(b, b.dim(0), b.dim(1));
      return out;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      expect_arity(kind, in.size(), 2);
      expect_same(kind, *in[0], *in[1]);
      if (kind == OpKind::Add) out.value = map_binary(*in[0], *in[1], std::plus<>());
      if (kind == OpKind::Sub) out.value = map_binary(*in[0], *in[1], std::minus<>());
      if (kind == OpKind::Mul) out.value = map_binary(*in[0], *in[1], std::multiplies<>());
      return out;
    }
    case OpKind::Scale: {
      expect_arity(kind, in.size(), 1);
      const double c = attrs.factor;
      out.value = map_unary(*in[0], [c](double x) { return c * x; });
      return out;
    }
    case OpKind::AddRow: {
      expect_arity(kind, in.size(), 2);
      const Tensor& m = *in[0];
      const Tensor& row = *in[1];
      expect_rank(kind, m, 2);
      if (row.rank() != 1 || row.dim(0) != m.dim(1)) {
        shape_error(kind, "row " + to_string(row.shape()) + " does not fit matrix " +
                              to_string(m.shape()));
      }
      out.value = m;
      out.value.set_requires_grad(false);
      auto dst = out.value.data();
      const std::size_t cols = m.dim(1);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += row[i % cols];
      return out;
    }
    case OpKind::Sigmoid:
      expect_arity(kind, in.size(), 1);
      out.value = map_unary(*in[0], stable_sigmoid);
      return out;
    case OpKind::Tanh:
      expect_arity(kind, in.size(), 1);
      out.value = map_unary(*in[0], [](double x) { return std::tanh(x); });
      return out;
    case OpKind::Relu:
      expect_arity(kind, in.size(), 1);
      out.value = map_unary(*in[0], [](double x) { return x > 0.0 ? x : 0.0; });
      return out;
    case OpKind::Concat: {
      if (in.empty()) shape_error(kind, "no inputs");
      const Tensor& first = *in[0];
      if (first.rank() != 1 && first.rank() != 2) {
        shape_error(kind, "expected rank 1 or 2, got " + to_string(first.shape()));
      }
      const std::size_t rows = first.rank() == 2 ? first.dim(0) : 1;
      std::size_t cols = 0;
      for (const Tensor* t : in) {
        if (t->rank() != first.rank() || (t->rank() == 2 && t->dim(0) != rows)) {
          shape_error(kind, "shape mismatch " + to_string(first.shape()) + " vs " +
                                to_string(t->shape()));
        }
        cols += t->shape().back();
      }
      out.value = first.rank() == 2 ? Tensor({rows, cols}) : Tensor({cols});
      auto dst = out.value.data();
      std::size_t offset = 0;
      for (const Tensor* t : in) {
        const std::size_t w = t->shape().back();
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(t->data().data() + r * w, w, dst.data() + r * cols + offset);
        }
        offset += w;
      }
      return out;
    }
    case OpKind::SliceCols: {
      expect_arity(kind, in.size(), 1);
      const Tensor& a = *in[0];
      expect_rank(kind, a, 2);
      if (attrs.begin >= attrs.end || attrs.end > a.dim(1)) {
        shape_error(kind, "bad column range [" + std::to_string(attrs.begin) + ", " +
                              std::to_string(attrs.end) + ") for " + to_string(a.shape()));
      }
      const std::size_t rows = a.dim(0), w = attrs.end - attrs.begin;
      out.value = Tensor({rows, w});
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data().data() + r * a.dim(1) + attrs.begin, w,
                    out.value.data().data() + r * w);
      }
      return out;
    }
    case OpKind::SelectTime: {
      expect_arity(kind, in.size(), 1);
      const Tensor& s = *in[0];
      expect_rank(kind, s, 3);
      if (attrs.begin >= s.dim(0)) {
        shape_error(kind, "step " + std::to_string(attrs.begin) + " out of range for " +
                              to_string(s.shape()));
      }
      const std::size_t block = s.dim(1) * s.dim(2);
      out.value = Tensor({s.dim(1), s.dim(2)});
      std::copy_n(s.data().data() + attrs.begin * block, block, out.value.data().data());
      return out;
    }
    case OpKind::Stack: {
      if (in.empty()) shape_error(kind, "no inputs");
      const Tensor& first = *in[0];
      expect_rank(kind, first, 2);
      for (const Tensor* t : in) expect_same(kind, first, *t);
      out.value = Tensor({in.size(), first.dim(0), first.dim(1)});
      for (std::size_t i = 0; i < in.size(); ++i) {
        std::copy_n(in[i]->data().data(), first.size(), out.value.data().data() + i * first.size());
      }
      return out;
    }
    case OpKind::Reshape:
      expect_arity(kind, in.size(), 1);
      if (shape_size(attrs.shape) != in[0]->size()) {
        shape_error(kind, "cannot reshape " + to_string(in[0]->shape()) + " to " +
                              to_string(attrs.shape));
      }
      out.value = Tensor(attrs.shape, in[0]->values());
      return out;
    case OpKind::MaxOverTime: {
      expect_arity(kind, in.size(), 1);
      const Tensor& s = *in[0];
      expect_rank(kind, s, 3);
      const std::size_t steps = s.dim(0), batch = s.dim(1), width = s.dim(2);
      std::vector<std::size_t> lengths = attrs.lengths;
      if (lengths.empty()) lengths.assign(batch, steps);
      if (lengths.size() != batch) {
        shape_error(kind, std::to_string(lengths.size()) + " lengths for batch of " +
                              std::to_string(batch));
      }
      out.value = Tensor({batch, width});
      out.argmax.assign(batch * width, 0);
      auto src = s.data();
      for (std::size_t n = 0; n < batch; ++n) {
        if (lengths[n] == 0 || lengths[n] > steps) {
          shape_error(kind, "length " + std::to_string(lengths[n]) + " invalid for " +
                                std::to_string(steps) + " steps");
        }
        for (std::size_t f = 0; f < width; ++f) {
          std::size_t best = 0;
          double best_value = src[n * width + f];
          for (std::size_t t = 1; t < lengths[n]; ++t) {
            const double v = src[(t * batch + n) * width + f];
            if (v > best_value) {
              best_value = v;
              best = t;
            }
          }
          out.value[n * width + f] = best_value;
          out.argmax[n * width + f] = best;
        }
      }
      return out;
    }
    case OpKind::Conv1d: {
      expect_arity(kind, in.size(), 3);
      const Tensor& x = *in[0];
      const Tensor& w = *in[1];
      const Tensor& b = *in[2];
      const std::size_t k = attrs.begin;
      expect_rank(kind, x, 3);
      if (k == 0 || x.dim(0) < k) {
        shape_error(kind, "kernel " + std::to_string(k) + " does not fit sequence " +
                              to_string(x.shape()));
      }
      if (w.rank() != 2 || w.dim(0) != k * x.dim(2) || b.rank() != 1 || b.dim(0) != w.dim(1)) {
        shape_error(kind, "filter " + to_string(w.shape()) + " / bias " + to_string(b.shape()) +
                              " incompatible with input " + to_string(x.shape()) +
                              " and kernel " + std::to_string(k));
      }
      const std::size_t positions = x.dim(0) - k + 1, batch = x.dim(1), filters = w.dim(1);
      out.aux = unfold(x, k);
      out.value = Tensor({positions, batch, filters});
      auto y = as_matrix(out.value, positions * batch, filters);
      y.noalias() = as_matrix(out.aux, positions * batch, w.dim(0)) * as_matrix(w, w.dim(0), filters);
      y.rowwise() += as_matrix(b, 1, filters).row(0);
      return out;
    }
    case OpKind::Dropout: {
      expect_arity(kind, in.size(), 1);
      if (attrs.rate < 0.0 || attrs.rate >= 1.0) {
        shape_error(kind, "rate " + std::to_string(attrs.rate) + " outside [0, 1)");
      }
      out.value = *in[0];
      out.value.set_requires_grad(false);
      if (!attrs.train || attrs.rate == 0.0) return out;
      if (attrs.rng == nullptr) shape_error(kind, "train mode requires an rng stream");
      const double keep = 1.0 - attrs.rate;
      out.aux.resize(out.value.size());
      for (std::size_t i = 0; i < out.aux.size(); ++i) {
        out.aux[i] = attrs.rng->uniform() < keep ? 1.0 / keep : 0.0;
        out.value[i] *= out.aux[i];
      }
      return out;
    }
    case OpKind::Mean:
    case OpKind::Sum: {
      expect_arity(kind, in.size(), 1);
      if (in[0]->empty()) shape_error(kind, "empty input");
      double s = 0.0;
      for (double v : in[0]->data()) s += v;
      out.value = Tensor::scalar(kind == OpKind::Mean ? s / static_cast<double>(in[0]->size()) : s);
      return out;
    }
    case OpKind::MeanRows: {
      expect_arity(kind, in.size(), 1);
      const Tensor& a = *in[0];
      expect_rank(kind, a, 2);
      if (a.dim(0) == 0) shape_error(kind, "no rows");
      out.value = Tensor({a.dim(1)});
      as_matrix(out.value, 1, a.dim(1)) = as_matrix(a, a.dim(0), a.dim(1)).colwise().mean();
      return out;
    }
    case OpKind::Pow: {
      expect_arity(kind, in.size(), 1);
      if (attrs.exponent < 0) shape_error(kind, "negative exponent");
      const int k = attrs.exponent;
      out.value = map_unary(*in[0], [k](double x) { return int_pow(x, k); });
      return out;
    }
    case OpKind::Sqrt:
      expect_arity(kind, in.size(), 1);
      out.value = map_unary(*in[0], [](double x) { return std::sqrt(x); });
      return out;
    case OpKind::SoftmaxCrossEntropy: {
      expect_arity(kind, in.size(), 1);
      const Tensor& logits = *in[0];
      expect_rank(kind, logits, 2);
      const std::size_t rows = logits.dim(0), classes = logits.dim(1);
      if (attrs.labels.size() != rows || rows == 0) {
        shape_error(kind, std::to_string(attrs.labels.size()) + " labels for logits " +
                              to_string(logits.shape()));
      }
      out.aux.resize(logits.size());
      double loss = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        if (attrs.labels[r] >= classes) {
          shape_error(kind, "label " + std::to_string(attrs.labels[r]) + " out of range");
        }
        const double* z = logits.data().data() + r * classes;
        const double zmax = *std::max_element(z, z + classes);
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
        for (std::size_t c = 0; c < classes; ++c) {
          out.aux[r * classes + c] = std::exp(z[c] - zmax) / denom;
        }
        loss += std::log(denom) + zmax - z[attrs.labels[r]];
      }
      out.value = Tensor::scalar(loss / static_cast<double>(rows));
      return out;
    }
    case OpKind::Rmse: {
      expect_arity(kind, in.size(), 2);
      expect_same(kind, *in[0], *in[1]);
      if (in[0]->empty()) shape_error(kind, "empty input");
      double s = 0.0;
      for (std::size_t i = 0; i < in[0]->size(); ++i) {
        const double d = (*in[0])[i] - (*in[1])[i];
        s += d * d;
      }
      out.value = Tensor::scalar(std::sqrt(s / static_cast<double>(in[0]->size())));
      return out;
    }
  }
  throw ValidationError("unknown operation kind " + std::to_string(static_cast<int>(kind)));
}

void accumulate(std::optional<Tensor>& slot, Tensor grad) {
  if (!slot) {
    slot = std::move(grad);
    return;
  }
  auto dst = slot->data();
  auto src = grad.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::string_view kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddRow: return "add_row";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Concat: return "concat";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::SelectTime: return "select_time";
    case OpKind::Stack: return "stack";
    case OpKind::Reshape: return "reshape";
    case OpKind::MaxOverTime: return "max_over_time";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::Dropout: return "dropout";
    case OpKind::Mean: return "mean";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::Pow: return "pow";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Sum: return "sum";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::Rmse: return "rmse";
  }
  return "unknown";
}

Tensor forward_primitive(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(inputs.size());
  for (const Tensor& t : inputs) ptrs.push_back(&t);
  return run_forward(kind, ptrs, attrs).value;
}

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

const Tensor* Gradients::of(Var v) const {
  if (v.id() >= by_node_.size() || !by_node_[v.id()]) return nullptr;
  return &*by_node_[v.id()];
}

const Tensor* Gradients::of_param(const Tensor& param) const {
  auto it = by_param_.find(&param);
  return it == by_param_.end() ? nullptr : &it->second;
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.value.set_requires_grad(false);
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.value.set_requires_grad(true);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::parameter(const Tensor& source, bool trainable) {
  Node n;
  n.value = source;
  n.value.set_requires_grad(trainable);
  n.requires_grad = trainable;
  n.source = trainable ? &source : nullptr;
  return push(std::move(n));
}

Var Graph::apply(OpKind kind, std::span<const Var> inputs, OpAttrs attrs) {
  if (static_cast<int>(kind) <= 0 || static_cast<int>(kind) >= kNumOpKinds) {
    throw ValidationError("unknown operation kind " + std::to_string(static_cast<int>(kind)));
  }
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  bool needs_grad = false;
  for (const Var& v : inputs) {
    if (v.graph() != this) {
      throw ValidationError(std::string(kind_name(kind)) + ": input belongs to another graph");
    }
    values.push_back(&nodes_[v.id()].value);
    needs_grad = needs_grad || nodes_[v.id()].requires_grad;
  }
  Forward f = run_forward(kind, values, attrs);
  Node n;
  n.value = std::move(f.value);
  n.value.set_requires_grad(needs_grad);
  n.requires_grad = needs_grad;
  if (needs_grad) {
    n.kind = kind;
    for (const Var& v : inputs) n.inputs.push_back(v.id());
    attrs.rng = nullptr;
    n.attrs = std::move(attrs);
    n.aux = std::move(f.aux);
    n.argmax = std::move(f.argmax);
  }
  return push(std::move(n));
}

Gradients Graph::backward(Var loss) const {
  if (loss.graph() != this || loss.id() >= nodes_.size()) {
    throw ValidationError("backward: loss is not a node of this graph");
  }
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ValidationError("backward: loss must be scalar, got shape " +
                          to_string(root.value.shape()));
  }
  Gradients result;
  auto& grads = result.by_node_;
  grads.resize(nodes_.size());
  if (root.requires_grad) grads[loss.id()] = Tensor::filled(root.value.shape(), 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.requires_grad || !grads[id] || node.kind == OpKind::Leaf) continue;
    const Tensor& g = *grads[id];
    auto need = [&](std::size_t slot) { return nodes_[node.inputs[slot]].requires_grad; };
    auto input = [&](std::size_t slot) -> const Tensor& { return nodes_[node.inputs[slot]].value; };
    auto give = [&](std::size_t slot, Tensor t) { accumulate(grads[node.inputs[slot]], std::move(t)); };

    switch (node.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul: {
        const Tensor& a = input(0);
        const Tensor& b = input(1);
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (need(0)) {
          Tensor da({m, k});
          as_matrix(da, m, k).noalias() = as_matrix(g, m, n) * as_matrix(b, k, n).transpose();
          give(0, std::move(da));
        }
        if (need(1)) {
          Tensor db({k, n});
          as_matrix(db, k, n).noalias() = as_matrix(a, m, k).transpose() * as_matrix(g, m, n);
          give(1, std::move(db));
        }
        break;
      }
      case OpKind::Add:
        if (need(0)) give(0, g);
        if (need(1)) give(1, g);
        break;
      case OpKind::Sub:
        if (need(0)) give(0, g);
        if (need(1)) give(1, map_unary(g, [](double x) { return -x; }));
        break;
      case OpKind::Mul:
        if (need(0)) give(0, map_binary(g, input(1), std::multiplies<>()));
        if (need(1)) give(1, map_binary(g, input(0), std::multiplies<>()));
        break;
      case OpKind::Scale: {
        const double c = node.attrs.factor;
        give(0, map_unary(g, [c](double x) { return c * x; }));
        break;
      }
      case OpKind::AddRow: {
        if (need(0)) give(0, g);
        if (need(1)) {
          const std::size_t rows = g.dim(0), cols = g.dim(1);
          Tensor db({cols});
          as_matrix(db, 1, cols) = as_matrix(g, rows, cols).colwise().sum();
          give(1, std::move(db));
        }
        break;
      }
      case OpKind::Sigmoid:
        give(0, map_binary(g, node.value, [](double gi, double y) { return gi * y * (1.0 - y); }));
        break;
      case OpKind::Tanh:
        give(0, map_binary(g, node.value, [](double gi, double y) { return gi * (1.0 - y * y); }));
        break;
      case OpKind::Relu:
        give(0, map_binary(g, input(0), [](double gi, double x) { return x > 0.0 ? gi : 0.0; }));
        break;
      case OpKind::Concat: {
        const std::size_t rows = node.value.rank() == 2 ? node.value.dim(0) : 1;
        const std::size_t cols = node.value.shape().back();
        std::size_t offset = 0;
        for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) {
          const Tensor& part = input(slot);
          const std::size_t w = part.shape().back();
          if (need(slot)) {
            Tensor d(part.shape());
            for (std::size_t r = 0; r < rows; ++r) {
              std::copy_n(g.data().data() + r * cols + offset, w, d.data().data() + r * w);
            }
            give(slot, std::move(d));
          }
          offset += w;
        }
        break;
      }
      case OpKind::SliceCols: {
        const Tensor& a = input(0);
        Tensor d(a.shape());
        const std::size_t rows = a.dim(0), w = node.attrs.end - node.attrs.begin;
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(g.data().data() + r * w, w, d.data().data() + r * a.dim(1) + node.attrs.begin);
        }
        give(0, std::move(d));
        break;
      }
      case OpKind::SelectTime: {
        const Tensor& s = input(0);
        Tensor d(s.shape());
        std::copy_n(g.data().data(), g.size(), d.data().data() + node.attrs.begin * g.size());
        give(0, std::move(d));
        break;
      }
      case OpKind::Stack: {
        const std::size_t block = node.value.dim(1) * node.value.dim(2);
        for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) {
          if (!need(slot)) continue;
          Tensor d(input(slot).shape());
          std::copy_n(g.data().data() + slot * block, block, d.data().data());
          give(slot, std::move(d));
        }
        break;
      }
      case OpKind::Reshape:
        give(0, Tensor(input(0).shape(), g.values()));
        break;
      case OpKind::MaxOverTime: {
        const Tensor& s = input(0);
        const std::size_t batch = s.dim(1), width = s.dim(2);
        Tensor d(s.shape());
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t f = 0; f < width; ++f) {
            const std::size_t t = node.argmax[n * width + f];
            d[(t * batch + n) * width + f] += g[n * width + f];
          }
        }
        give(0, std::move(d));
        break;
      }
      case OpKind::Conv1d: {
        const Tensor& x = input(0);
        const Tensor& w = input(1);
        const std::size_t k = node.attrs.begin;
        const std::size_t positions = node.value.dim(0), batch = node.value.dim(1);
        const std::size_t filters = w.dim(1), width = x.dim(2), rows = positions * batch;
        auto gm = as_matrix(g, rows, filters);
        if (need(0)) {
          RowMatrix du = gm * as_matrix(w, k * width, filters).transpose();
          Tensor dx(x.shape());
          for (std::size_t p = 0; p < positions; ++p) {
            for (std::size_t n = 0; n < batch; ++n) {
              const double* row = du.data() + (p * batch + n) * k * width;
              for (std::size_t j = 0; j < k; ++j) {
                double* frame = dx.data().data() + ((p + j) * batch + n) * width;
                for (std::size_t c = 0; c < width; ++c) frame[c] += row[j * width + c];
              }
            }
          }
          give(0, std::move(dx));
        }
        if (need(1)) {
          Tensor dw(w.shape());
          as_matrix(dw, k * width, filters).noalias() =
              as_matrix(node.aux, rows, k * width).transpose() * gm;
          give(1, std::move(dw));
        }
        if (need(2)) {
          Tensor db({filters});
          as_matrix(db, 1, filters) = gm.colwise().sum();
          give(2, std::move(db));
        }
        break;
      }
      case OpKind::Dropout:
        if (node.aux.empty()) {
          give(0, g);
        } else {
          Tensor d(g.shape());
          for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * node.aux[i];
          give(0, std::move(d));
        }
        break;
      case OpKind::Mean: {
        const double s = g[0] / static_cast<double>(input(0).size());
        give(0, Tensor::filled(input(0).shape(), s));
        break;
      }
      case OpKind::Sum:
        give(0, Tensor::filled(input(0).shape(), g[0]));
        break;
      case OpKind::MeanRows: {
        const Tensor& a = input(0);
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        Tensor d(a.shape());
        const double inv = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] = g[c] * inv;
        }
        give(0, std::move(d));
        break;
      }
      case OpKind::Pow: {
        const int k = node.attrs.exponent;
        give(0, map_binary(g, input(0), [k](double gi, double x) {
               return k == 0 ? 0.0 : gi * k * int_pow(x, k - 1);
             }));
        break;
      }
      case OpKind::Sqrt:
        // Subgradient 0 at the origin keeps norms of equal inputs finite.
        give(0, map_binary(g, node.value, [](double gi, double y) { return y > 0.0 ? gi * 0.5 / y : 0.0; }));
        break;
      case OpKind::SoftmaxCrossEntropy: {
        const Tensor& logits = input(0);
        const std::size_t rows = logits.dim(0), classes = logits.dim(1);
        Tensor d(logits.shape());
        const double s = g[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < classes; ++c) {
            const double target = c == node.attrs.labels[r] ? 1.0 : 0.0;
            d[r * classes + c] = s * (node.aux[r * classes + c] - target);
          }
        }
        give(0, std::move(d));
        break;
      }
      case OpKind::Rmse: {
        const double r = node.value[0];
        const double n = static_cast<double>(input(0).size());
        const double s = r > 0.0 ? g[0] / (n * r) : 0.0;
        Tensor diff = map_binary(input(0), input(1), [s](double a, double b) { return s * (a - b); });
        if (need(1)) give(1, map_unary(diff, [](double x) { return -x; }));
        if (need(0)) give(0, std::move(diff));
        break;
      }
    }
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.requires_grad) {
      grads[id].reset();
      continue;
    }
    if (!grads[id]) grads[id] = Tensor::zeros(node.value.shape());
    if (node.source != nullptr) {
      auto [it, inserted] = result.by_param_.try_emplace(node.source, *grads[id]);
      if (!inserted) {
        auto dst = it->second.data();
        auto src = grads[id]->data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }
  return result;
}

namespace {

Var unary(OpKind kind, Var a, OpAttrs attrs = {}) {
  const Var in[] = {a};
  return a.graph()->apply(kind, in, std::move(attrs));
}

Var binary(OpKind kind, Var a, Var b, OpAttrs attrs = {}) {
  const Var in[] = {a, b};
  return a.graph()->apply(kind, in, std::move(attrs));
}

}  // namespace

Var matmul(Var a, Var b) { return binary(OpKind::MatMul, a, b); }
Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }
Var add_row(Var matrix, Var row) { return binary(OpKind::AddRow, matrix, row); }
Var sigmoid(Var a) { return unary(OpKind::Sigmoid, a); }
Var tanh(Var a) { return unary(OpKind::Tanh, a); }
Var relu(Var a) { return unary(OpKind::Relu, a); }
Var mean(Var a) { return unary(OpKind::Mean, a); }
Var mean_rows(Var a) { return unary(OpKind::MeanRows, a); }
Var sqrt(Var a) { return unary(OpKind::Sqrt, a); }
Var sum(Var a) { return unary(OpKind::Sum, a); }
Var rmse(Var a, Var b) { return binary(OpKind::Rmse, a, b); }

Var scale(Var a, double factor) {
  OpAttrs attrs;
  attrs.factor = factor;
  return unary(OpKind::Scale, a, std::move(attrs));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat: no inputs");
  return parts[0].graph()->apply(OpKind::Concat, parts);
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  OpAttrs attrs;
  attrs.begin = begin;
  attrs.end = end;
  return unary(OpKind::SliceCols, a, std::move(attrs));
}

Var select_time(Var sequence, std::size_t step) {
  OpAttrs attrs;
  attrs.begin = step;
  return unary(OpKind::SelectTime, sequence, std::move(attrs));
}

Var stack(std::span<const Var> steps) {
  if (steps.empty()) throw ValidationError("stack: no inputs");
  return steps[0].graph()->apply(OpKind::Stack, steps);
}

Var reshape(Var a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return unary(OpKind::Reshape, a, std::move(attrs));
}

Var max_over_time(Var sequence, std::vector<std::size_t> lengths) {
  OpAttrs attrs;
  attrs.lengths = std::move(lengths);
  return unary(OpKind::MaxOverTime, sequence, std::move(attrs));
}

Var conv1d(Var sequence, Var weight, Var bias, std::size_t kernel) {
  OpAttrs attrs;
  attrs.begin = kernel;
  const Var in[] = {sequence, weight, bias};
  return sequence.graph()->apply(OpKind::Conv1d, in, std::move(attrs));
}

Var dropout(Var a, double rate, bool train, Rng* rng) {
  if (!train || rate == 0.0) return a;
  OpAttrs attrs;
  attrs.rate = rate;
  attrs.train = train;
  attrs.rng = rng;
  return unary(OpKind::Dropout, a, std::move(attrs));
}

Var pow(Var a, int exponent) {
  OpAttrs attrs;
  attrs.exponent = exponent;
  return unary(OpKind::Pow, a, std::move(attrs));
}

Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels) {
  OpAttrs attrs;
  attrs.labels = std::move(labels);
  return unary(OpKind::SoftmaxCrossEntropy, logits, std::move(attrs));
}

GradCheckReport finite_difference_check(const ScalarFn& f, const Tensor& x, double step,
                                        double tol) {
  GradCheckReport report;
  Tensor analytic;
  {
    Graph g;
    Var xv = g.variable(x);
    Var y = f(g, xv);
    const Gradients grads = g.backward(y);
    analytic = *grads.of(xv);
  }
  auto evaluate = [&](const Tensor& point) {
    Graph g;
    Var xv = g.variable(point);
    return f(g, xv).value().item();
  };
  Tensor probe = x;
  report.coordinates = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double plus = evaluate(probe);
    probe[i] = orig - step;
    const double minus = evaluate(probe);
    probe[i] = orig;
    const double numeric = (plus - minus) / (2.0 * step);
    if (!std::isfinite(plus) || !std::isfinite(minus) || !std::isfinite(analytic[i])) {
      throw std::runtime_error("finite_difference_check: non-finite value at coordinate " +
                               std::to_string(i));
    }
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-5});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace ifmmin::ad
