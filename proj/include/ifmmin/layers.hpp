#pragma once

#include <array>
#include <string>
#include <vector>

#include "ifmmin/autodiff.hpp"

namespace ifmmin::nn {

using ad::Var;

struct ParamRef {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<ParamRef>;

// Per-forward settings shared by every block in one pass.
struct Context {
  ad::Graph& graph;
  bool train = false;      // dropout active
  bool trainable = true;   // parameters bound as gradient leaves
  double dropout = 0.0;
  Rng* dropout_rng = nullptr;

  Var bind(const Tensor& param) const { return graph.parameter(param, trainable); }
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// Time-major padded batch: frames [T, N, D], valid length per row.
struct SequenceBatch {
  Tensor frames;
  std::vector<std::size_t> lengths;

  std::size_t steps() const { return frames.dim(0); }
  std::size_t batch() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }
};

// Stacks [T_i, D] sequences into a zero-padded batch of at least min_steps steps.
SequenceBatch make_sequence_batch(const std::vector<const Tensor*>& sequences,
                                  std::size_t min_steps = 1);

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Var forward(const Context& ctx, Var x) const;
  void collect(const std::string& prefix, ParamList& out);

  std::size_t in_width() const { return weight.dim(0); }
  std::size_t out_width() const { return weight.dim(1); }

  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

// Single-layer unidirectional LSTM followed by max-pooling over valid steps.
// Gate layout along the 4H axis: input, forget, cell, output.
class LstmEncoder {
 public:
  LstmEncoder() = default;
  LstmEncoder(std::size_t input_width, std::size_t hidden, Rng& rng);

  Var forward(const Context& ctx, const SequenceBatch& x) const;
  void collect(const std::string& prefix, ParamList& out);

  std::size_t input_width() const { return w_input.dim(0); }
  std::size_t hidden() const { return w_hidden.dim(0); }

  Tensor w_input;   // [D, 4H]
  Tensor w_hidden;  // [H, 4H]
  Tensor bias;      // [4H], forget slice starts at 1.0
};

// TextCNN: convolution banks of widths 3, 4, 5, ReLU, max over valid
// positions, concatenation, linear projection.
class TextCnnEncoder {
 public:
  static constexpr std::array<std::size_t, 3> kKernels = {3, 4, 5};
  static constexpr std::size_t kMinSteps = 5;

  TextCnnEncoder() = default;
  TextCnnEncoder(std::size_t input_width, std::size_t filters, std::size_t out, Rng& rng);

  Var forward(const Context& ctx, const SequenceBatch& x) const;
  void collect(const std::string& prefix, ParamList& out);

  std::size_t input_width() const { return filters[0].dim(0) / kKernels[0]; }

  std::array<Tensor, 3> filters;  // [k*D, F]
  std::array<Tensor, 3> biases;   // [F]
  Linear projection;              // 3F -> out
};

// FC -> ReLU -> dropout. One shared branch by default; three per-modality
// branches when not shared.
class InvarianceEncoder {
 public:
  InvarianceEncoder() = default;
  InvarianceEncoder(std::size_t in, std::size_t out, bool shared, Rng& rng);

  Var forward(const Context& ctx, Var h, std::size_t modality) const;
  void collect(const std::string& prefix, ParamList& out);

  bool shared() const { return branches.size() == 1; }

  std::vector<Linear> branches;
};

// FC(in->hidden) ReLU dropout FC(hidden->hidden) ReLU dropout FC(hidden->classes).
class Classifier {
 public:
  Classifier() = default;
  Classifier(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng);

  Var forward(const Context& ctx, Var z) const;
  void collect(const std::string& prefix, ParamList& out);

  std::size_t in_width() const { return layers[0].in_width(); }

  std::array<Linear, 3> layers;
};

}  // namespace ifmmin::nn
