#include "ifmmin/layers.hpp"

#include <algorithm>
#include <cmath>

namespace ifmmin::nn {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

SequenceBatch make_sequence_batch(const std::vector<const Tensor*>& sequences,
                                  std::size_t min_steps) {
  if (sequences.empty()) throw ValidationError("make_sequence_batch: empty batch");
  const std::size_t width = sequences.front()->dim(1);
  std::size_t steps = min_steps;
  for (const Tensor* s : sequences) {
    if (s->rank() != 2 || s->dim(1) != width) {
      throw ValidationError("make_sequence_batch: sequence shape " + to_string(s->shape()) +
                            " does not match width " + std::to_string(width));
    }
    if (s->dim(0) == 0) throw ValidationError("make_sequence_batch: empty sequence");
    steps = std::max(steps, s->dim(0));
  }
  const std::size_t batch = sequences.size();
  SequenceBatch out{Tensor({steps, batch, width}), std::vector<std::size_t>(batch)};
  for (std::size_t n = 0; n < batch; ++n) {
    const Tensor& s = *sequences[n];
    out.lengths[n] = s.dim(0);
    for (std::size_t t = 0; t < s.dim(0); ++t) {
      std::copy_n(s.data().data() + t * width, width,
                  out.frames.data().data() + (t * batch + n) * width);
    }
  }
  return out;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(init_uniform({in, out}, in, rng)), bias(init_uniform({out}, in, rng)) {}

Var Linear::forward(const Context& ctx, Var x) const {
  if (x.value().rank() != 2 || x.value().dim(1) != in_width()) {
    throw ValidationError("linear: input " + to_string(x.shape()) + " does not match width " +
                          std::to_string(in_width()));
  }
  return ad::add_row(ad::matmul(x, ctx.bind(weight)), ctx.bind(bias));
}

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

LstmEncoder::LstmEncoder(std::size_t input_width, std::size_t hidden, Rng& rng)
    : w_input(init_uniform({input_width, 4 * hidden}, input_width, rng)),
      w_hidden(init_uniform({hidden, 4 * hidden}, hidden, rng)),
      bias(init_uniform({4 * hidden}, hidden, rng)) {
  for (std::size_t i = hidden; i < 2 * hidden; ++i) bias[i] = 1.0;
}

Var LstmEncoder::forward(const Context& ctx, const SequenceBatch& x) const {
  if (x.width() != input_width()) {
    throw ValidationError("lstm encoder: input width " + std::to_string(x.width()) +
                          " does not match " + std::to_string(input_width()));
  }
  ad::Graph& g = ctx.graph;
  const std::size_t steps = x.steps(), batch = x.batch(), h = hidden();
  Var wi = ctx.bind(w_input);
  Var wh = ctx.bind(w_hidden);
  Var b = ctx.bind(bias);

  // Input projections for every step in one product.
  Var frames = g.constant(x.frames.reshaped({steps * batch, x.width()}));
  Var projected = ad::reshape(ad::matmul(frames, wi), {steps, batch, 4 * h});

  Var hidden_state = g.constant(Tensor::zeros({batch, h}));
  Var cell = g.constant(Tensor::zeros({batch, h}));
  std::vector<Var> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var gates = ad::add_row(ad::select_time(projected, t) + ad::matmul(hidden_state, wh), b);
    Var in_gate = ad::sigmoid(ad::slice_cols(gates, 0, h));
    Var forget_gate = ad::sigmoid(ad::slice_cols(gates, h, 2 * h));
    Var candidate = ad::tanh(ad::slice_cols(gates, 2 * h, 3 * h));
    Var out_gate = ad::sigmoid(ad::slice_cols(gates, 3 * h, 4 * h));
    cell = forget_gate * cell + in_gate * candidate;
    hidden_state = out_gate * ad::tanh(cell);
    outputs.push_back(hidden_state);
  }
  return ad::max_over_time(ad::stack(outputs), x.lengths);
}

void LstmEncoder::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".w_input", &w_input});
  out.push_back({prefix + ".w_hidden", &w_hidden});
  out.push_back({prefix + ".bias", &bias});
}

TextCnnEncoder::TextCnnEncoder(std::size_t input_width, std::size_t filter_count, std::size_t out,
                               Rng& rng) {
  for (std::size_t i = 0; i < kKernels.size(); ++i) {
    const std::size_t fan_in = kKernels[i] * input_width;
    filters[i] = init_uniform({fan_in, filter_count}, fan_in, rng);
    biases[i] = init_uniform({filter_count}, fan_in, rng);
  }
  projection = Linear(kKernels.size() * filter_count, out, rng);
}

Var TextCnnEncoder::forward(const Context& ctx, const SequenceBatch& x) const {
  if (x.width() != input_width()) {
    throw ValidationError("text encoder: input width " + std::to_string(x.width()) +
                          " does not match " + std::to_string(input_width()));
  }
  ad::Graph& g = ctx.graph;
  SequenceBatch padded = x;
  if (x.steps() < kMinSteps) {
    Tensor frames({kMinSteps, x.batch(), x.width()});
    std::copy(x.frames.data().begin(), x.frames.data().end(), frames.data().begin());
    padded.frames = std::move(frames);
  }
  Var seq = g.constant(padded.frames);
  std::vector<Var> pooled;
  for (std::size_t i = 0; i < kKernels.size(); ++i) {
    const std::size_t k = kKernels[i];
    std::vector<std::size_t> valid(x.batch());
    for (std::size_t n = 0; n < x.batch(); ++n) {
      valid[n] = std::max(x.lengths[n], kMinSteps) - k + 1;
    }
    Var conv = ad::relu(ad::conv1d(seq, ctx.bind(filters[i]), ctx.bind(biases[i]), k));
    pooled.push_back(ad::max_over_time(conv, std::move(valid)));
  }
  return projection.forward(ctx, ad::concat(pooled));
}

void TextCnnEncoder::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < kKernels.size(); ++i) {
    const std::string k = std::to_string(kKernels[i]);
    out.push_back({prefix + ".conv" + k + ".weight", &filters[i]});
    out.push_back({prefix + ".conv" + k + ".bias", &biases[i]});
  }
  projection.collect(prefix + ".projection", out);
}

InvarianceEncoder::InvarianceEncoder(std::size_t in, std::size_t out, bool shared, Rng& rng) {
  const std::size_t count = shared ? 1 : 3;
  for (std::size_t i = 0; i < count; ++i) branches.emplace_back(in, out, rng);
}

Var InvarianceEncoder::forward(const Context& ctx, Var h, std::size_t modality) const {
  const Linear& fc = branches[shared() ? 0 : modality];
  return ad::dropout(ad::relu(fc.forward(ctx, h)), ctx.dropout, ctx.train, ctx.dropout_rng);
}

void InvarianceEncoder::collect(const std::string& prefix, ParamList& out) {
  if (shared()) {
    branches[0].collect(prefix + ".fc", out);
    return;
  }
  static constexpr const char* kNames[] = {"a", "v", "t"};
  for (std::size_t i = 0; i < branches.size(); ++i) {
    branches[i].collect(prefix + ".fc_" + kNames[i], out);
  }
}

Classifier::Classifier(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng)
    : layers{Linear(in, hidden, rng), Linear(hidden, hidden, rng), Linear(hidden, classes, rng)} {}

Var Classifier::forward(const Context& ctx, Var z) const {
  if (z.value().rank() != 2 || z.value().dim(1) != in_width()) {
    throw ValidationError("classifier: input " + to_string(z.shape()) +
                          " does not match configured width " + std::to_string(in_width()));
  }
  Var x = z;
  for (std::size_t i = 0; i < 2; ++i) {
    x = ad::dropout(ad::relu(layers[i].forward(ctx, x)), ctx.dropout, ctx.train, ctx.dropout_rng);
  }
  return layers[2].forward(ctx, x);
}

void Classifier::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + ".fc" + std::to_string(i + 1), out);
  }
}

}  // namespace ifmmin::nn
