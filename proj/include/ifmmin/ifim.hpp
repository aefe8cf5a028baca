#pragma once

#include <vector>

#include "ifmmin/layers.hpp"

// Invariant-feature-aware imagination: a cascade of autoencoders where the
// predicted invariant feature H' is added to the input of every stage.
namespace ifmmin::ifim {

using ad::Var;

struct AutoencoderOutput {
  Var delta;   // reconstruction, same width as the input
  Var hidden;  // bottleneck activation
};

// Encoder ladder widths[0] -> ... -> widths.back() with ReLU on every layer,
// mirrored decoder back to widths[0] with a linear final layer.
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const std::vector<std::size_t>& widths, Rng& rng);

  AutoencoderOutput forward(const nn::Context& ctx, Var z) const;
  void collect(const std::string& prefix, nn::ParamList& out);

  std::size_t input_width() const { return encoder.front().in_width(); }
  std::size_t bottleneck() const { return encoder.back().out_width(); }

  std::vector<nn::Linear> encoder;
  std::vector<nn::Linear> decoder;
};

struct ImaginationOutput {
  Var imagined;                // h' = deltas.back()
  std::vector<Var> hidden;     // bottleneck of each stage, cascade order
  std::vector<Var> deltas;     // output of each stage
  Var joint;                   // C, concatenation of hidden
};

class ImaginationModule {
 public:
  ImaginationModule() = default;
  ImaginationModule(std::size_t stages, const std::vector<std::size_t>& widths, Rng& rng);

  // Stage 1 reads H' + h. Later stages read H' + delta_{i-1} when
  // cascaded_input is set, otherwise delta_{i-1} alone.
  ImaginationOutput forward(const nn::Context& ctx, Var specific, Var invariant,
                            bool cascaded_input) const;
  void collect(const std::string& prefix, nn::ParamList& out);

  std::size_t joint_width() const;

  std::vector<Autoencoder> stages;
};

}  // namespace ifmmin::ifim
