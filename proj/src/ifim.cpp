#include "ifmmin/ifim.hpp"

namespace ifmmin::ifim {

Autoencoder::Autoencoder(const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw ValidationError("autoencoder: need at least two widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    encoder.emplace_back(widths[i], widths[i + 1], rng);
  }
  for (std::size_t i = widths.size() - 1; i > 0; --i) {
    decoder.emplace_back(widths[i], widths[i - 1], rng);
  }
}

AutoencoderOutput Autoencoder::forward(const nn::Context& ctx, Var z) const {
  Var x = z;
  for (const nn::Linear& layer : encoder) x = ad::relu(layer.forward(ctx, x));
  AutoencoderOutput out;
  out.hidden = x;
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    x = decoder[i].forward(ctx, x);
    if (i + 1 < decoder.size()) x = ad::relu(x);
  }
  out.delta = x;
  return out;
}

void Autoencoder::collect(const std::string& prefix, nn::ParamList& out) {
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    encoder[i].collect(prefix + ".enc" + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    decoder[i].collect(prefix + ".dec" + std::to_string(i), out);
  }
}

ImaginationModule::ImaginationModule(std::size_t count, const std::vector<std::size_t>& widths,
                                     Rng& rng) {
  if (count == 0) throw ValidationError("imagination module: need at least one autoencoder");
  for (std::size_t i = 0; i < count; ++i) stages.emplace_back(widths, rng);
}

ImaginationOutput ImaginationModule::forward(const nn::Context& ctx, Var specific, Var invariant,
                                             bool cascaded_input) const {
  if (stages.empty()) throw ValidationError("imagination module: no autoencoders");
  if (specific.shape() != invariant.shape()) {
    throw ValidationError("imagination module: h " + to_string(specific.shape()) + " and H' " +
                          to_string(invariant.shape()) + " differ in shape");
  }
  ImaginationOutput out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    Var input;
    if (i == 0) {
      input = invariant + specific;
    } else if (cascaded_input) {
      input = invariant + out.deltas.back();
    } else {
      input = out.deltas.back();
    }
    AutoencoderOutput stage = stages[i].forward(ctx, input);
    out.deltas.push_back(stage.delta);
    out.hidden.push_back(stage.hidden);
  }
  out.imagined = out.deltas.back();
  out.joint = ad::concat(out.hidden);
  return out;
}

void ImaginationModule::collect(const std::string& prefix, nn::ParamList& out) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].collect(prefix + ".ae" + std::to_string(i), out);
  }
}

std::size_t ImaginationModule::joint_width() const {
  std::size_t w = 0;
  for (const Autoencoder& s : stages) w += s.bottleneck();
  return w;
}

}  // namespace ifmmin::ifim
