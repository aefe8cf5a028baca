#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ifmmin/tensor.hpp"

namespace ifmmin::data {

enum class Modality : std::size_t { Acoustic = 0, Visual = 1, Textual = 2 };
inline constexpr std::array<Modality, 3> kModalities = {Modality::Acoustic, Modality::Visual,
                                                        Modality::Textual};
inline constexpr std::size_t index(Modality m) { return static_cast<std::size_t>(m); }
char modality_letter(Modality m);

struct FeatureDims {
  std::size_t acoustic = 130;
  std::size_t visual = 342;
  std::size_t textual = 1024;

  std::size_t operator[](Modality m) const {
    return m == Modality::Acoustic ? acoustic : m == Modality::Visual ? visual : textual;
  }
};

struct RawUtterance {
  std::string id;
  std::array<Tensor, 3> features;  // [T_m, D_m] per modality, order a, v, t
  std::size_t label = 0;

  const Tensor& operator[](Modality m) const { return features[index(m)]; }
  Tensor& operator[](Modality m) { return features[index(m)]; }
};

using Dataset = std::vector<RawUtterance>;

// Throws ValidationError on empty sequences, wrong widths or labels >= classes.
void validate(const RawUtterance& u, const FeatureDims& dims, std::size_t classes);

struct SynthSpec {
  std::size_t n_utterances = 2000;
  std::size_t n_classes = 4;
  std::size_t latent_dim = 16;
  std::vector<double> class_priors = {0.30, 0.27, 0.25, 0.18};
  std::size_t seq_len_a = 8;
  std::size_t seq_len_v = 8;
  std::size_t seq_len_t = 8;
  FeatureDims dims;
  double noise_scale = 0.5;
  double latent_sigma = 1.0;
  // Pairwise distance between class means, in units of latent_sigma.
  double class_separation = 6.0;
  std::uint64_t seed = 1;
};

void validate(const SynthSpec& spec);

// Shared-latent generator: z ~ N(mu_c, sigma^2 I), every frame of modality m
// is A_m z + b_m + noise. Values are rounded to float precision so a dataset
// survives a JSONL round trip unchanged.
Dataset generate(const SynthSpec& spec);

// JSON Lines, one object per utterance: {"id", "label", "a", "v", "t"} with
// each modality a list of frames.
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path);

// Git blob object id (SHA-1 of "blob <size>\0" + bytes) of a file.
std::string git_blob_hash(const std::filesystem::path& path);

}  // namespace ifmmin::data
