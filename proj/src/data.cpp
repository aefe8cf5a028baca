#include "ifmmin/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "ifmmin/io.hpp"
#include "ifmmin/rng.hpp"

namespace ifmmin::data {

namespace fs = std::filesystem;

char modality_letter(Modality m) {
  switch (m) {
    case Modality::Acoustic: return 'a';
    case Modality::Visual: return 'v';
    case Modality::Textual: return 't';
  }
  return '?';
}

void validate(const RawUtterance& u, const FeatureDims& dims, std::size_t classes) {
  for (Modality m : kModalities) {
    const Tensor& x = u[m];
    if (x.rank() != 2 || x.dim(0) == 0 || x.dim(1) != dims[m]) {
      throw ValidationError("utterance " + u.id + ": modality " + modality_letter(m) +
                            " has shape " + to_string(x.shape()) + ", expected [T >= 1, " +
                            std::to_string(dims[m]) + "]");
    }
  }
  if (u.label >= classes) {
    throw ValidationError("utterance " + u.id + ": label " + std::to_string(u.label) +
                          " outside 0.." + std::to_string(classes - 1));
  }
}

void validate(const SynthSpec& spec) {
  if (spec.n_utterances == 0) throw ValidationError("synth: n_utterances must be positive");
  if (spec.class_priors.size() != spec.n_classes) {
    throw ValidationError("synth: " + std::to_string(spec.class_priors.size()) +
                          " class priors for " + std::to_string(spec.n_classes) + " classes");
  }
  double total = 0.0;
  for (double p : spec.class_priors) {
    if (!(p >= 0.0)) throw ValidationError("synth: class priors must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("synth: class priors sum to " + std::to_string(total) + ", expected 1");
  }
  if (spec.latent_dim < spec.n_classes) {
    throw ValidationError("synth: latent_dim must be >= n_classes");
  }
  if (spec.seq_len_a == 0 || spec.seq_len_v == 0 || spec.seq_len_t == 0) {
    throw ValidationError("synth: sequence lengths must be >= 1");
  }
  if (spec.noise_scale < 0.0 || spec.latent_sigma < 0.0) {
    throw ValidationError("synth: noise_scale and latent_sigma must be non-negative");
  }
  if (spec.class_separation < 4.0) {
    throw ValidationError("synth: class_separation must be >= 4 sigma");
  }
}

namespace {

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

// Orthonormal directions via Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> class_directions(std::size_t classes, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < classes) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& d : dirs) {
      const double dot = std::inner_product(v.begin(), v.end(), d.begin(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * d[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

}  // namespace

Dataset generate(const SynthSpec& spec) {
  validate(spec);
  const std::size_t latent = spec.latent_dim;
  const std::array<std::size_t, 3> lengths = {spec.seq_len_a, spec.seq_len_v, spec.seq_len_t};

  Rng means_rng(spec.seed, "synth.means");
  const auto dirs = class_directions(spec.n_classes, latent, means_rng);
  const double radius = spec.class_separation * spec.latent_sigma / std::sqrt(2.0);

  // Fixed per-modality affine maps A_m [D_m, latent], b_m [D_m].
  std::array<Tensor, 3> maps;
  std::array<Tensor, 3> offsets;
  Rng maps_rng(spec.seed, "synth.maps");
  for (Modality m : kModalities) {
    const std::size_t d = spec.dims[m];
    maps[index(m)] = Tensor({d, latent});
    offsets[index(m)] = Tensor({d});
    const double s = 1.0 / std::sqrt(static_cast<double>(latent));
    for (double& v : maps[index(m)].data()) v = s * maps_rng.normal();
    for (double& v : offsets[index(m)].data()) v = 0.1 * maps_rng.normal();
  }

  const Rng utterance_root(spec.seed, "synth.utterances");
  Dataset out(spec.n_utterances);
  for (std::size_t i = 0; i < spec.n_utterances; ++i) {
    Rng rng = utterance_root.fork("utt" + std::to_string(i));
    RawUtterance& u = out[i];
    u.id = "utt" + std::to_string(i);

    const double pick = rng.uniform();
    double cumulative = 0.0;
    u.label = spec.n_classes - 1;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      cumulative += spec.class_priors[c];
      if (pick < cumulative) {
        u.label = c;
        break;
      }
    }

    std::vector<double> z(latent);
    for (std::size_t j = 0; j < latent; ++j) {
      z[j] = radius * dirs[u.label][j] + spec.latent_sigma * rng.normal();
    }

    for (Modality m : kModalities) {
      const std::size_t d = spec.dims[m];
      const std::size_t steps = lengths[index(m)];
      const Tensor& a = maps[index(m)];
      const Tensor& b = offsets[index(m)];
      std::vector<double> clean(d);
      for (std::size_t r = 0; r < d; ++r) {
        double acc = b[r];
        for (std::size_t j = 0; j < latent; ++j) acc += a[r * latent + j] * z[j];
        clean[r] = acc;
      }
      Tensor frames({steps, d});
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t r = 0; r < d; ++r) {
          const double noise = spec.noise_scale > 0.0 ? spec.noise_scale * rng.normal() : 0.0;
          frames[t * d + r] = to_float_precision(clean[r] + noise);
        }
      }
      u[m] = std::move(frames);
    }
  }
  return out;
}

namespace {

void append_frames(std::string& out, const Tensor& x) {
  char buf[32];
  out += '[';
  const std::size_t steps = x.dim(0), width = x.dim(1);
  for (std::size_t t = 0; t < steps; ++t) {
    if (t) out += ',';
    out += '[';
    for (std::size_t c = 0; c < width; ++c) {
      if (c) out += ',';
      auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(x[t * width + c]));
      out.append(buf, res.ptr);
    }
    out += ']';
  }
  out += ']';
}

Tensor parse_frames(const nlohmann::json& j, const std::string& id, char letter) {
  if (!j.is_array() || j.empty()) {
    throw ValidationError("utterance " + id + ": field '" + letter + "' must be a non-empty list");
  }
  const std::size_t steps = j.size();
  const std::size_t width = j[0].size();
  std::vector<double> values;
  values.reserve(steps * width);
  for (const auto& frame : j) {
    if (!frame.is_array() || frame.size() != width) {
      throw ValidationError("utterance " + id + ": ragged frames in '" + letter + "'");
    }
    for (const auto& v : frame) {
      values.push_back(static_cast<double>(static_cast<float>(v.get<double>())));
    }
  }
  return Tensor({steps, width}, std::move(values));
}

}  // namespace

void write_jsonl(const Dataset& dataset, const fs::path& path) {
  std::string out;
  for (const RawUtterance& u : dataset) {
    out += "{\"id\":";
    out += nlohmann::json(u.id).dump();
    out += ",\"label\":" + std::to_string(u.label);
    for (Modality m : kModalities) {
      out += ",\"";
      out += modality_letter(m);
      out += "\":";
      append_frames(out, u[m]);
    }
    out += "}\n";
  }
  io::atomic_write(path, out);
}

Dataset read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read dataset: " + path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    RawUtterance u;
    try {
      u.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      u.label = j.at("label").get<std::size_t>();
      for (Modality m : kModalities) {
        const std::string key(1, modality_letter(m));
        u[m] = parse_frames(j.at(key), u.id, modality_letter(m));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::string git_blob_hash(const fs::path& path) {
  const std::string bytes = io::read_file(path);
  std::string blob = "blob " + std::to_string(bytes.size());
  blob.push_back('\0');
  blob += bytes;
  return io::sha1_hex(blob);
}

}  // namespace ifmmin::data
