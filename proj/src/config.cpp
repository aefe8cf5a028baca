#include "ifmmin/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>

#include "ifmmin/io.hpp"

namespace ifmmin::config {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view what) {
  throw ValidationError("config key '" + std::string(key) + "': cannot parse '" +
                        std::string(value) + "' as " + std::string(what));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "an unsigned 64-bit integer");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a number");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += fmt(values[i]);
  }
  return out;
}

struct Entry {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
  bool is_path = false;
};

// Key table in canonical order.
const std::vector<std::pair<std::string, Entry>>& table() {
  static const std::vector<std::pair<std::string, Entry>> kTable = [] {
    std::vector<std::pair<std::string, Entry>> t;
    auto size_key = [&t](std::string name, std::function<std::size_t&(RunConfig&)> field) {
      t.push_back({name,
                   {[name, field](RunConfig& c, std::string_view v) { field(c) = to_size(name, v); },
                    [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }}});
    };
    auto double_key = [&t](std::string name, std::function<double&(RunConfig&)> field) {
      t.push_back({name,
                   {[name, field](RunConfig& c, std::string_view v) { field(c) = to_double(name, v); },
                    [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }}});
    };
    auto bool_key = [&t](std::string name, std::function<bool&(RunConfig&)> field) {
      t.push_back({name,
                   {[name, field](RunConfig& c, std::string_view v) { field(c) = to_bool(name, v); },
                    [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }}});
    };
    auto path_key = [&t](std::string name, std::function<std::filesystem::path&(RunConfig&)> field) {
      t.push_back({name,
                   {[name, field](RunConfig& c, std::string_view v) {
                      if (v.empty()) throw ValidationError("config key '" + name + "': empty path");
                      field(c) = std::filesystem::path(std::string(v));
                    },
                    [field](const RunConfig& c) {
                      return field(const_cast<RunConfig&>(c)).generic_string();
                    },
                    true}});
    };

    t.push_back({"seed",
                 {[](RunConfig& c, std::string_view v) {
                    c.synth.seed = to_u64("seed", v);
                    c.train.seed = c.synth.seed;
                  },
                  [](const RunConfig& c) { return std::to_string(c.train.seed); }}});
    size_key("n_utterances", [](RunConfig& c) -> std::size_t& { return c.synth.n_utterances; });
    size_key("n_classes", [](RunConfig& c) -> std::size_t& { return c.synth.n_classes; });
    size_key("latent_dim", [](RunConfig& c) -> std::size_t& { return c.synth.latent_dim; });
    t.push_back({"class_priors",
                 {[](RunConfig& c, std::string_view v) {
                    std::vector<double> priors;
                    for (const std::string& item : split_list(v)) {
                      priors.push_back(to_double("class_priors", item));
                    }
                    c.synth.class_priors = priors;
                  },
                  [](const RunConfig& c) { return fmt_list(c.synth.class_priors); }}});
    size_key("seq_len_a", [](RunConfig& c) -> std::size_t& { return c.synth.seq_len_a; });
    size_key("seq_len_v", [](RunConfig& c) -> std::size_t& { return c.synth.seq_len_v; });
    size_key("seq_len_t", [](RunConfig& c) -> std::size_t& { return c.synth.seq_len_t; });
    double_key("noise_scale", [](RunConfig& c) -> double& { return c.synth.noise_scale; });
    double_key("latent_sigma", [](RunConfig& c) -> double& { return c.synth.latent_sigma; });
    double_key("class_separation", [](RunConfig& c) -> double& { return c.synth.class_separation; });
    size_key("dim_a", [](RunConfig& c) -> std::size_t& { return c.synth.dims.acoustic; });
    size_key("dim_v", [](RunConfig& c) -> std::size_t& { return c.synth.dims.visual; });
    size_key("dim_t", [](RunConfig& c) -> std::size_t& { return c.synth.dims.textual; });
    size_key("hidden_size", [](RunConfig& c) -> std::size_t& { return c.dims.hidden; });
    size_key("invariant_size", [](RunConfig& c) -> std::size_t& { return c.dims.invariant; });
    size_key("text_filters", [](RunConfig& c) -> std::size_t& { return c.dims.text_filters; });
    t.push_back({"ae_widths",
                 {[](RunConfig& c, std::string_view v) {
                    std::vector<std::size_t> widths;
                    for (const std::string& item : split_list(v)) {
                      widths.push_back(to_size("ae_widths", item));
                    }
                    c.dims.ae_widths = widths;
                  },
                  [](const RunConfig& c) { return fmt_list(c.dims.ae_widths); }}});
    size_key("num_autoencoders", [](RunConfig& c) -> std::size_t& { return c.dims.autoencoders; });
    size_key("classifier_hidden",
             [](RunConfig& c) -> std::size_t& { return c.dims.classifier_hidden; });
    bool_key("share_invariance_encoder",
             [](RunConfig& c) -> bool& { return c.dims.share_invariance_encoder; });
    double_key("dropout", [](RunConfig& c) -> double& { return c.train.dropout; });
    size_key("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    double_key("initial_lr", [](RunConfig& c) -> double& { return c.train.initial_lr; });
    size_key("epochs_per_fold", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    size_key("folds", [](RunConfig& c) -> std::size_t& { return c.train.folds; });
    size_key("fold", [](RunConfig& c) -> std::size_t& { return c.train.fold; });
    t.push_back({"cmd_K",
                 {[](RunConfig& c, std::string_view v) {
                    c.train.cmd.max_order = static_cast<int>(to_size("cmd_K", v));
                  },
                  [](const RunConfig& c) { return std::to_string(c.train.cmd.max_order); }}});
    bool_key("cmd_sigmoid_squash", [](RunConfig& c) -> bool& { return c.train.cmd_sigmoid_squash; });
    double_key("lambda1", [](RunConfig& c) -> double& { return c.train.weights.lambda1; });
    double_key("lambda2", [](RunConfig& c) -> double& { return c.train.weights.lambda2; });
    double_key("lambda_cmd", [](RunConfig& c) -> double& { return c.train.weights.lambda_cmd; });
    bool_key("freeze_student_encoders",
             [](RunConfig& c) -> bool& { return c.train.freeze_student_encoders; });
    bool_key("no_inv_loss", [](RunConfig& c) -> bool& { return c.train.ablation.no_inv_loss; });
    bool_key("no_cascaded_input",
             [](RunConfig& c) -> bool& { return c.train.ablation.no_cascaded_input; });
    bool_key("no_ifim", [](RunConfig& c) -> bool& { return c.train.ablation.no_ifim; });
    path_key("dataset", [](RunConfig& c) -> std::filesystem::path& { return c.dataset; });
    path_key("checkpoints_dir",
             [](RunConfig& c) -> std::filesystem::path& { return c.checkpoints_dir; });
    path_key("reports_dir", [](RunConfig& c) -> std::filesystem::path& { return c.reports_dir; });
    return t;
  }();
  return kTable;
}

const Entry& lookup(std::string_view key) {
  for (const auto& [name, entry] : table()) {
    if (name == key) return entry;
  }
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<std::string>& keys() {
  static const std::vector<std::string> kKeys = [] {
    std::vector<std::string> out;
    for (const auto& entry : table()) out.push_back(entry.first);
    return out;
  }();
  return kKeys;
}

void set(RunConfig& cfg, std::string_view key, std::string_view value) {
  lookup(key).set(cfg, trim(value));
  cfg.dims.features = cfg.synth.dims;
  cfg.dims.classes = cfg.synth.n_classes;
}

std::string get(const RunConfig& cfg, std::string_view key) { return lookup(key).get(cfg); }

RunConfig parse(std::string_view text, std::string_view origin) {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(where + "expected 'key = value', got '" + content + "'");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end()) {
      throw ValidationError(where + "key '" + key + "' already set on line " +
                            std::to_string(it->second));
    }
    seen[key] = line_no;
    try {
      set(cfg, key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load(const std::filesystem::path& path) {
  return parse(io::read_file(path), path.generic_string());
}

void apply_environment(RunConfig& cfg) {
  if (const char* seed = std::getenv("IFMMIN_SEED"); seed != nullptr && *seed != '\0') {
    try {
      set(cfg, "seed", seed);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("IFMMIN_SEED: ") + e.what());
    }
  }
}

void validate(const RunConfig& cfg) {
  data::validate(cfg.synth);
  model::validate(cfg.dims);
  training::validate(cfg.train);
  if (cfg.train.cmd.max_order > 64) throw ValidationError("cmd_K must be <= 64");
  if (cfg.dims.classes != cfg.synth.n_classes) {
    throw ValidationError("model class count does not match n_classes");
  }
}

std::string canonical(const RunConfig& cfg, bool include_paths) {
  std::string out;
  for (const auto& [name, entry] : table()) {
    if (entry.is_path && !include_paths) continue;
    out += name + " = " + entry.get(cfg) + "\n";
  }
  return out;
}

std::string fingerprint(const RunConfig& cfg) { return io::sha1_hex(canonical(cfg, false)); }

}  // namespace ifmmin::config
