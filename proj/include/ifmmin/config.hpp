#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ifmmin/data.hpp"
#include "ifmmin/model.hpp"
#include "ifmmin/training.hpp"

namespace ifmmin::config {

struct RunConfig {
  data::SynthSpec synth;
  model::ModelDims dims;
  training::TrainConfig train;
  std::filesystem::path dataset = "data/synthetic.jsonl";
  std::filesystem::path checkpoints_dir = "checkpoints";
  std::filesystem::path reports_dir = "reports";
};

// Every recognised key, in canonical order.
const std::vector<std::string>& keys();

// Assigns one key. Throws ValidationError naming the key on unknown keys or
// unparsable values.
void set(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get(const RunConfig& cfg, std::string_view key);

// `key = value` lines; '#' starts a comment; blank lines are skipped.
// `origin` prefixes error messages (usually the file name).
RunConfig parse(std::string_view text, std::string_view origin = "config");
RunConfig load(const std::filesystem::path& path);

// IFMMIN_SEED, when set, replaces the seed.
void apply_environment(RunConfig& cfg);

// Cross-module checks: synthetic spec, model widths, training settings and
// their agreement (feature widths, class count).
void validate(const RunConfig& cfg);

// One `key = value` line per key in canonical order. Paths are left out when
// include_paths is false.
std::string canonical(const RunConfig& cfg, bool include_paths = true);

// SHA-1 of canonical(cfg, false): identifies everything that shapes a run.
std::string fingerprint(const RunConfig& cfg);

}  // namespace ifmmin::config
