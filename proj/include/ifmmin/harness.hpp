#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ifmmin/checkpoint.hpp"
#include "ifmmin/config.hpp"
#include "ifmmin/evaluation.hpp"
#include "ifmmin/training.hpp"

namespace ifmmin::harness {

struct Splits {
  data::Dataset train;
  data::Dataset val;
  data::Dataset test;
};

// Reads the JSONL dataset named by cfg and checks every utterance against
// the configured feature widths and class count.
data::Dataset load_dataset(const config::RunConfig& cfg);

// Fold cfg.train.fold of a k-fold split seeded by cfg.train.seed.
Splits split(const data::Dataset& all, const config::RunConfig& cfg);

nlohmann::json trace_to_json(const std::vector<training::EpochRecord>& trace);

// {command, seed, fingerprint, config, dataset, dataset_hash, outputs}.
// dataset_hash is the git blob id of the dataset file when it exists.
nlohmann::json manifest(const config::RunConfig& cfg, const std::string& command,
                        const std::vector<std::filesystem::path>& outputs);
std::filesystem::path write_manifest(const config::RunConfig& cfg, const std::string& command,
                                     const std::vector<std::filesystem::path>& outputs);

// Checkpoint kinds: "pretrain" holds a PretrainModel, "student" a
// StudentModel. Both embed the producing config so the architecture can be
// rebuilt without the caller's config.
void save_pretrain(const std::filesystem::path& path, const config::RunConfig& cfg,
                   const training::PretrainResult& result);
void save_student(const std::filesystem::path& path, const config::RunConfig& cfg,
                  const training::IfmminResult& result);

struct LoadedPretrain {
  model::PretrainModel model;
  config::RunConfig producer;         // config embedded in the checkpoint
  std::vector<std::string> warnings;  // fingerprint mismatch and the like
};

struct LoadedStudent {
  model::StudentModel model;
  config::RunConfig producer;
  nlohmann::json trace;
  std::vector<std::string> warnings;
};

LoadedPretrain load_pretrain(const std::filesystem::path& path, const config::RunConfig& current);
LoadedStudent load_student(const std::filesystem::path& path, const config::RunConfig& current);

// ConditionReport JSON with metadata {config_fingerprint, seed, warnings}
// and the embedded Stage 2 loss trace.
nlohmann::json report_json(const evaluation::ConditionReport& report, const config::RunConfig& cfg,
                           const nlohmann::json& trace, const std::vector<std::string>& warnings);

struct AblationRow {
  std::string system;
  training::Ablation ablation;
  evaluation::ConditionReport report;
  std::vector<training::EpochRecord> trace;
  std::size_t best_epoch = 0;
};

// The four systems compared: full model, without L_inv, without cascaded
// input, and the zero-fill classifier without IF-IM.
std::vector<std::pair<std::string, training::Ablation>> ablation_matrix();

// Trains and evaluates every system of the matrix from the same pretrained
// network; other settings come from cfg.
std::vector<AblationRow> run_ablation(const config::RunConfig& cfg, const Splits& splits,
                                      const model::PretrainModel& pretrained);

nlohmann::json ablation_json(const std::vector<AblationRow>& rows, const config::RunConfig& cfg);

}  // namespace ifmmin::harness
