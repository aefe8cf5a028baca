#include "ifmmin/harness.hpp"

#include "ifmmin/io.hpp"

namespace ifmmin::harness {

using config::RunConfig;

data::Dataset load_dataset(const RunConfig& cfg) {
  data::Dataset all = data::read_jsonl(cfg.dataset);
  for (const data::RawUtterance& u : all) {
    try {
      data::validate(u, cfg.dims.features, cfg.dims.classes);
    } catch (const ValidationError& e) {
      throw ValidationError(cfg.dataset.generic_string() + ": " + e.what());
    }
  }
  return all;
}

Splits split(const data::Dataset& all, const RunConfig& cfg) {
  if (all.size() < cfg.train.folds) {
    throw ValidationError("dataset has " + std::to_string(all.size()) + " utterances, fewer than " +
                          std::to_string(cfg.train.folds) + " folds");
  }
  const auto folds = training::kfold_split(all.size(), cfg.train.folds, cfg.train.seed);
  const training::FoldSplit& f = folds.at(cfg.train.fold);
  return {training::select(all, f.train), training::select(all, f.val),
          training::select(all, f.test)};
}

nlohmann::json trace_to_json(const std::vector<training::EpochRecord>& trace) {
  nlohmann::json out = nlohmann::json::array();
  for (const training::EpochRecord& r : trace) {
    out.push_back({{"epoch", r.epoch},
                   {"lr", r.lr},
                   {"cls", r.cls},
                   {"cmd", r.cmd},
                   {"img", r.img},
                   {"inv", r.inv},
                   {"total", r.total},
                   {"train_wa", r.train_wa},
                   {"val_wa", r.val_wa}});
  }
  return out;
}

nlohmann::json manifest(const RunConfig& cfg, const std::string& command,
                        const std::vector<std::filesystem::path>& outputs) {
  nlohmann::json config = nlohmann::json::object();
  for (const std::string& key : config::keys()) config[key] = config::get(cfg, key);
  nlohmann::json out_paths = nlohmann::json::array();
  for (const auto& p : outputs) out_paths.push_back(p.generic_string());
  std::error_code ec;
  const bool have_dataset = std::filesystem::is_regular_file(cfg.dataset, ec);
  return {{"command", command},
          {"seed", cfg.train.seed},
          {"fingerprint", config::fingerprint(cfg)},
          {"config", config},
          {"dataset", cfg.dataset.generic_string()},
          {"dataset_hash", have_dataset ? nlohmann::json(data::git_blob_hash(cfg.dataset))
                                        : nlohmann::json(nullptr)},
          {"outputs", out_paths}};
}

std::filesystem::path write_manifest(const RunConfig& cfg, const std::string& command,
                                     const std::vector<std::filesystem::path>& outputs) {
  const std::filesystem::path path = cfg.reports_dir / (command + ".manifest.json");
  io::atomic_write(path, manifest(cfg, command, outputs).dump(2) + "\n");
  return path;
}

namespace {

nlohmann::json base_metadata(const std::string& kind, const RunConfig& cfg) {
  return {{"kind", kind}, {"config", config::canonical(cfg, false)}};
}

checkpoint::Checkpoint open(const std::filesystem::path& path, const std::string& kind,
                            const RunConfig& current, RunConfig& producer,
                            std::vector<std::string>& warnings) {
  checkpoint::Checkpoint ckpt = checkpoint::load(path);
  const std::string origin = path.generic_string();
  if (!ckpt.metadata.is_object() || ckpt.metadata.value("kind", "") != kind) {
    throw ValidationError(origin + ": expected a " + kind + " checkpoint");
  }
  try {
    producer = config::parse(ckpt.metadata.at("config").get<std::string>(), origin + " (config)");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(origin + ": missing embedded config: " + e.what());
  }
  const std::string current_fp = config::fingerprint(current);
  if (ckpt.fingerprint != current_fp) {
    warnings.push_back("config fingerprint mismatch: " + origin + " was written with " +
                       ckpt.fingerprint + ", current config is " + current_fp);
  }
  return ckpt;
}

}  // namespace

void save_pretrain(const std::filesystem::path& path, const RunConfig& cfg,
                   const training::PretrainResult& result) {
  model::PretrainModel m = result.model;
  nn::ParamList params;
  m.collect(params);
  nlohmann::json meta = base_metadata("pretrain", cfg);
  meta["best_epoch"] = result.best_epoch;
  meta["best_val_wa"] = result.best_val_wa;
  meta["trace"] = trace_to_json(result.trace);
  checkpoint::save(path, params, config::fingerprint(cfg), meta);
}

void save_student(const std::filesystem::path& path, const RunConfig& cfg,
                  const training::IfmminResult& result) {
  model::StudentModel m = result.model;
  nn::ParamList params;
  m.collect(params);
  nlohmann::json meta = base_metadata("student", cfg);
  meta["best_epoch"] = result.best_epoch;
  meta["best_val_wa"] = result.best_val_wa;
  meta["trace"] = trace_to_json(result.trace);
  checkpoint::save(path, params, config::fingerprint(cfg), meta);
}

LoadedPretrain load_pretrain(const std::filesystem::path& path, const RunConfig& current) {
  LoadedPretrain out;
  const checkpoint::Checkpoint ckpt = open(path, "pretrain", current, out.producer, out.warnings);
  out.model = model::make_pretrain_model(out.producer.dims, out.producer.train.seed);
  nn::ParamList params;
  out.model.collect(params);
  checkpoint::assign(ckpt, params);
  return out;
}

LoadedStudent load_student(const std::filesystem::path& path, const RunConfig& current) {
  LoadedStudent out;
  const checkpoint::Checkpoint ckpt = open(path, "student", current, out.producer, out.warnings);
  const model::PretrainModel scaffold =
      model::make_pretrain_model(out.producer.dims, out.producer.train.seed);
  out.model = model::make_student(scaffold, training::student_flags(out.producer.train.ablation),
                                  out.producer.train.seed);
  nn::ParamList params;
  out.model.collect(params);
  checkpoint::assign(ckpt, params);
  out.trace = ckpt.metadata.value("trace", nlohmann::json::array());
  return out;
}

nlohmann::json report_json(const evaluation::ConditionReport& report, const RunConfig& cfg,
                           const nlohmann::json& trace, const std::vector<std::string>& warnings) {
  nlohmann::json out = evaluation::to_json(report);
  out["metadata"] = {{"config_fingerprint", config::fingerprint(cfg)},
                     {"seed", cfg.train.seed},
                     {"warnings", warnings}};
  out["trace"] = trace;
  return out;
}

std::vector<std::pair<std::string, training::Ablation>> ablation_matrix() {
  return {{"IF-MMIN", {}},
          {"IF-MMIN w/o L_inv", {true, false, false}},
          {"IF-MMIN w/o cascaded input", {false, true, false}},
          {"zero-fill w/o IF-IM", {false, false, true}}};
}

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Splits& splits,
                                      const model::PretrainModel& pretrained) {
  std::vector<AblationRow> rows;
  for (const auto& [system, ablation] : ablation_matrix()) {
    training::TrainConfig tc = cfg.train;
    tc.ablation = ablation;
    training::IfmminResult result = training::train_ifmmin(pretrained, splits.train, splits.val, tc);
    AblationRow row;
    row.system = system;
    row.ablation = ablation;
    row.report = evaluation::evaluate_conditions(result.model, splits.test, tc.batch_size);
    row.trace = std::move(result.trace);
    row.best_epoch = result.best_epoch;
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows, const RunConfig& cfg) {
  nlohmann::json systems = nlohmann::json::array();
  for (const AblationRow& row : rows) {
    nlohmann::json entry = evaluation::to_json(row.report);
    entry["system"] = row.system;
    entry["flags"] = {{"no_inv_loss", row.ablation.no_inv_loss},
                      {"no_cascaded_input", row.ablation.no_cascaded_input},
                      {"no_ifim", row.ablation.no_ifim}};
    entry["best_epoch"] = row.best_epoch;
    entry["trace"] = trace_to_json(row.trace);
    systems.push_back(std::move(entry));
  }
  return {{"systems", systems},
          {"metadata", {{"config_fingerprint", config::fingerprint(cfg)}, {"seed", cfg.train.seed}}}};
}

}  // namespace ifmmin::harness
