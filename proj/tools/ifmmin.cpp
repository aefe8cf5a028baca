#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ifmmin/config.hpp"
#include "ifmmin/evaluation.hpp"
#include "ifmmin/gradcheck.hpp"
#include "ifmmin/harness.hpp"
#include "ifmmin/io.hpp"

namespace {

using namespace ifmmin;
namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

config::RunConfig resolve(const Common& common) {
  config::RunConfig cfg = common.config_path.empty() ? config::RunConfig{}
                                                     : config::load(common.config_path);
  for (const std::string& item : common.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("--set expects key=value, got '" + item + "'");
    }
    config::set(cfg, item.substr(0, eq), item.substr(eq + 1));
  }
  config::apply_environment(cfg);
  return cfg;
}

void print_report(const evaluation::ConditionReport& r) {
  for (const auto& c : r.conditions) {
    std::printf("  {%s}%*s WA %.4f  UA %.4f\n", c.condition.c_str(),
                static_cast<int>(3 - c.condition.size()), "", c.wa, c.ua);
  }
  std::printf("  average WA %.4f  UA %.4f\n", r.average_wa, r.average_ua);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int cmd_gen_data(config::RunConfig cfg, const std::string& out) {
  if (!out.empty()) cfg.dataset = out;
  config::validate(cfg);
  const data::Dataset ds = data::generate(cfg.synth);
  data::write_jsonl(ds, cfg.dataset);
  const fs::path m = harness::write_manifest(cfg, "gen-data", {cfg.dataset});
  std::printf("wrote %zu utterances to %s (blob %s)\nmanifest %s\n", ds.size(),
              cfg.dataset.generic_string().c_str(), data::git_blob_hash(cfg.dataset).c_str(),
              m.generic_string().c_str());
  return 0;
}

int cmd_pretrain(const config::RunConfig& cfg, std::string out) {
  config::validate(cfg);
  if (out.empty()) out = (cfg.checkpoints_dir / "pretrain.ckpt").generic_string();
  const harness::Splits splits = harness::split(harness::load_dataset(cfg), cfg);
  const training::PretrainResult result =
      training::pretrain(cfg.dims, splits.train, splits.val, cfg.train);
  for (const auto& r : result.trace) {
    std::printf("epoch %3zu  lr %.2e  cls %.4f  cmd %.4f  train WA %.4f  val WA %.4f\n", r.epoch,
                r.lr, r.cls, r.cmd, r.train_wa, r.val_wa);
  }
  harness::save_pretrain(out, cfg, result);
  const fs::path trace = cfg.reports_dir / "pretrain.json";
  io::atomic_write(trace, nlohmann::json{{"best_epoch", result.best_epoch},
                                         {"best_val_wa", result.best_val_wa},
                                         {"trace", harness::trace_to_json(result.trace)}}
                                  .dump(2) + "\n");
  harness::write_manifest(cfg, "pretrain", {out, trace});
  std::printf("best epoch %zu, validation WA %.4f\ncheckpoint %s\n", result.best_epoch,
              result.best_val_wa, out.c_str());
  return 0;
}

int cmd_train(const config::RunConfig& cfg, std::string from, std::string out) {
  config::validate(cfg);
  if (from.empty()) from = (cfg.checkpoints_dir / "pretrain.ckpt").generic_string();
  if (out.empty()) out = (cfg.checkpoints_dir / "student.ckpt").generic_string();
  harness::LoadedPretrain pre = harness::load_pretrain(from, cfg);
  print_warnings(pre.warnings);
  const harness::Splits splits = harness::split(harness::load_dataset(cfg), cfg);
  const training::IfmminResult result =
      training::train_ifmmin(pre.model, splits.train, splits.val, cfg.train);
  for (const auto& r : result.trace) {
    std::printf("epoch %3zu  lr %.2e  cls %.4f  img %.4f  inv %.4f  total %.4f  val WA %.4f\n",
                r.epoch, r.lr, r.cls, r.img, r.inv, r.total, r.val_wa);
  }
  harness::save_student(out, cfg, result);
  const fs::path trace = cfg.reports_dir / "train.json";
  io::atomic_write(trace, nlohmann::json{{"best_epoch", result.best_epoch},
                                         {"best_val_wa", result.best_val_wa},
                                         {"warnings", pre.warnings},
                                         {"trace", harness::trace_to_json(result.trace)}}
                                  .dump(2) + "\n");
  harness::write_manifest(cfg, "train", {out, trace});
  std::printf("best epoch %zu, validation average WA %.4f\ncheckpoint %s\n", result.best_epoch,
              result.best_val_wa, out.c_str());
  return 0;
}

int cmd_eval(const config::RunConfig& cfg, std::string ckpt, std::string out) {
  config::validate(cfg);
  if (ckpt.empty()) ckpt = (cfg.checkpoints_dir / "student.ckpt").generic_string();
  if (out.empty()) out = (cfg.reports_dir / "report.json").generic_string();
  harness::LoadedStudent student = harness::load_student(ckpt, cfg);
  print_warnings(student.warnings);
  const harness::Splits splits = harness::split(harness::load_dataset(cfg), cfg);
  const evaluation::ConditionReport report =
      evaluation::evaluate_conditions(student.model, splits.test, cfg.train.batch_size);
  io::atomic_write(out, harness::report_json(report, cfg, student.trace, student.warnings).dump(2) +
                            "\n");
  harness::write_manifest(cfg, "eval", {out});
  print_report(report);
  std::printf("report %s\n", out.c_str());
  return 0;
}

int cmd_export(const config::RunConfig& cfg, std::string ckpt, std::string out,
               std::size_t per_condition) {
  config::validate(cfg);
  if (ckpt.empty()) ckpt = (cfg.checkpoints_dir / "student.ckpt").generic_string();
  if (out.empty()) out = (cfg.reports_dir / "features.csv").generic_string();
  harness::LoadedStudent student = harness::load_student(ckpt, cfg);
  print_warnings(student.warnings);
  harness::Splits splits = harness::split(harness::load_dataset(cfg), cfg);
  if (splits.test.size() < per_condition) {
    throw ValidationError("test split has " + std::to_string(splits.test.size()) +
                          " utterances, fewer than --per-condition " +
                          std::to_string(per_condition));
  }
  splits.test.resize(per_condition);
  const std::vector<model::Condition> conditions(model::missing_conditions().begin(),
                                                 model::missing_conditions().end());
  const auto rows = evaluation::export_invariant_features(student.model, splits.test, conditions);
  io::atomic_write(out, evaluation::to_csv(rows));
  harness::write_manifest(cfg, "export-features", {out});
  std::printf("wrote %zu rows to %s\n", rows.size(), out.c_str());
  return 0;
}

int cmd_gradcheck(std::size_t seeds, std::uint64_t first_seed) {
  bool all = true;
  for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
    const auto results = gradcheck::run_suite(s);
    std::fputs(gradcheck::format_table(results, s).c_str(), stdout);
    for (const auto& r : results) all = all && r.pass;
  }
  std::printf("%s\n", all ? "all blocks pass" : "gradient check FAILED");
  return all ? 0 : 2;
}

int cmd_ablate(const config::RunConfig& cfg, std::string from, std::string out) {
  config::validate(cfg);
  if (from.empty()) from = (cfg.checkpoints_dir / "pretrain.ckpt").generic_string();
  if (out.empty()) out = (cfg.reports_dir / "ablation.json").generic_string();
  harness::LoadedPretrain pre = harness::load_pretrain(from, cfg);
  print_warnings(pre.warnings);
  const harness::Splits splits = harness::split(harness::load_dataset(cfg), cfg);
  const auto rows = harness::run_ablation(cfg, splits, pre.model);
  nlohmann::json j = harness::ablation_json(rows, cfg);
  j["metadata"]["warnings"] = pre.warnings;
  io::atomic_write(out, j.dump(2) + "\n");
  harness::write_manifest(cfg, "ablate", {out});

  std::printf("%-28s", "system");
  for (const auto& c : model::missing_conditions()) std::printf(" %7s", ("{" + c.name() + "}").c_str());
  std::printf(" %7s\n", "avg");
  for (const auto& row : rows) {
    std::printf("%-28s", row.system.c_str());
    for (const auto& c : row.report.conditions) std::printf(" %7.4f", c.wa);
    std::printf(" %7.4f\n", row.report.average_wa);
  }
  std::printf("report %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invariant-feature missing-modality imagination network on synthetic data"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "key = value config file");
    sub->add_option("--set", common.overrides, "override one config key (key=value)");
  };

  std::string out, from, ckpt;
  std::size_t per_condition = 100, seeds = 3;
  std::uint64_t first_seed = 1;
  bool no_inv_loss = false, no_cascaded_input = false, no_ifim = false, freeze = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic JSONL dataset");
  add_common(gen);
  gen->add_option("-o,--out", out, "dataset path (default: config dataset)");

  CLI::App* pre = app.add_subcommand("pretrain", "Stage 1: CMD-constrained pretraining");
  add_common(pre);
  pre->add_option("-o,--out", out, "checkpoint path");

  CLI::App* train = app.add_subcommand("train", "Stage 2: train the student from a Stage 1 checkpoint");
  add_common(train);
  train->add_option("--from", from, "Stage 1 checkpoint");
  train->add_option("-o,--out", out, "student checkpoint path");
  train->add_flag("--no-inv-loss", no_inv_loss, "drop L_inv from the objective");
  train->add_flag("--no-cascaded-input", no_cascaded_input, "feed H' to the first autoencoder only");
  train->add_flag("--no-ifim", no_ifim, "classify concat(h, H') without imagination");
  train->add_flag("--freeze-student-encoders", freeze, "keep student encoders fixed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a student under the six conditions");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt, "student checkpoint");
  eval->add_option("-o,--out", out, "report JSON path");

  CLI::App* exp = app.add_subcommand("export-features", "write H' per condition as CSV");
  add_common(exp);
  exp->add_option("--checkpoint", ckpt, "student checkpoint");
  exp->add_option("-o,--out", out, "CSV path");
  exp->add_option("--per-condition", per_condition, "utterances per condition")->check(CLI::PositiveNumber);

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every block");
  gc->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--first-seed", first_seed, "first seed");

  CLI::App* abl = app.add_subcommand("ablate", "train and evaluate the ablation matrix");
  add_common(abl);
  abl->add_option("--from", from, "Stage 1 checkpoint");
  abl->add_option("-o,--out", out, "combined report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gc) return cmd_gradcheck(seeds, first_seed);
    config::RunConfig cfg = resolve(common);
    if (*gen) return cmd_gen_data(cfg, out);
    if (*pre) return cmd_pretrain(cfg, out);
    if (*train) {
      if (no_inv_loss) cfg.train.ablation.no_inv_loss = true;
      if (no_cascaded_input) cfg.train.ablation.no_cascaded_input = true;
      if (no_ifim) cfg.train.ablation.no_ifim = true;
      if (freeze) cfg.train.freeze_student_encoders = true;
      return cmd_train(cfg, from, out);
    }
    if (*eval) return cmd_eval(cfg, ckpt, out);
    if (*exp) return cmd_export(cfg, ckpt, out, per_condition);
    if (*abl) return cmd_ablate(cfg, from, out);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 2;
  }
  return 1;
}
