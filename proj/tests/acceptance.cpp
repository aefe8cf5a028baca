#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ifmmin/gradcheck.hpp"
#include "ifmmin/harness.hpp"
#include "ifmmin/io.hpp"
#include "ifmmin/metrics.hpp"

using namespace ifmmin;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  std::string id;
  std::string title;
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double wall_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::vector<Tensor> snapshot(nn::ParamList params) {
  std::vector<Tensor> out;
  for (const nn::ParamRef& p : params) out.push_back(*p.tensor);
  return out;
}

Verdict check_gradients(nlohmann::json& log) {
  const auto start = std::chrono::steady_clock::now();
  bool pass = true;
  double worst = 0.0;
  std::string failed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const gradcheck::BlockResult& r : gradcheck::run_suite(seed)) {
      worst = std::max(worst, r.max_rel_err / r.tolerance);
      log["gradcheck"].push_back({{"seed", seed}, {"block", r.block}, {"max_rel_err", r.max_rel_err},
                                  {"tolerance", r.tolerance}, {"pass", r.pass}});
      if (!r.pass) {
        pass = false;
        failed += " " + r.block + "@" + std::to_string(seed);
      }
    }
  }
  const double seconds = wall_seconds(start);
  return {"A1", "gradients", pass && seconds < 120.0,
          fmt("3 seeds, worst error/tolerance %.3f, %.1fs%s", worst, seconds,
              failed.empty() ? "" : (", failed:" + failed).c_str())};
}

double moment_oracle(const Tensor& x, std::size_t col, int k) {
  double mean = 0.0;
  for (std::size_t r = 0; r < x.dim(0); ++r) mean += x.at(r, col);
  mean /= static_cast<double>(x.dim(0));
  double acc = 0.0;
  for (std::size_t r = 0; r < x.dim(0); ++r) acc += std::pow(x.at(r, col) - mean, k);
  return acc / static_cast<double>(x.dim(0));
}

double pair_oracle(const Tensor& x, const Tensor& y, int K) {
  double total = 0.0;
  for (int k = 1; k <= K; ++k) {
    double sq = 0.0;
    for (std::size_t c = 0; c < x.dim(1); ++c) {
      double dx, dy;
      if (k == 1) {
        dx = dy = 0.0;
        for (std::size_t r = 0; r < x.dim(0); ++r) dx += x.at(r, c) / static_cast<double>(x.dim(0));
        for (std::size_t r = 0; r < y.dim(0); ++r) dy += y.at(r, c) / static_cast<double>(y.dim(0));
      } else {
        dx = moment_oracle(x, c, k);
        dy = moment_oracle(y, c, k);
      }
      sq += (dx - dy) * (dx - dy);
    }
    total += std::sqrt(sq);
  }
  return total;
}

Tensor random_sample(std::size_t rows, std::size_t cols, Rng& rng) {
  const double scale = rng.uniform(0.2, 2.0), shift = rng.normal();
  Tensor t({rows, cols});
  for (double& v : t.data()) v = shift + scale * rng.normal();
  return t;
}

Verdict check_cmd() {
  Rng rng(2024, "acceptance.cmd");
  double worst = 0.0;
  bool exact = true;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.below(63), d = 1 + rng.below(32);
    const int K = 2 + static_cast<int>(rng.below(5));
    const cmd::CmdConfig cfg{K};
    const Tensor a = random_sample(n, d, rng), v = random_sample(n, d, rng), t = random_sample(n, d, rng);
    const Tensor y = random_sample(2 + rng.below(63), d, rng);
    const double pair = cmd::cmd_pair(a, y, cfg);
    worst = std::max(worst, std::abs(pair - pair_oracle(a, y, K)));
    const double expected = (pair_oracle(t, a, K) + pair_oracle(t, v, K) + pair_oracle(a, v, K)) / 3.0;
    worst = std::max(worst, std::abs(cmd::cmd_loss(a, v, t, cfg) - expected));
    exact = exact && pair == cmd::cmd_pair(y, a, cfg) && cmd::cmd_pair(a, a, cfg) == 0.0 &&
            cmd::cmd_loss(a, a, a, cfg) == 0.0;
  }
  return {"A2", "CMD oracle", worst <= 1e-9 && exact,
          fmt("100 instances, max |error| %.2e, symmetry and self-distance %s", worst,
              exact ? "exact" : "NOT exact")};
}

Verdict check_metrics() {
  Rng rng(2024, "acceptance.metrics");
  bool exact = true;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(80), classes = 2 + rng.below(5);
    std::vector<std::size_t> preds(n), labels(n);
    for (std::size_t j = 0; j < n; ++j) {
      preds[j] = rng.below(classes);
      labels[j] = rng.below(classes);
    }
    std::vector<std::vector<std::size_t>> cm(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t j = 0; j < n; ++j) ++cm[labels[j]][preds[j]];
    std::size_t diag = 0, present = 0;
    double recall = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      diag += cm[c][c];
      std::size_t row = 0;
      for (std::size_t x : cm[c]) row += x;
      if (row == 0) continue;
      recall += static_cast<double>(cm[c][c]) / static_cast<double>(row);
      ++present;
    }
    exact = exact &&
            metrics::weighted_accuracy(preds, labels) ==
                static_cast<double>(diag) / static_cast<double>(n) &&
            metrics::unweighted_accuracy(preds, labels) == recall / static_cast<double>(present);
  }
  const std::vector<std::size_t> labels = {0, 0, 0, 1}, zeros = {0, 0, 0, 0};
  const double wa = metrics::weighted_accuracy(zeros, labels);
  const double ua = metrics::unweighted_accuracy(zeros, labels);
  return {"A6", "metrics oracle", exact && wa == 0.75 && ua == 0.5,
          fmt("1000 random cases %s, worked case WA %.2f UA %.2f", exact ? "exact" : "MISMATCH", wa, ua)};
}

Verdict check_export() {
  data::SynthSpec spec;
  spec.n_utterances = 100;
  spec.seed = 8;
  const data::Dataset set = data::generate(spec);
  const model::PretrainModel pre = model::make_pretrain_model(model::ModelDims{}, 8);
  const model::StudentModel student = model::make_student(pre, {}, 8);
  const std::vector<model::Condition> conditions(model::missing_conditions().begin(),
                                                 model::missing_conditions().end());
  const std::string csv =
      evaluation::to_csv(evaluation::export_invariant_features(student, set, conditions));
  std::size_t rows = 0, columns = 0;
  bool rectangular = true;
  std::size_t begin = csv.find('\n') + 1;
  while (begin < csv.size()) {
    const std::size_t end = csv.find('\n', begin);
    const std::size_t cols =
        1 + static_cast<std::size_t>(std::count(csv.begin() + begin, csv.begin() + end, ','));
    if (rows == 0) columns = cols;
    rectangular = rectangular && cols == columns;
    ++rows;
    begin = end + 1;
  }
  return {"A8", "feature export shape", rows == 600 && columns == 385 && rectangular,
          fmt("%zu rows x %zu columns at default widths", rows, columns)};
}

struct SeedRun {
  std::uint64_t seed = 0;
  double pretrain_best_val_wa = 0.0;
  std::size_t pretrain_best_epoch = 0;
  std::vector<harness::AblationRow> rows;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"End-to-end acceptance run on the desk-scale synthetic configuration"};
  std::string config_path = "configs/desk.conf", work = "acceptance";
  app.add_option("-c,--config", config_path, "desk config");
  app.add_option("-w,--work", work, "scratch directory for datasets, checkpoints and reports");
  CLI11_PARSE(app, argc, argv);

  try {
    const config::RunConfig base = config::load(config_path);
    config::validate(base);
    const fs::path work_dir = work;
    nlohmann::json log = {{"config", config_path}, {"fingerprint", config::fingerprint(base)}};
    std::vector<Verdict> verdicts;

    verdicts.push_back(check_gradients(log));
    verdicts.push_back(check_cmd());

    const double cpu_start = cpu_seconds();
    const auto wall_start = std::chrono::steady_clock::now();
    std::vector<SeedRun> runs;
    bool teacher_frozen = true, reports_identical = true;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      config::RunConfig cfg = base;
      config::set(cfg, "seed", std::to_string(seed));
      const fs::path dir = work_dir / ("seed" + std::to_string(seed));
      cfg.dataset = dir / "synthetic.jsonl";
      cfg.checkpoints_dir = dir / "checkpoints";
      cfg.reports_dir = dir / "reports";
      data::write_jsonl(data::generate(cfg.synth), cfg.dataset);
      const harness::Splits splits = harness::split(harness::load_dataset(cfg), cfg);

      const training::PretrainResult pre =
          training::pretrain(cfg.dims, splits.train, splits.val, cfg.train);
      harness::save_pretrain(cfg.checkpoints_dir / "pretrain.ckpt", cfg, pre);
      SeedRun run{seed, pre.best_val_wa, pre.best_epoch, harness::run_ablation(cfg, splits, pre.model)};
      const fs::path ablation = cfg.reports_dir / "ablation.json";
      io::atomic_write(ablation, harness::ablation_json(run.rows, cfg).dump(2) + "\n");

      if (seed == 1) {
        model::PretrainModel stage1 = pre.model;
        nn::ParamList stage1_encoders;
        stage1.encoders.collect("", stage1_encoders);
        const std::vector<Tensor> before = snapshot(stage1_encoders);
        std::vector<std::string> dumps;
        for (int repeat = 0; repeat < 2; ++repeat) {
          training::IfmminResult r = training::train_ifmmin(pre.model, splits.train, splits.val, cfg.train);
          nn::ParamList teacher;
          r.teacher.collect(teacher);
          teacher_frozen = teacher_frozen && r.teacher.frozen && snapshot(teacher) == before;
          const auto report = evaluation::evaluate_conditions(r.model, splits.test, cfg.train.batch_size);
          dumps.push_back(harness::report_json(report, cfg, harness::trace_to_json(r.trace), {}).dump(2));
          harness::save_student(cfg.checkpoints_dir / ("student" + std::to_string(repeat) + ".ckpt"), cfg, r);
        }
        const std::string from_ablation =
            harness::report_json(run.rows[0].report, cfg, harness::trace_to_json(run.rows[0].trace), {})
                .dump(2);
        reports_identical = dumps[0] == dumps[1] && dumps[0] == from_ablation;
        io::atomic_write(cfg.reports_dir / "report.json", dumps[0] + "\n");
      }
      harness::write_manifest(cfg, "acceptance", {cfg.dataset, cfg.checkpoints_dir / "pretrain.ckpt", ablation});
      std::printf("seed %llu: pretrain val WA %.4f (epoch %zu);", static_cast<unsigned long long>(seed),
                  pre.best_val_wa, pre.best_epoch);
      for (const auto& row : run.rows) std::printf(" %s %.4f;", row.system.c_str(), row.report.average_wa);
      std::printf("\n");
      std::fflush(stdout);
      runs.push_back(std::move(run));
    }
    const double cpu = cpu_seconds() - cpu_start;
    const double wall = wall_seconds(wall_start);

    double worst_val = 1.0;
    for (const SeedRun& r : runs) worst_val = std::min(worst_val, r.pretrain_best_val_wa);
    verdicts.push_back({"A3", "Stage 1 sanity", worst_val >= 0.90 && cpu < 600.0,
                        fmt("lowest validation WA over 3 seeds %.4f; desk pipeline CPU %.0fs (wall %.0fs)",
                            worst_val, cpu, wall)});

    bool converged = true;
    std::string ratios;
    for (const SeedRun& r : runs) {
      const auto& trace = r.rows[0].trace;
      const double ratio = trace.back().inv / trace.front().inv;
      converged = converged && trace.size() == 40 && ratio <= 0.5;
      ratios += fmt(" %.3f", ratio);
    }
    verdicts.push_back({"A4", "invariance convergence", converged,
                        "L_inv epoch 40 / epoch 1 per seed:" + ratios});

    std::vector<double> mean(4, 0.0);
    for (const SeedRun& r : runs) {
      for (std::size_t i = 0; i < 4; ++i) mean[i] += r.rows[i].report.average_wa / 3.0;
    }
    const double margin = mean[0] - mean[3];
    const bool ordering = mean[0] >= mean[1] && mean[0] >= mean[2];
    verdicts.push_back({"A5", "imagination helps", margin >= 0.02 && ordering,
                        fmt("mean average WA: IF-MMIN %.4f, w/o L_inv %.4f, w/o cascaded input %.4f, "
                            "zero-fill %.4f; margin %+.4f (need >= 0.02), ordering %s",
                            mean[0], mean[1], mean[2], mean[3], margin, ordering ? "holds" : "violated")});

    verdicts.push_back(check_metrics());
    verdicts.push_back({"A7", "freeze and determinism", teacher_frozen && reports_identical,
                        fmt("teacher %s; report JSON across runs %s",
                            teacher_frozen ? "bitwise unchanged" : "CHANGED",
                            reports_identical ? "byte-identical" : "DIFFERS")});
    verdicts.push_back(check_export());

    std::sort(verdicts.begin(), verdicts.end(),
              [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
    bool all = true;
    for (const Verdict& v : verdicts) {
      std::printf("%s %s  %s: %s\n", v.id.c_str(), v.pass ? "PASS" : "FAIL", v.title.c_str(),
                  v.detail.c_str());
      log["criteria"].push_back({{"id", v.id}, {"title", v.title}, {"pass", v.pass}, {"detail", v.detail}});
      all = all && v.pass;
    }
    io::atomic_write(work_dir / "acceptance.json", log.dump(2) + "\n");
    return all ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance run failed: %s\n", e.what());
    return 2;
  }
}
