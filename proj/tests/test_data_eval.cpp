#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "ifmmin/evaluation.hpp"
#include "ifmmin/io.hpp"
#include "ifmmin/metrics.hpp"

using namespace ifmmin;
using data::Modality;

namespace {

data::SynthSpec small_spec(std::uint64_t seed = 1, std::size_t n = 30) {
  data::SynthSpec s;
  s.n_utterances = n;
  s.latent_dim = 6;
  s.seq_len_a = 3;
  s.seq_len_v = 4;
  s.seq_len_t = 5;
  s.dims = {5, 6, 7};
  s.seed = seed;
  return s;
}

model::ModelDims small_dims() {
  model::ModelDims d;
  d.features = {5, 6, 7};
  d.hidden = 4;
  d.invariant = 4;
  d.text_filters = 3;
  d.ae_widths = {12, 8, 4};
  d.autoencoders = 2;
  d.classifier_hidden = 6;
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ifmmin_test_data_eval";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::vector<std::size_t>> oracle_confusion(const std::vector<std::size_t>& preds,
                                                       const std::vector<std::size_t>& labels,
                                                       std::size_t classes) {
  std::vector<std::vector<std::size_t>> m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++m[labels[i]][preds[i]];
  return m;
}

// Student whose logits ignore the input and always favour `label`.
model::StudentModel constant_student(std::size_t label) {
  const model::PretrainModel pre = model::make_pretrain_model(small_dims(), 1);
  model::StudentModel s = model::make_student(pre, {}, 2);
  for (nn::Linear& layer : s.classifier.layers) {
    layer.weight = Tensor::zeros(layer.weight.shape());
    layer.bias = Tensor::zeros(layer.bias.shape());
  }
  s.classifier.layers[2].bias[label] = 1.0;
  return s;
}

std::vector<Tensor> params_of(model::StudentModel s) {
  nn::ParamList p;
  s.collect(p);
  std::vector<Tensor> out;
  for (const auto& r : p) out.push_back(*r.tensor);
  return out;
}

}  // namespace

TEST(Generator, ZeroNoiseRepeatsTheCleanFrame) {
  data::SynthSpec s = small_spec();
  s.noise_scale = 0.0;
  for (const auto& u : data::generate(s)) {
    for (Modality m : data::kModalities) {
      const Tensor& x = u[m];
      for (std::size_t t = 1; t < x.dim(0); ++t) {
        for (std::size_t c = 0; c < x.dim(1); ++c) ASSERT_EQ(x.at(t, c), x.at(0, c));
      }
    }
  }
}

TEST(Generator, SameSeedIsBitwiseIdenticalAndSeedMatters) {
  const auto a = data::generate(small_spec(5)), b = data::generate(small_spec(5));
  const auto c = data::generate(small_spec(6));
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].label, b[i].label);
    for (Modality m : data::kModalities) {
      EXPECT_EQ(a[i][m], b[i][m]);
      differs |= !(a[i][m] == c[i][m]);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Generator, ShapesFollowSettings) {
  const auto set = data::generate(small_spec());
  ASSERT_EQ(set.size(), 30u);
  for (const auto& u : set) {
    EXPECT_EQ(u[Modality::Acoustic].shape(), (Shape{3, 5}));
    EXPECT_EQ(u[Modality::Visual].shape(), (Shape{4, 6}));
    EXPECT_EQ(u[Modality::Textual].shape(), (Shape{5, 7}));
    EXPECT_NO_THROW(data::validate(u, {5, 6, 7}, 4));
  }
}

TEST(Generator, ClassesAreLinearlySeparableFromMeanAcousticFrames) {
  data::SynthSpec s;
  s.seed = 11;
  const auto set = data::generate(s);
  const std::size_t n = set.size(), d = s.dims.acoustic, classes = s.n_classes;
  const std::size_t n_fit = 1500;
  Eigen::MatrixXd X(n, d + 1);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& a = set[i][Modality::Acoustic];
    for (std::size_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < a.dim(0); ++t) mean += a.at(t, c);
      X(i, c) = mean / static_cast<double>(a.dim(0));
    }
    X(i, d) = 1.0;
    Y(i, set[i].label) = 1.0;
  }
  const Eigen::MatrixXd W =
      X.topRows(n_fit).colPivHouseholderQr().solve(Y.topRows(n_fit));
  const Eigen::MatrixXd scores = X.bottomRows(n - n_fit) * W;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    correct += static_cast<std::size_t>(best) == set[n_fit + i].label;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(n - n_fit), 0.95);
}

TEST(Generator, LabelFrequenciesMatchPriors) {
  data::SynthSpec s = small_spec(3, 4000);
  const auto set = data::generate(s);
  std::vector<double> counts(4, 0.0);
  for (const auto& u : set) counts[u.label] += 1.0;
  const double n = static_cast<double>(set.size());
  for (std::size_t c = 0; c < 4; ++c) {
    const double p = s.class_priors[c];
    EXPECT_NEAR(counts[c] / n, p, 3.0 * std::sqrt(p * (1.0 - p) / n)) << c;
  }
}

TEST(Generator, RejectsInvalidSpecs) {
  data::SynthSpec s = small_spec();
  s.class_priors = {0.5, 0.5, 0.5, -0.5};
  EXPECT_THROW(data::generate(s), ValidationError);
  s = small_spec();
  s.class_priors = {0.3, 0.3, 0.3};
  EXPECT_THROW(data::generate(s), ValidationError);
  s = small_spec();
  s.class_priors = {0.3, 0.3, 0.3, 0.3};
  EXPECT_THROW(data::generate(s), ValidationError);
  s = small_spec();
  s.n_utterances = 0;
  EXPECT_THROW(data::generate(s), ValidationError);
  s = small_spec();
  s.seq_len_v = 0;
  EXPECT_THROW(data::generate(s), ValidationError);
}

TEST(Jsonl, RoundTripIsExact) {
  const auto set = data::generate(small_spec(8));
  const auto path = temp_path("round.jsonl");
  data::write_jsonl(set, path);
  const auto back = data::read_jsonl(path);
  ASSERT_EQ(back.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back[i].id, set[i].id);
    EXPECT_EQ(back[i].label, set[i].label);
    for (Modality m : data::kModalities) EXPECT_EQ(back[i][m], set[i][m]);
  }
  EXPECT_EQ(data::git_blob_hash(path).size(), 40u);
}

TEST(Jsonl, MalformedLinesNameTheLocation) {
  const auto path = temp_path("bad.jsonl");
  io::atomic_write(path, R"({"id":"x","label":0,"a":[[1,2]],"v":[[1],[2,3]],"t":[[1]]})" "\n");
  try {
    data::read_jsonl(path);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(data::read_jsonl(temp_path("missing.jsonl")), ValidationError);
}

TEST(GitBlobHash, MatchesKnownObjectId) {
  const auto path = temp_path("hello.txt");
  io::atomic_write(path, "hello\n");
  EXPECT_EQ(data::git_blob_hash(path), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Metrics, WorkedExample) {
  const std::vector<std::size_t> labels = {0, 0, 0, 1, 1, 2};
  const std::vector<std::size_t> preds = {0, 0, 1, 1, 0, 2};
  EXPECT_DOUBLE_EQ(metrics::weighted_accuracy(preds, labels), 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(metrics::unweighted_accuracy(preds, labels), (2.0 / 3.0 + 0.5 + 1.0) / 3.0);
}

TEST(Metrics, SmallWorkedCases) {
  const std::vector<std::size_t> l1 = {0, 0, 1, 1}, p1 = {0, 0, 1, 0};
  EXPECT_EQ(metrics::weighted_accuracy(p1, l1), 0.75);
  const std::vector<std::size_t> l2 = {0, 0, 0, 1}, p2 = {0, 0, 0, 0};
  EXPECT_EQ(metrics::weighted_accuracy(p2, l2), 0.75);
  EXPECT_EQ(metrics::unweighted_accuracy(p2, l2), 0.5);
  EXPECT_EQ(metrics::weighted_accuracy(l2, l2), 1.0);
  EXPECT_EQ(metrics::unweighted_accuracy(l2, l2), 1.0);
}

TEST(Metrics, AllOneClassPrediction) {
  const std::vector<std::size_t> labels = {0, 1, 1, 2, 3, 3, 3, 3};
  const std::vector<std::size_t> preds(8, 3);
  EXPECT_DOUBLE_EQ(metrics::weighted_accuracy(preds, labels), 0.5);
  EXPECT_DOUBLE_EQ(metrics::unweighted_accuracy(preds, labels), 0.25);
}

TEST(Metrics, RandomCasesMatchConfusionOracle) {
  Rng rng(1, "metrics");
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(60), classes = 2 + rng.below(5);
    std::vector<std::size_t> labels(n), preds(n);
    for (std::size_t j = 0; j < n; ++j) {
      labels[j] = rng.below(classes);
      preds[j] = rng.below(classes);
    }
    const auto m = oracle_confusion(preds, labels, classes);
    double diag = 0.0, recall = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      diag += static_cast<double>(m[c][c]);
      std::size_t row = 0;
      for (std::size_t x : m[c]) row += x;
      if (row == 0) continue;
      recall += static_cast<double>(m[c][c]) / static_cast<double>(row);
      ++present;
    }
    ASSERT_NEAR(metrics::weighted_accuracy(preds, labels), diag / static_cast<double>(n), 1e-15);
    ASSERT_NEAR(metrics::unweighted_accuracy(preds, labels), recall / static_cast<double>(present),
                1e-15);
    const auto cm = metrics::confusion_matrix(preds, labels);
    for (std::size_t r = 0; r < cm.size(); ++r) {
      for (std::size_t c = 0; c < cm.size(); ++c) ASSERT_EQ(cm[r][c], m[r][c]);
    }
  }
}

TEST(Metrics, BalancedClassesGiveEqualWaAndUaUnderUniformErrors) {
  const std::vector<std::size_t> labels = {0, 0, 1, 1, 2, 2, 3, 3};
  const std::vector<std::size_t> preds = {0, 1, 1, 2, 2, 3, 3, 0};
  EXPECT_DOUBLE_EQ(metrics::weighted_accuracy(preds, labels),
                   metrics::unweighted_accuracy(preds, labels));
}

TEST(Metrics, RejectsLengthMismatchAndEmptyInput) {
  const std::vector<std::size_t> a = {0, 1}, b = {0};
  EXPECT_THROW(metrics::weighted_accuracy(a, b), ValidationError);
  EXPECT_THROW(metrics::unweighted_accuracy(a, b), ValidationError);
  EXPECT_THROW(metrics::weighted_accuracy({}, {}), ValidationError);
}

TEST(EvaluateConditions, ConstantModelScoresLabelFrequency) {
  const auto test = data::generate(small_spec(2, 50));
  const model::StudentModel s = constant_student(2);
  std::size_t twos = 0;
  std::set<std::size_t> present;
  for (const auto& u : test) {
    twos += u.label == 2;
    present.insert(u.label);
  }
  const auto r = evaluation::evaluate_conditions(s, test, 7);
  ASSERT_EQ(r.conditions.size(), 6u);
  for (const auto& c : r.conditions) {
    EXPECT_DOUBLE_EQ(c.wa, static_cast<double>(twos) / 50.0) << c.condition;
    EXPECT_DOUBLE_EQ(c.ua, 1.0 / static_cast<double>(present.size())) << c.condition;
  }
}

TEST(EvaluateConditions, AveragesAreMeansAndParametersAreUntouched) {
  const auto test = data::generate(small_spec(3, 40));
  const model::PretrainModel pre = model::make_pretrain_model(small_dims(), 4);
  const model::StudentModel s = model::make_student(pre, {}, 5);
  const auto before = params_of(s);
  const auto r = evaluation::evaluate_conditions(s, test, 16);
  EXPECT_EQ(params_of(s), before);
  double wa = 0.0, ua = 0.0;
  for (const auto& c : r.conditions) {
    wa += c.wa;
    ua += c.ua;
  }
  EXPECT_NEAR(r.average_wa, wa / 6.0, 1e-15);
  EXPECT_NEAR(r.average_ua, ua / 6.0, 1e-15);
  const auto again = evaluation::evaluate_conditions(s, test, 40);
  EXPECT_EQ(again.average_wa, r.average_wa);
  EXPECT_THROW(evaluation::evaluate_conditions(s, {}), ValidationError);
}

TEST(EvaluateConditions, JsonRoundTrip) {
  const auto test = data::generate(small_spec(3, 20));
  const auto r = evaluation::evaluate_conditions(constant_student(0), test);
  const auto back = evaluation::report_from_json(evaluation::to_json(r));
  ASSERT_EQ(back.conditions.size(), 6u);
  EXPECT_EQ(back.conditions[3].condition, "av");
  EXPECT_EQ(back.average_wa, r.average_wa);
  EXPECT_EQ(back.average_ua, r.average_ua);
}

TEST(ExportFeatures, DefaultSizesGive600By385) {
  data::SynthSpec spec;
  spec.n_utterances = 100;
  const auto set = data::generate(spec);
  const model::PretrainModel pre = model::make_pretrain_model(model::ModelDims{}, 1);
  const model::StudentModel s = model::make_student(pre, {}, 2);
  const std::vector<model::Condition> conds(model::missing_conditions().begin(),
                                            model::missing_conditions().end());
  const auto rows = evaluation::export_invariant_features(s, set, conds);
  ASSERT_EQ(rows.size(), 600u);
  for (const auto& r : rows) EXPECT_EQ(r.values.size(), 384u);
  EXPECT_EQ(rows[0].condition, "a");
  EXPECT_EQ(rows[599].condition, "vt");

  const std::string csv = evaluation::to_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 384) << lines;
    if (lines == 0) {
      EXPECT_EQ(line.substr(0, 19), "condition,H_0,H_1,H");
      EXPECT_EQ(line.substr(line.size() - 6), ",H_383");
    }
    ++lines;
  }
  EXPECT_EQ(lines, 601u);
  EXPECT_EQ(evaluation::to_csv(evaluation::export_invariant_features(s, set, conds)), csv);
}

TEST(ExportFeatures, RowsMatchEncoderOutputOnMaskedInput) {
  const auto set = data::generate(small_spec(4, 5));
  const model::PretrainModel pre = model::make_pretrain_model(small_dims(), 1);
  const model::StudentModel s = model::make_student(pre, {}, 2);
  const model::Condition c = model::Condition::parse("vt");
  const auto rows = evaluation::export_invariant_features(s, set, {c});
  ASSERT_EQ(rows.size(), 5u);
  const data::RawUtterance masked = model::apply_missing(set[2], c);
  const data::RawUtterance* one[] = {&masked};
  ad::Graph g;
  nn::Context ctx{g, false, false};
  const Tensor H = model::encode(ctx, s.encoders, one).H.value();
  for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(rows[2].values[j], H[j], 1e-12);
}
