#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ifmmin/training.hpp"

using namespace ifmmin;
using namespace ifmmin::training;
using model::Condition;

namespace {

data::SynthSpec tiny_spec(std::uint64_t seed = 1, std::size_t n = 40) {
  data::SynthSpec s;
  s.n_utterances = n;
  s.latent_dim = 4;
  s.seq_len_a = 3;
  s.seq_len_v = 4;
  s.seq_len_t = 3;
  s.dims = {5, 6, 7};
  s.seed = seed;
  return s;
}

model::ModelDims tiny_dims() {
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

TrainConfig tiny_cfg() {
  TrainConfig c;
  c.batch_size = 8;
  c.initial_lr = 1e-3;
  c.epochs = 4;
  c.folds = 4;
  c.seed = 3;
  return c;
}

std::vector<const data::RawUtterance*> ptrs(const data::Dataset& set) {
  std::vector<const data::RawUtterance*> out;
  for (const auto& u : set) out.push_back(&u);
  return out;
}

std::vector<Tensor> snapshot(nn::ParamList params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(*p.tensor);
  return out;
}

struct Fixture {
  data::Dataset set = data::generate(tiny_spec());
  model::PretrainModel pre = model::make_pretrain_model(tiny_dims(), 5);
  model::Teacher teacher = model::make_teacher(pre);
  model::StudentModel student = model::make_student(pre, {}, 6);
};

}  // namespace

TEST(SampleCondition, SixtyThousandDrawsAreUniformAndNeverFull) {
  Rng rng(1, "condition");
  std::map<std::string, int> counts;
  for (int i = 0; i < 60000; ++i) {
    const Condition c = model::sample_condition(rng);
    ASSERT_TRUE(c.legal());
    ASSERT_NE(c, Condition::full());
    ++counts[c.name()];
  }
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [name, n] : counts) EXPECT_NEAR(n, 10000, 400) << name;
}

TEST(SampleCondition, DeterministicPerSeed) {
  Rng a(9, "condition"), b(9, "condition");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(model::sample_condition(a), model::sample_condition(b));
}

TEST(ConditionNames, TableOrderAndParsing) {
  std::vector<std::string> names;
  for (const Condition& c : model::missing_conditions()) names.push_back(c.name());
  EXPECT_EQ(names, (std::vector<std::string>{"a", "v", "t", "av", "at", "vt"}));
  for (const auto& n : names) EXPECT_EQ(Condition::parse(n).name(), n);
  EXPECT_THROW(Condition::parse("avt"), ValidationError);
  EXPECT_THROW(Condition::parse(""), ValidationError);
  EXPECT_THROW(Condition::parse("ax"), ValidationError);
  EXPECT_THROW(Condition::parse("aa"), ValidationError);
}

TEST(ApplyMissing, TextOnlyZeroesAcousticAndVisual) {
  const data::Dataset set = data::generate(tiny_spec());
  const data::RawUtterance& u = set[0];
  const data::RawUtterance m = model::apply_missing(u, Condition::parse("t"));
  EXPECT_EQ(m[data::Modality::Acoustic], Tensor::zeros({1, 5}));
  EXPECT_EQ(m[data::Modality::Visual], Tensor::zeros({1, 6}));
  EXPECT_EQ(m[data::Modality::Textual], u[data::Modality::Textual]);
  EXPECT_EQ(m.label, u.label);
  EXPECT_EQ(m.id, u.id);
}

TEST(ApplyMissing, AcousticVisualKeepsBothAndIsIdempotent) {
  const data::Dataset set = data::generate(tiny_spec());
  const Condition av = Condition::parse("av");
  const data::RawUtterance once = model::apply_missing(set[1], av);
  EXPECT_EQ(once[data::Modality::Acoustic], set[1][data::Modality::Acoustic]);
  EXPECT_EQ(once[data::Modality::Visual], set[1][data::Modality::Visual]);
  EXPECT_EQ(once[data::Modality::Textual], Tensor::zeros({1, 7}));
  const data::RawUtterance twice = model::apply_missing(once, av);
  for (auto m : data::kModalities) EXPECT_EQ(twice[m], once[m]);
}

TEST(IfmminStep, TotalRecomposesFromTerms) {
  Fixture f;
  const TrainConfig cfg = tiny_cfg();
  const auto batch = ptrs(f.set);
  for (const Condition& c : model::missing_conditions()) {
    Rng drop(1, "dropout");
    const IfmminStep s = ifmmin_step(batch, c, f.teacher, f.student, cfg, drop);
    const double expected = s.losses.cls + cfg.weights.lambda1 * s.losses.img +
                            cfg.weights.lambda2 * s.losses.inv;
    EXPECT_NEAR(s.losses.total, expected, 1e-12 * std::max(1.0, expected)) << c.name();
    EXPECT_GT(s.losses.img, 0.0);
  }
}

TEST(IfmminStep, WithoutInvariantLossDropsThatTerm) {
  Fixture f;
  TrainConfig cfg = tiny_cfg();
  cfg.ablation.no_inv_loss = true;
  Rng drop(1, "dropout");
  const IfmminStep s = ifmmin_step(ptrs(f.set), Condition::parse("at"), f.teacher, f.student, cfg, drop);
  EXPECT_NEAR(s.losses.total, s.losses.cls + cfg.weights.lambda1 * s.losses.img, 1e-12);
}

TEST(IfmminStep, ZeroWeightsLeaveClassificationOnly) {
  Fixture f;
  TrainConfig cfg = tiny_cfg();
  cfg.weights.lambda1 = 0.0;
  cfg.weights.lambda2 = 0.0;
  Rng drop(1, "dropout");
  const IfmminStep s = ifmmin_step(ptrs(f.set), Condition::parse("v"), f.teacher, f.student, cfg, drop);
  EXPECT_EQ(s.losses.total, s.losses.cls);
}

TEST(IfmminStep, RejectsUnfrozenTeacherAndIllegalCondition) {
  Fixture f;
  const TrainConfig cfg = tiny_cfg();
  Rng drop(1, "dropout");
  EXPECT_THROW(ifmmin_step(ptrs(f.set), Condition::full(), f.teacher, f.student, cfg, drop),
               ValidationError);
  f.teacher.frozen = false;
  EXPECT_THROW(ifmmin_step(ptrs(f.set), Condition::parse("a"), f.teacher, f.student, cfg, drop),
               ValidationError);
}

TEST(IfmminStep, MaskedModalityNeverReachesTheStudent) {
  Fixture f;
  const TrainConfig cfg = tiny_cfg();
  data::Dataset altered = f.set;
  for (auto& u : altered) {
    for (double& v : u[data::Modality::Visual].data()) v = 100.0 + 3.0 * v;
  }
  const Condition c = Condition::parse("at");
  Rng d1(2, "dropout"), d2(2, "dropout");
  const IfmminStep a = ifmmin_step(ptrs(f.set), c, f.teacher, f.student, cfg, d1);
  const IfmminStep b = ifmmin_step(ptrs(altered), c, f.teacher, f.student, cfg, d2);
  EXPECT_EQ(a.losses.cls, b.losses.cls);
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_NE(a.losses.inv, b.losses.inv);
}

TEST(IfmminStep, FrozenEncodersAreLeftOutOfTheUpdate) {
  Fixture f;
  TrainConfig cfg = tiny_cfg();
  const std::size_t all = trainable_params(f.student, cfg).size();
  cfg.freeze_student_encoders = true;
  nn::ParamList head;
  f.student.collect_head(head);
  EXPECT_EQ(trainable_params(f.student, cfg).size(), head.size());
  EXPECT_LT(head.size(), all);
  Rng drop(1, "dropout");
  const IfmminStep s = ifmmin_step(ptrs(f.set), Condition::parse("a"), f.teacher, f.student, cfg, drop);
  EXPECT_EQ(s.grads.size(), head.size());
}

TEST(LrSchedule, ConstantThenLinearDecay) {
  EXPECT_DOUBLE_EQ(lr_schedule(1, 2e-4), 2e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(20, 2e-4), 2e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(30, 2e-4), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(40, 2e-4), 0.0);
  EXPECT_THROW(lr_schedule(0, 2e-4), ValidationError);
  EXPECT_THROW(lr_schedule(41, 2e-4), ValidationError);
  for (std::size_t e = 1; e < 40; ++e) EXPECT_GE(lr_schedule(e, 1.0), lr_schedule(e + 1, 1.0));
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor w = Tensor::filled({2, 3}, 0.5);
  nn::ParamList params{{"w", &w}};
  const Tensor g = Tensor::zeros({2, 3});
  const std::vector<const Tensor*> grads{&g};
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(params, grads, state, 0.1);
  EXPECT_EQ(w, Tensor::filled({2, 3}, 0.5));
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheGradientSign) {
  Tensor w({3}, {1.0, 1.0, 1.0});
  nn::ParamList params{{"w", &w}};
  const Tensor g({3}, {2.0, -0.5, 1e-3});
  const std::vector<const Tensor*> grads{&g};
  AdamState state;
  adam_step(params, grads, state, 0.01);
  EXPECT_NEAR(w[0], 0.99, 1e-8);
  EXPECT_NEAR(w[1], 1.01, 1e-8);
  EXPECT_NEAR(w[2], 0.99, 1e-7);
}

TEST(Adam, RejectsMismatchedGradients) {
  Tensor w = Tensor::zeros({2, 2});
  nn::ParamList params{{"w", &w}};
  const Tensor g = Tensor::zeros({4});
  const std::vector<const Tensor*> grads{&g};
  AdamState state;
  EXPECT_THROW(adam_step(params, grads, state, 0.1), ValidationError);
  EXPECT_THROW(adam_step(params, std::vector<const Tensor*>{}, state, 0.1), ValidationError);
}

TEST(Adam, NullGradientSkipsParameter) {
  Tensor w = Tensor::filled({2}, 1.0), v = Tensor::filled({2}, 1.0);
  nn::ParamList params{{"w", &w}, {"v", &v}};
  const Tensor g = Tensor::filled({2}, 1.0);
  const std::vector<const Tensor*> grads{nullptr, &g};
  AdamState state;
  adam_step(params, grads, state, 0.1);
  EXPECT_EQ(w, Tensor::filled({2}, 1.0));
  EXPECT_NE(v, Tensor::filled({2}, 1.0));
  EXPECT_EQ(state.first.count("w"), 0u);
}

TEST(KFold, PartsAreDisjointAndCoverEveryId) {
  for (std::size_t n : {10u, 37u, 100u}) {
    const auto splits = kfold_split(n, 10 > n ? n : 10, 4);
    std::multiset<std::size_t> tests;
    for (const FoldSplit& s : splits) {
      std::set<std::size_t> seen;
      for (auto* part : {&s.train, &s.val, &s.test}) {
        for (std::size_t id : *part) EXPECT_TRUE(seen.insert(id).second);
      }
      EXPECT_EQ(seen.size(), n);
      tests.insert(s.test.begin(), s.test.end());
    }
    EXPECT_EQ(tests.size(), n);
    EXPECT_EQ(std::set<std::size_t>(tests.begin(), tests.end()).size(), n);
  }
}

TEST(KFold, ValidationIsNextFoldsTestPart) {
  const auto splits = kfold_split(50, 5, 2);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(splits[f].val, splits[(f + 1) % 5].test);
}

TEST(KFold, DeterministicAndSeedSensitive) {
  EXPECT_EQ(kfold_split(60, 10, 1)[0].test, kfold_split(60, 10, 1)[0].test);
  EXPECT_NE(kfold_split(60, 10, 1)[0].test, kfold_split(60, 10, 2)[0].test);
}

TEST(KFold, RejectsTooFewSamplesOrFolds) {
  EXPECT_THROW(kfold_split(5, 10, 1), ValidationError);
  EXPECT_THROW(kfold_split(50, 2, 1), ValidationError);
  const auto one_each = kfold_split(4, 4, 1);
  for (const FoldSplit& s : one_each) EXPECT_EQ(s.test.size(), 1u);
}

TEST(MakeBatches, PartitionShuffledIdsWithoutSingletons) {
  Rng rng(1, "batches");
  for (std::size_t n : {1u, 2u, 9u, 17u, 64u}) {
    const auto batches = make_batches(n, 8, rng);
    std::vector<std::size_t> all;
    for (const auto& b : batches) {
      if (n > 1) EXPECT_GE(b.size(), 2u);
      EXPECT_LE(b.size(), 9u);
      all.insert(all.end(), b.begin(), b.end());
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(n);
    for (std::size_t i = 0; i < n; ++i) expected[i] = i;
    EXPECT_EQ(all, expected);
  }
}

TEST(PretrainStep, TotalIsClassificationPlusWeightedCmd) {
  const data::Dataset set = data::generate(tiny_spec());
  model::PretrainModel net = model::make_pretrain_model(tiny_dims(), 2);
  TrainConfig cfg = tiny_cfg();
  cfg.weights.lambda_cmd = 0.7;
  Rng drop(1, "dropout");
  const PretrainStep s = pretrain_step(ptrs(set), net, cfg, drop);
  EXPECT_GT(s.losses.cmd, 0.0);
  EXPECT_NEAR(s.losses.total, s.losses.cls + 0.7 * s.losses.cmd, 1e-12);
  cfg.weights.lambda_cmd = 0.0;
  Rng drop2(1, "dropout");
  const PretrainStep z = pretrain_step(ptrs(set), net, cfg, drop2);
  EXPECT_EQ(z.losses.cmd, 0.0);
  EXPECT_EQ(z.losses.total, z.losses.cls);
}

TEST(Pretrain, ShortRunIsReproducibleAndKeepsBestEpoch) {
  const data::Dataset set = data::generate(tiny_spec(2, 60));
  const auto split = kfold_split(set.size(), 4, 1)[0];
  const TrainConfig cfg = tiny_cfg();
  const PretrainResult a = pretrain(tiny_dims(), select(set, split.train), select(set, split.val), cfg);
  const PretrainResult b = pretrain(tiny_dims(), select(set, split.train), select(set, split.val), cfg);
  ASSERT_EQ(a.trace.size(), cfg.epochs);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].total, b.trace[i].total);
    EXPECT_EQ(a.trace[i].val_wa, b.trace[i].val_wa);
    EXPECT_LE(a.trace[i].val_wa, a.best_val_wa);
  }
  EXPECT_EQ(a.trace[a.best_epoch - 1].val_wa, a.best_val_wa);
  model::PretrainModel ma = a.model, mb = b.model;
  EXPECT_EQ(snapshot([&] { nn::ParamList p; ma.collect(p); return p; }()),
            snapshot([&] { nn::ParamList p; mb.collect(p); return p; }()));
}

TEST(TrainIfmmin, TeacherStaysBitwiseEqualToStageOneEncoders) {
  const data::Dataset set = data::generate(tiny_spec(4, 60));
  const auto split = kfold_split(set.size(), 4, 1)[0];
  const model::PretrainModel pre = model::make_pretrain_model(tiny_dims(), 7);
  const TrainConfig cfg = tiny_cfg();
  const IfmminResult r = train_ifmmin(pre, select(set, split.train), select(set, split.val), cfg);
  model::PretrainModel copy = pre;
  model::Teacher teacher = r.teacher;
  nn::ParamList before, after;
  copy.encoders.collect("", before);
  teacher.collect(after);
  EXPECT_EQ(snapshot(before), snapshot(after));
  EXPECT_TRUE(teacher.frozen);
}

TEST(TrainIfmmin, IdenticalRunsGiveIdenticalTraces) {
  const data::Dataset set = data::generate(tiny_spec(4, 60));
  const auto split = kfold_split(set.size(), 4, 1)[0];
  const model::PretrainModel pre = model::make_pretrain_model(tiny_dims(), 7);
  const TrainConfig cfg = tiny_cfg();
  const IfmminResult a = train_ifmmin(pre, select(set, split.train), select(set, split.val), cfg);
  const IfmminResult b = train_ifmmin(pre, select(set, split.train), select(set, split.val), cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].total, b.trace[i].total);
    EXPECT_EQ(a.trace[i].img, b.trace[i].img);
    EXPECT_EQ(a.trace[i].val_wa, b.trace[i].val_wa);
  }
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(a.trace[a.best_epoch - 1].val_wa, a.best_val_wa);
}

TEST(TrainIfmmin, AblationsChangeOnlyTheirOwnTerms) {
  const data::Dataset set = data::generate(tiny_spec(4, 60));
  const auto split = kfold_split(set.size(), 4, 1)[0];
  const model::PretrainModel pre = model::make_pretrain_model(tiny_dims(), 7);
  TrainConfig cfg = tiny_cfg();
  cfg.epochs = 2;
  cfg.ablation.no_ifim = true;
  const IfmminResult r = train_ifmmin(pre, select(set, split.train), select(set, split.val), cfg);
  for (const EpochRecord& e : r.trace) {
    EXPECT_EQ(e.img, 0.0);
    EXPECT_GT(e.inv, 0.0);
  }
  EXPECT_TRUE(r.model.imagination.stages.empty());
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig c = tiny_cfg();
  EXPECT_NO_THROW(validate(c));
  c.batch_size = 1;
  EXPECT_THROW(validate(c), ValidationError);
  c = tiny_cfg();
  c.fold = c.folds;
  EXPECT_THROW(validate(c), ValidationError);
  c = tiny_cfg();
  c.weights.lambda2 = -1.0;
  EXPECT_THROW(validate(c), ValidationError);
  c = tiny_cfg();
  c.dropout = 1.0;
  EXPECT_THROW(validate(c), ValidationError);
}
