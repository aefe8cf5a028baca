#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "ifmmin/cmd.hpp"
#include "ifmmin/model.hpp"

namespace ifmmin::training {

using data::Dataset;
using data::RawUtterance;

struct LossWeights {
  double lambda1 = 1.0;     // L_img
  double lambda2 = 100.0;   // L_inv
  double lambda_cmd = 1.0;  // Stage 1 CMD term
};

struct Ablation {
  bool no_inv_loss = false;
  bool no_cascaded_input = false;
  bool no_ifim = false;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  double dropout = 0.5;
  double initial_lr = 0.0002;
  std::size_t epochs = 40;  // per fold
  std::size_t folds = 10;
  std::size_t fold = 0;
  cmd::CmdConfig cmd;
  bool cmd_sigmoid_squash = false;
  LossWeights weights;
  Ablation ablation;
  bool freeze_student_encoders = false;
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

model::StudentFlags student_flags(const Ablation& ablation);

// Constant for the first half of the run, then linear decay to 0 at the
// last epoch: lr * (E - epoch) / (E / 2). Epochs are 1-based.
double lr_schedule(std::size_t epoch, double initial_lr, std::size_t total_epochs = 40);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, Tensor> first;
  std::map<std::string, Tensor> second;
};

// One bias-corrected Adam update. grads[i] pairs with params[i]; a null
// gradient leaves that parameter and its moments untouched.
void adam_step(nn::ParamList& params, std::span<const Tensor* const> grads, AdamState& state,
               double lr);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Shuffled partition into `folds` parts; fold f tests on part f, validates
// on part f + 1 (mod folds) and trains on the rest.
std::vector<FoldSplit> kfold_split(std::size_t n, std::size_t folds, std::uint64_t seed);

Dataset select(const Dataset& all, const std::vector<std::size_t>& ids);

// Shuffled mini-batches; a trailing batch of one sample joins its predecessor
// so every batch has the two rows CMD needs.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double cls = 0.0;
  double cmd = 0.0;  // Stage 1 only
  double img = 0.0;  // Stage 2 only
  double inv = 0.0;  // Stage 2 only
  double total = 0.0;
  double train_wa = 0.0;
  double val_wa = 0.0;
};

struct PretrainLosses {
  double cls = 0.0;
  double cmd = 0.0;
  double total = 0.0;
};

struct PretrainStep {
  PretrainLosses losses;
  std::vector<Tensor> grads;  // aligned with PretrainModel::collect
  std::vector<std::size_t> predictions;
};

PretrainStep pretrain_step(std::span<const RawUtterance* const> batch, model::PretrainModel& net,
                           const TrainConfig& cfg, Rng& dropout_rng);

struct PretrainResult {
  model::PretrainModel model;  // best epoch on validation WA
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_val_wa = 0.0;
};

PretrainResult pretrain(const model::ModelDims& dims, const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg);

struct StepLosses {
  double cls = 0.0;
  double img = 0.0;
  double inv = 0.0;
  double total = 0.0;
};

struct IfmminStep {
  StepLosses losses;
  model::Condition condition;
  std::vector<Tensor> grads;  // aligned with trainable_params
  std::vector<std::size_t> predictions;
};

// Parameters updated in Stage 2: IF-IM and classifier, plus the student
// encoders unless freeze_student_encoders is set.
nn::ParamList trainable_params(model::StudentModel& student, const TrainConfig& cfg);

// One Stage 2 forward/backward on a full-modality batch masked by `condition`.
IfmminStep ifmmin_step(std::span<const RawUtterance* const> batch, model::Condition condition,
                       const model::Teacher& teacher, model::StudentModel& student,
                       const TrainConfig& cfg, Rng& dropout_rng);

// Same, with the condition drawn uniformly from condition_rng.
IfmminStep ifmmin_step(std::span<const RawUtterance* const> batch, const model::Teacher& teacher,
                       model::StudentModel& student, const TrainConfig& cfg, Rng& dropout_rng,
                       Rng& condition_rng);

struct IfmminResult {
  model::StudentModel model;  // best epoch on validation average WA
  model::Teacher teacher;
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_val_wa = 0.0;
};

IfmminResult train_ifmmin(const model::PretrainModel& pretrained, const Dataset& train,
                          const Dataset& val, const TrainConfig& cfg);

}  // namespace ifmmin::training
