#include "ifmmin/training.hpp"

#include <cmath>
#include <numeric>

#include "ifmmin/evaluation.hpp"
#include "ifmmin/metrics.hpp"

namespace ifmmin::training {

using ad::Var;

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 2) throw ValidationError("batch_size must be >= 2");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ValidationError("dropout must be in [0, 1)");
  if (!(cfg.initial_lr > 0.0)) throw ValidationError("initial_lr must be positive");
  if (cfg.epochs == 0) throw ValidationError("epochs_per_fold must be positive");
  if (cfg.folds < 3) throw ValidationError("folds must be >= 3");
  if (cfg.fold >= cfg.folds) throw ValidationError("fold must be < folds");
  if (cfg.cmd.max_order < 2) throw ValidationError("cmd_K must be >= 2");
  if (cfg.weights.lambda1 < 0.0 || cfg.weights.lambda2 < 0.0 || cfg.weights.lambda_cmd < 0.0) {
    throw ValidationError("loss weights must be non-negative");
  }
}

model::StudentFlags student_flags(const Ablation& ablation) {
  return {!ablation.no_cascaded_input, !ablation.no_ifim};
}

double lr_schedule(std::size_t epoch, double initial_lr, std::size_t total_epochs) {
  if (epoch < 1 || epoch > total_epochs) {
    throw ValidationError("lr_schedule: epoch " + std::to_string(epoch) + " outside 1.." +
                          std::to_string(total_epochs));
  }
  const double half = static_cast<double>(total_epochs) / 2.0;
  if (static_cast<double>(epoch) <= half) return initial_lr;
  return initial_lr * (static_cast<double>(total_epochs) - static_cast<double>(epoch)) / half;
}

void adam_step(nn::ParamList& params, std::span<const Tensor* const> grads, AdamState& state,
               double lr) {
  if (grads.size() != params.size()) {
    throw ValidationError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] != nullptr && grads[i]->shape() != params[i].tensor->shape()) {
      throw ValidationError("adam_step: gradient " + to_string(grads[i]->shape()) +
                            " does not match parameter " + params[i].name + " " +
                            to_string(params[i].tensor->shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr) continue;
    Tensor& p = *params[i].tensor;
    const Tensor& g = *grads[i];
    auto [m_it, m_new] = state.first.try_emplace(params[i].name, p.shape());
    auto [v_it, v_new] = state.second.try_emplace(params[i].name, p.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

std::vector<FoldSplit> kfold_split(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 3) throw ValidationError("kfold_split: folds must be >= 3");
  if (n < folds) {
    throw ValidationError("kfold_split: " + std::to_string(n) + " samples for " +
                          std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed, "kfold");
  shuffle(ids, rng);

  std::vector<std::vector<std::size_t>> parts(folds);
  for (std::size_t f = 0, start = 0; f < folds; ++f) {
    const std::size_t size = n / folds + (f < n % folds ? 1 : 0);
    parts[f].assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                    ids.begin() + static_cast<std::ptrdiff_t>(start + size));
    start += size;
  }
  std::vector<FoldSplit> out(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t val_part = (f + 1) % folds;
    out[f].test = parts[f];
    out[f].val = parts[val_part];
    for (std::size_t p = 0; p < folds; ++p) {
      if (p == f || p == val_part) continue;
      out[f].train.insert(out[f].train.end(), parts[p].begin(), parts[p].end());
    }
  }
  return out;
}

Dataset select(const Dataset& all, const std::vector<std::size_t>& ids) {
  Dataset out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(all.at(id));
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start == 1 && !batches.empty()) {
      batches.back().push_back(order[start]);
      break;
    }
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

std::vector<Tensor> collect_grads(const ad::Gradients& grads, const nn::ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const nn::ParamRef& p : params) {
    const Tensor* g = grads.of_param(*p.tensor);
    out.push_back(g ? *g : Tensor::zeros(p.tensor->shape()));
  }
  return out;
}

std::vector<const Tensor*> pointers(const std::vector<Tensor>& grads) {
  std::vector<const Tensor*> out;
  for (const Tensor& g : grads) out.push_back(&g);
  return out;
}

std::vector<const RawUtterance*> gather(const Dataset& set, const std::vector<std::size_t>& ids) {
  std::vector<const RawUtterance*> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(&set[id]);
  return out;
}

std::size_t count_correct(const std::vector<std::size_t>& preds,
                          std::span<const RawUtterance* const> batch) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == batch[i]->label;
  return correct;
}

}  // namespace

PretrainStep pretrain_step(std::span<const RawUtterance* const> batch, model::PretrainModel& net,
                           const TrainConfig& cfg, Rng& dropout_rng) {
  ad::Graph g;
  nn::Context ctx{g, true, true, cfg.dropout, &dropout_rng};
  model::PretrainForward fwd = model::pretrain_forward(ctx, net, batch);
  Var cls = ad::softmax_cross_entropy(fwd.logits, model::labels_of(batch));
  Var total = cls;
  PretrainStep out;
  if (cfg.weights.lambda_cmd > 0.0) {
    std::array<Var, 3> feats = fwd.encoded.invariant;
    if (cfg.cmd_sigmoid_squash) {
      for (Var& f : feats) f = ad::sigmoid(f);
    }
    Var cmd_term = cmd::cmd_loss(feats[0], feats[1], feats[2], cfg.cmd);
    out.losses.cmd = cmd_term.value().item();
    total = cls + ad::scale(cmd_term, cfg.weights.lambda_cmd);
  }
  out.losses.cls = cls.value().item();
  out.losses.total = total.value().item();
  nn::ParamList params;
  net.collect(params);
  out.grads = collect_grads(g.backward(total), params);
  out.predictions = model::argmax_rows(fwd.logits.value());
  return out;
}

PretrainResult pretrain(const model::ModelDims& dims, const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg) {
  validate(cfg);
  if (train.empty()) throw ValidationError("pretrain: empty training set");
  for (const RawUtterance& u : train) data::validate(u, dims.features, dims.classes);

  PretrainResult result;
  model::PretrainModel net = model::make_pretrain_model(dims, cfg.seed);
  Rng dropout_rng(cfg.seed, "dropout.stage1");
  Rng shuffle_rng(cfg.seed, "shuffle.stage1");
  AdamState adam;
  result.model = net;
  result.best_val_wa = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_schedule(epoch, cfg.initial_lr, cfg.epochs);
    std::size_t correct = 0, seen = 0;
    const auto batches = make_batches(train.size(), cfg.batch_size, shuffle_rng);
    for (const auto& ids : batches) {
      const auto batch = gather(train, ids);
      PretrainStep step = pretrain_step(batch, net, cfg, dropout_rng);
      nn::ParamList params;
      net.collect(params);
      adam_step(params, pointers(step.grads), adam, rec.lr);
      rec.cls += step.losses.cls;
      rec.cmd += step.losses.cmd;
      rec.total += step.losses.total;
      correct += count_correct(step.predictions, batch);
      seen += batch.size();
    }
    const double nb = static_cast<double>(batches.size());
    rec.cls /= nb;
    rec.cmd /= nb;
    rec.total /= nb;
    rec.train_wa = static_cast<double>(correct) / static_cast<double>(seen);
    rec.val_wa = val.empty() ? rec.train_wa : evaluation::evaluate_full(net, val, cfg.batch_size);
    if (rec.val_wa > result.best_val_wa) {
      result.best_val_wa = rec.val_wa;
      result.best_epoch = epoch;
      result.model = net;
    }
    result.trace.push_back(rec);
  }
  return result;
}

nn::ParamList trainable_params(model::StudentModel& student, const TrainConfig& cfg) {
  nn::ParamList params;
  if (!cfg.freeze_student_encoders) student.collect_encoders(params);
  student.collect_head(params);
  return params;
}

IfmminStep ifmmin_step(std::span<const RawUtterance* const> batch, model::Condition condition,
                       const model::Teacher& teacher, model::StudentModel& student,
                       const TrainConfig& cfg, Rng& dropout_rng) {
  if (!teacher.frozen) throw ValidationError("ifmmin_step: teacher parameters must be frozen");
  if (!condition.legal()) {
    throw ValidationError("ifmmin_step: '" + condition.name() + "' is not a missing condition");
  }
  if (batch.empty()) throw ValidationError("ifmmin_step: empty batch");

  std::vector<RawUtterance> masked;
  masked.reserve(batch.size());
  for (const RawUtterance* u : batch) masked.push_back(model::apply_missing(*u, condition));
  std::vector<const RawUtterance*> masked_ptrs;
  for (const RawUtterance& u : masked) masked_ptrs.push_back(&u);

  ad::Graph g;
  nn::Context head_ctx{g, true, true, cfg.dropout, &dropout_rng};
  nn::Context encoder_ctx = head_ctx;
  encoder_ctx.trainable = !cfg.freeze_student_encoders;
  model::StudentForward fwd = model::student_forward(encoder_ctx, head_ctx, student, masked_ptrs);

  nn::Context teacher_ctx{g, false, false};
  model::Encoded targets = model::encode(teacher_ctx, teacher.encoders, batch);

  Var cls = ad::softmax_cross_entropy(fwd.logits, model::labels_of(batch));
  Var inv = ad::rmse(targets.H, fwd.encoded.H);
  Var total = cls;
  IfmminStep out;
  out.condition = condition;
  if (student.flags.use_imagination) {
    Var img = ad::rmse(targets.h, fwd.imagination.imagined);
    out.losses.img = img.value().item();
    total = total + ad::scale(img, cfg.weights.lambda1);
  }
  if (!cfg.ablation.no_inv_loss) total = total + ad::scale(inv, cfg.weights.lambda2);
  out.losses.cls = cls.value().item();
  out.losses.inv = inv.value().item();
  out.losses.total = total.value().item();

  nn::ParamList params = trainable_params(student, cfg);
  out.grads = collect_grads(g.backward(total), params);
  out.predictions = model::argmax_rows(fwd.logits.value());
  return out;
}

IfmminStep ifmmin_step(std::span<const RawUtterance* const> batch, const model::Teacher& teacher,
                       model::StudentModel& student, const TrainConfig& cfg, Rng& dropout_rng,
                       Rng& condition_rng) {
  return ifmmin_step(batch, model::sample_condition(condition_rng), teacher, student, cfg,
                     dropout_rng);
}

IfmminResult train_ifmmin(const model::PretrainModel& pretrained, const Dataset& train,
                          const Dataset& val, const TrainConfig& cfg) {
  validate(cfg);
  if (train.empty()) throw ValidationError("train_ifmmin: empty training set");
  for (const RawUtterance& u : train) {
    data::validate(u, pretrained.dims.features, pretrained.dims.classes);
  }

  IfmminResult result;
  result.teacher = model::make_teacher(pretrained);
  model::StudentModel student =
      model::make_student(pretrained, student_flags(cfg.ablation), cfg.seed);
  Rng dropout_rng(cfg.seed, "dropout.stage2");
  Rng shuffle_rng(cfg.seed, "shuffle.stage2");
  Rng condition_rng(cfg.seed, "condition.stage2");
  AdamState adam;
  result.model = student;
  result.best_val_wa = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_schedule(epoch, cfg.initial_lr, cfg.epochs);
    std::size_t correct = 0, seen = 0;
    const auto batches = make_batches(train.size(), cfg.batch_size, shuffle_rng);
    for (const auto& ids : batches) {
      const auto batch = gather(train, ids);
      IfmminStep step =
          ifmmin_step(batch, result.teacher, student, cfg, dropout_rng, condition_rng);
      nn::ParamList params = trainable_params(student, cfg);
      adam_step(params, pointers(step.grads), adam, rec.lr);
      rec.cls += step.losses.cls;
      rec.img += step.losses.img;
      rec.inv += step.losses.inv;
      rec.total += step.losses.total;
      correct += count_correct(step.predictions, batch);
      seen += batch.size();
    }
    const double nb = static_cast<double>(batches.size());
    rec.cls /= nb;
    rec.img /= nb;
    rec.inv /= nb;
    rec.total /= nb;
    rec.train_wa = static_cast<double>(correct) / static_cast<double>(seen);
    rec.val_wa = val.empty() ? rec.train_wa
                             : evaluation::evaluate_conditions(student, val, cfg.batch_size).average_wa;
    if (rec.val_wa > result.best_val_wa) {
      result.best_val_wa = rec.val_wa;
      result.best_epoch = epoch;
      result.model = student;
    }
    result.trace.push_back(rec);
  }
  return result;
}

}  // namespace ifmmin::training
