#include "ifmmin/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ifmmin/cmd.hpp"
#include "ifmmin/ifim.hpp"
#include "ifmmin/model.hpp"

namespace ifmmin::gradcheck {

namespace {

using ad::Graph;
using ad::Var;

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-4;
constexpr double kSoftmaxTol = 1e-3;
constexpr std::size_t kPerTensor = 16;
constexpr std::size_t kBatch = 5;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Fixed random projection to a scalar so every output coordinate matters.
Var project(Var y, const Tensor& weights) {
  Graph& g = *y.graph();
  return ad::sum(ad::mul(y, g.constant(weights)));
}

model::ModelDims small_dims() {
  model::ModelDims d;
  d.features = {5, 6, 7};
  d.hidden = 4;
  d.invariant = 4;
  d.text_filters = 3;
  d.ae_widths = {12, 7, 3};
  d.autoencoders = 2;
  d.classifier_hidden = 6;
  d.classes = 4;
  return d;
}

data::Dataset random_batch(const model::ModelDims& dims, Rng& rng) {
  data::Dataset batch;
  for (std::size_t i = 0; i < kBatch; ++i) {
    data::RawUtterance u;
    u.id = "g" + std::to_string(i);
    for (data::Modality m : data::kModalities) {
      const std::size_t steps = 2 + rng.below(5);
      u[m] = random_tensor({steps, dims.features[m]}, rng);
    }
    u.label = i % dims.classes;
    batch.push_back(std::move(u));
  }
  return batch;
}

std::vector<const data::RawUtterance*> pointers(const data::Dataset& set) {
  std::vector<const data::RawUtterance*> out;
  for (const auto& u : set) out.push_back(&u);
  return out;
}

BlockResult merge(std::string block, double tol, std::initializer_list<ad::GradCheckReport> parts) {
  BlockResult r{std::move(block), 0.0, tol, 0, true};
  for (const auto& p : parts) {
    r.max_rel_err = std::max(r.max_rel_err, p.max_rel_err);
    r.coordinates += p.coordinates;
  }
  r.pass = r.max_rel_err <= tol;
  return r;
}

}  // namespace

ad::GradCheckReport check_parameters(const nn::ParamList& params, const LossBuilder& build,
                                     Rng& rng, std::size_t per_tensor, double step, double tol) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    nn::Context ctx{g, false, true};
    const ad::Gradients grads = g.backward(build(ctx));
    for (const nn::ParamRef& p : params) {
      const Tensor* grad = grads.of_param(*p.tensor);
      analytic.push_back(grad ? *grad : Tensor::zeros(p.tensor->shape()));
    }
  }
  auto evaluate = [&] {
    Graph g;
    nn::Context ctx{g, false, false};
    return build(ctx).value().item();
  };

  ad::GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = *params[k].tensor;
    std::vector<std::size_t> coords(t.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    shuffle(coords, rng);
    coords.resize(std::min(per_tensor, coords.size()));
    for (std::size_t i : coords) {
      const double orig = t[i];
      t[i] = orig + step;
      const double plus = evaluate();
      t[i] = orig - step;
      const double minus = evaluate();
      t[i] = orig;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[k][i];
      if (!std::isfinite(plus) || !std::isfinite(minus) || !std::isfinite(a)) {
        throw std::runtime_error("gradcheck: non-finite value in " + params[k].name);
      }
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-5});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_index = i;
      }
      ++report.coordinates;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

std::vector<BlockResult> run_suite(std::uint64_t seed) {
  Rng rng(seed, "gradcheck");
  Rng probe = rng.fork("probe");
  const model::ModelDims dims = small_dims();
  model::PretrainModel pre = model::make_pretrain_model(dims, seed);
  const data::Dataset batch_data = random_batch(dims, rng);
  const auto batch = pointers(batch_data);
  std::vector<BlockResult> out;

  // Specificity encoders.
  {
    const nn::SequenceBatch seq_a = nn::make_sequence_batch(
        {&batch_data[0][data::Modality::Acoustic], &batch_data[1][data::Modality::Acoustic],
         &batch_data[2][data::Modality::Acoustic]});
    const Tensor w = random_tensor({3, dims.hidden}, rng);
    nn::ParamList params;
    pre.encoders.acoustic.collect("enc_a", params);
    auto build = [&](const nn::Context& ctx) {
      return project(pre.encoders.acoustic.forward(ctx, seq_a), w);
    };
    out.push_back(merge("lstm_encoder", kTol,
                        {check_parameters(params, build, probe, kPerTensor, kStep, kTol)}));
  }
  {
    std::vector<const Tensor*> seqs;
    for (const auto& u : batch_data) seqs.push_back(&u[data::Modality::Textual]);
    const nn::SequenceBatch seq_t =
        nn::make_sequence_batch(seqs, nn::TextCnnEncoder::kMinSteps);
    const Tensor w = random_tensor({kBatch, dims.hidden}, rng);
    nn::ParamList params;
    pre.encoders.textual.collect("enc_t", params);
    auto build = [&](const nn::Context& ctx) {
      return project(pre.encoders.textual.forward(ctx, seq_t), w);
    };
    out.push_back(merge("textcnn_encoder", kTol,
                        {check_parameters(params, build, probe, kPerTensor, kStep, kTol)}));
  }

  // Enc', shared branch, applied to each modality.
  {
    const Tensor h = random_tensor({kBatch, dims.hidden}, rng);
    const Tensor w = random_tensor({kBatch, dims.invariant}, rng);
    auto f = [&](Graph&, Var x) {
      nn::Context ctx{*x.graph(), false, false};
      return project(pre.encoders.invariance.forward(ctx, x, 0), w);
    };
    nn::ParamList params;
    pre.encoders.invariance.collect("enc_inv", params);
    auto build = [&](const nn::Context& ctx) {
      Var x = ctx.graph.constant(h);
      return project(pre.encoders.invariance.forward(ctx, x, 0), w);
    };
    out.push_back(merge("invariance_encoder", kTol,
                        {ad::finite_difference_check(f, h, kStep, kTol),
                         check_parameters(params, build, probe, kPerTensor, kStep, kTol)}));
  }

  // IF-IM, both input wirings.
  for (bool cascaded : {true, false}) {
    ifim::ImaginationModule ifim(dims.autoencoders, dims.ae_widths, rng);
    const Tensor h = random_tensor({kBatch, dims.specific_width()}, rng);
    const Tensor inv = random_tensor({kBatch, dims.invariant_width()}, rng);
    const Tensor w_img = random_tensor({kBatch, dims.specific_width()}, rng);
    const Tensor w_joint = random_tensor({kBatch, ifim.joint_width()}, rng);
    auto loss = [&](const nn::Context& ctx, Var hv, Var iv) {
      const ifim::ImaginationOutput o = ifim.forward(ctx, hv, iv, cascaded);
      return project(o.imagined, w_img) + project(o.joint, w_joint);
    };
    auto f_h = [&](Graph& g, Var x) {
      return loss(nn::Context{g, false, false}, x, g.constant(inv));
    };
    auto f_inv = [&](Graph& g, Var x) {
      return loss(nn::Context{g, false, false}, g.constant(h), x);
    };
    nn::ParamList params;
    ifim.collect("ifim", params);
    auto build = [&](const nn::Context& ctx) {
      return loss(ctx, ctx.graph.constant(h), ctx.graph.constant(inv));
    };
    out.push_back(merge(cascaded ? "ifim" : "ifim_no_cascade", kTol,
                        {ad::finite_difference_check(f_h, h, kStep, kTol),
                         ad::finite_difference_check(f_inv, inv, kStep, kTol),
                         check_parameters(params, build, probe, kPerTensor, kStep, kTol)}));
  }

  // Classifier.
  {
    const Tensor z = random_tensor({kBatch, pre.classifier.in_width()}, rng);
    const Tensor w = random_tensor({kBatch, dims.classes}, rng);
    auto f = [&](Graph& g, Var x) {
      return project(pre.classifier.forward(nn::Context{g, false, false}, x), w);
    };
    nn::ParamList params;
    pre.classifier.collect("cls", params);
    auto build = [&](const nn::Context& ctx) {
      return project(pre.classifier.forward(ctx, ctx.graph.constant(z)), w);
    };
    out.push_back(merge("classifier", kTol,
                        {ad::finite_difference_check(f, z, kStep, kTol),
                         check_parameters(params, build, probe, kPerTensor, kStep, kTol)}));
  }

  // CMD over three modality batches packed side by side.
  {
    const std::size_t d = 3;
    const Tensor x = random_tensor({8, 3 * d}, rng);
    auto f = [&](Graph&, Var v) {
      return cmd::cmd_loss(ad::slice_cols(v, 0, d), ad::slice_cols(v, d, 2 * d),
                           ad::slice_cols(v, 2 * d, 3 * d), cmd::CmdConfig{5});
    };
    out.push_back(merge("cmd_loss", kTol, {ad::finite_difference_check(f, x, kStep, kTol)}));
  }

  // Stage 1 objective: cross-entropy plus CMD on H.
  {
    nn::ParamList params;
    pre.collect(params);
    auto build = [&](const nn::Context& ctx) {
      const model::PretrainForward fwd = model::pretrain_forward(ctx, pre, batch);
      const auto& H = fwd.encoded.invariant;
      return ad::softmax_cross_entropy(fwd.logits, model::labels_of(batch)) +
             cmd::cmd_loss(H[0], H[1], H[2], cmd::CmdConfig{5});
    };
    out.push_back(merge("pretrain_loss", kSoftmaxTol,
                        {check_parameters(params, build, probe, kPerTensor, kStep, kSoftmaxTol)}));
  }

  // Stage 2 losses on a masked batch against a frozen teacher.
  {
    const model::Teacher teacher = model::make_teacher(pre);
    model::StudentModel student = model::make_student(pre, {}, seed);
    const model::Condition condition = model::missing_conditions()[rng.below(6)];
    data::Dataset masked_data;
    for (const auto& u : batch_data) masked_data.push_back(model::apply_missing(u, condition));
    const auto masked = pointers(masked_data);
    nn::ParamList params;
    student.collect(params);

    enum class Which { Cls, Img, Inv };
    auto make = [&](Which which) {
      return [&, which](const nn::Context& ctx) {
        const model::StudentForward fwd = model::student_forward(ctx, ctx, student, masked);
        nn::Context tctx{ctx.graph, false, false};
        const model::Encoded targets = model::encode(tctx, teacher.encoders, batch);
        switch (which) {
          case Which::Cls:
            return ad::softmax_cross_entropy(fwd.logits, model::labels_of(batch));
          case Which::Img:
            return ad::rmse(targets.h, fwd.imagination.imagined);
          case Which::Inv:
            break;
        }
        return ad::rmse(targets.H, fwd.encoded.H);
      };
    };
    out.push_back(merge("loss_cls", kSoftmaxTol,
                        {check_parameters(params, make(Which::Cls), probe, kPerTensor, kStep,
                                          kSoftmaxTol)}));
    out.push_back(merge("loss_img", kTol,
                        {check_parameters(params, make(Which::Img), probe, kPerTensor, kStep,
                                          kTol)}));
    nn::ParamList encoder_params;
    student.collect_encoders(encoder_params);
    out.push_back(merge("loss_inv", kTol,
                        {check_parameters(encoder_params, make(Which::Inv), probe, kPerTensor,
                                          kStep, kTol)}));
  }
  return out;
}

std::string format_table(const std::vector<BlockResult>& results, std::uint64_t seed) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "seed %llu\n%-20s %12s %10s %8s %s\n",
                static_cast<unsigned long long>(seed), "block", "max_rel_err", "tolerance",
                "coords", "result");
  out += line;
  for (const BlockResult& r : results) {
    std::snprintf(line, sizeof line, "%-20s %12.3e %10.0e %8zu %s\n", r.block.c_str(),
                  r.max_rel_err, r.tolerance, r.coordinates, r.pass ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace ifmmin::gradcheck
