#include "ifmmin/model.hpp"

#include <algorithm>

namespace ifmmin::model {

void validate(const ModelDims& dims) {
  if (dims.hidden == 0 || dims.invariant == 0 || dims.text_filters == 0 ||
      dims.classifier_hidden == 0) {
    throw ValidationError("model: layer widths must be positive");
  }
  if (dims.features.acoustic == 0 || dims.features.visual == 0 || dims.features.textual == 0) {
    throw ValidationError("model: feature widths must be positive");
  }
  if (dims.classes < 2) throw ValidationError("model: need at least 2 classes");
  if (dims.invariant != dims.hidden) {
    throw ValidationError("model: invariant_size (" + std::to_string(dims.invariant) +
                          ") must equal hidden_size (" + std::to_string(dims.hidden) +
                          ") so that H' + h is defined");
  }
  if (dims.ae_widths.size() < 2 || dims.ae_widths.front() != dims.specific_width()) {
    throw ValidationError("model: autoencoder ladder must start at 3 * hidden_size = " +
                          std::to_string(dims.specific_width()));
  }
  if (std::find(dims.ae_widths.begin(), dims.ae_widths.end(), 0u) != dims.ae_widths.end()) {
    throw ValidationError("model: autoencoder widths must be positive");
  }
  if (dims.autoencoders == 0) throw ValidationError("model: need at least one autoencoder");
}

bool Condition::legal() const {
  const int count = available_[0] + available_[1] + available_[2];
  return count >= 1 && count <= 2;
}

std::string Condition::name() const {
  std::string out;
  for (Modality m : data::kModalities) {
    if (has(m)) out += data::modality_letter(m);
  }
  return out;
}

Condition Condition::parse(const std::string& name) {
  Condition c;
  for (char ch : name) {
    std::size_t i = 0;
    if (ch == 'a') i = 0;
    else if (ch == 'v') i = 1;
    else if (ch == 't') i = 2;
    else throw ValidationError("unknown modality '" + std::string(1, ch) + "' in condition " + name);
    if (c.available_[i]) throw ValidationError("repeated modality in condition " + name);
    c.available_[i] = true;
  }
  if (!c.legal()) throw ValidationError("condition '" + name + "' is not a missing-modality condition");
  return c;
}

const std::array<Condition, 6>& missing_conditions() {
  static const std::array<Condition, 6> kConditions = {
      Condition(true, false, false), Condition(false, true, false), Condition(false, false, true),
      Condition(true, true, false),  Condition(true, false, true),  Condition(false, true, true)};
  return kConditions;
}

Condition sample_condition(Rng& rng) { return missing_conditions()[rng.below(6)]; }

RawUtterance apply_missing(const RawUtterance& u, Condition c) {
  RawUtterance out = u;
  for (Modality m : data::kModalities) {
    if (!c.has(m)) out[m] = Tensor::zeros({1, u[m].dim(1)});
  }
  return out;
}

void EncoderSet::collect(const std::string& prefix, nn::ParamList& out) {
  acoustic.collect(prefix + "enc_a", out);
  visual.collect(prefix + "enc_v", out);
  textual.collect(prefix + "enc_t", out);
  invariance.collect(prefix + "enc_inv", out);
}

EncoderSet make_encoders(const ModelDims& dims, Rng& rng) {
  validate(dims);
  EncoderSet set;
  set.acoustic = nn::LstmEncoder(dims.features.acoustic, dims.hidden, rng);
  set.visual = nn::LstmEncoder(dims.features.visual, dims.hidden, rng);
  set.textual = nn::TextCnnEncoder(dims.features.textual, dims.text_filters, dims.hidden, rng);
  set.invariance =
      nn::InvarianceEncoder(dims.hidden, dims.invariant, dims.share_invariance_encoder, rng);
  return set;
}

namespace {

nn::SequenceBatch gather(std::span<const RawUtterance* const> batch, Modality m,
                         std::size_t min_steps = 1) {
  std::vector<const Tensor*> seqs;
  seqs.reserve(batch.size());
  for (const RawUtterance* u : batch) seqs.push_back(&(*u)[m]);
  return nn::make_sequence_batch(seqs, min_steps);
}

}  // namespace

Encoded encode(const nn::Context& ctx, const EncoderSet& encoders,
               std::span<const RawUtterance* const> batch) {
  if (batch.empty()) throw ValidationError("encode: empty batch");
  Encoded out;
  out.specific[0] = encoders.acoustic.forward(ctx, gather(batch, Modality::Acoustic));
  out.specific[1] = encoders.visual.forward(ctx, gather(batch, Modality::Visual));
  out.specific[2] = encoders.textual.forward(ctx, gather(batch, Modality::Textual));
  for (std::size_t m = 0; m < 3; ++m) {
    out.invariant[m] = encoders.invariance.forward(ctx, out.specific[m], m);
  }
  out.h = ad::concat(out.specific);
  out.H = ad::concat(out.invariant);
  return out;
}

std::vector<std::size_t> labels_of(std::span<const RawUtterance* const> batch) {
  std::vector<std::size_t> labels;
  labels.reserve(batch.size());
  for (const RawUtterance* u : batch) labels.push_back(u->label);
  return labels;
}

void PretrainModel::collect(nn::ParamList& out) {
  encoders.collect("", out);
  classifier.collect("cls_pre", out);
}

PretrainModel make_pretrain_model(const ModelDims& dims, std::uint64_t seed) {
  Rng rng(seed, "init.pretrain");
  PretrainModel m;
  m.dims = dims;
  m.encoders = make_encoders(dims, rng);
  m.classifier = nn::Classifier(dims.specific_width() + dims.invariant_width(),
                                dims.classifier_hidden, dims.classes, rng);
  return m;
}

PretrainForward pretrain_forward(const nn::Context& ctx, const PretrainModel& model,
                                 std::span<const RawUtterance* const> batch) {
  PretrainForward out;
  out.encoded = encode(ctx, model.encoders, batch);
  out.logits = model.classifier.forward(ctx, ad::concat({out.encoded.h, out.encoded.H}));
  return out;
}

void Teacher::collect(nn::ParamList& out) { encoders.collect("teacher.", out); }

void StudentModel::collect(nn::ParamList& out) {
  collect_encoders(out);
  collect_head(out);
}

void StudentModel::collect_encoders(nn::ParamList& out) { encoders.collect("", out); }

void StudentModel::collect_head(nn::ParamList& out) {
  if (flags.use_imagination) imagination.collect("ifim", out);
  classifier.collect("cls", out);
}

StudentModel make_student(const PretrainModel& pretrained, StudentFlags flags, std::uint64_t seed) {
  Rng rng(seed, "init.student");
  StudentModel s;
  s.dims = pretrained.dims;
  s.flags = flags;
  s.encoders = pretrained.encoders;
  if (flags.use_imagination) {
    s.imagination = ifim::ImaginationModule(s.dims.autoencoders, s.dims.ae_widths, rng);
    s.classifier = nn::Classifier(s.imagination.joint_width(), s.dims.classifier_hidden,
                                  s.dims.classes, rng);
  } else {
    s.classifier = nn::Classifier(s.dims.specific_width() + s.dims.invariant_width(),
                                  s.dims.classifier_hidden, s.dims.classes, rng);
  }
  return s;
}

Teacher make_teacher(const PretrainModel& pretrained) {
  Teacher t;
  t.encoders = pretrained.encoders;
  t.frozen = true;
  return t;
}

StudentForward student_forward(const nn::Context& encoder_ctx, const nn::Context& head_ctx,
                               const StudentModel& model,
                               std::span<const RawUtterance* const> batch) {
  StudentForward out;
  out.encoded = encode(encoder_ctx, model.encoders, batch);
  if (model.flags.use_imagination) {
    out.imagination = model.imagination.forward(head_ctx, out.encoded.h, out.encoded.H,
                                                model.flags.cascaded_input);
    out.logits = model.classifier.forward(head_ctx, out.imagination.joint);
  } else {
    out.logits = model.classifier.forward(head_ctx, ad::concat({out.encoded.h, out.encoded.H}));
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data().data() + r * cols;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
  }
  return out;
}

std::vector<std::size_t> predict(const StudentModel& model,
                                 std::span<const RawUtterance* const> batch) {
  ad::Graph g;
  nn::Context ctx{g, false, false};
  return argmax_rows(student_forward(ctx, ctx, model, batch).logits.value());
}

std::vector<std::size_t> predict(const PretrainModel& model,
                                 std::span<const RawUtterance* const> batch) {
  ad::Graph g;
  nn::Context ctx{g, false, false};
  return argmax_rows(pretrain_forward(ctx, model, batch).logits.value());
}

}  // namespace ifmmin::model
