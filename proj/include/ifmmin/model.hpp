#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ifmmin/data.hpp"
#include "ifmmin/ifim.hpp"
#include "ifmmin/layers.hpp"

namespace ifmmin::model {

using ad::Var;
using data::Modality;
using data::RawUtterance;

struct ModelDims {
  data::FeatureDims features;
  std::size_t hidden = 128;        // each specificity encoder output
  std::size_t invariant = 128;     // Enc' output per modality
  std::size_t text_filters = 128;  // per kernel width
  std::vector<std::size_t> ae_widths = {384, 256, 128, 64};
  std::size_t autoencoders = 5;
  std::size_t classifier_hidden = 128;
  std::size_t classes = 4;
  bool share_invariance_encoder = true;

  std::size_t specific_width() const { return 3 * hidden; }
  std::size_t invariant_width() const { return 3 * invariant; }
  std::size_t joint_width() const { return autoencoders * ae_widths.back(); }
};

void validate(const ModelDims& dims);

// Nonempty proper subset of {a, v, t} available at inference.
class Condition {
 public:
  constexpr Condition() = default;
  constexpr Condition(bool a, bool v, bool t) : available_{a, v, t} {}

  bool has(Modality m) const { return available_[data::index(m)]; }
  bool legal() const;
  // "a", "v", "t", "av", "at", "vt"; "avt" for the full set.
  std::string name() const;
  static Condition parse(const std::string& name);
  static constexpr Condition full() { return Condition(true, true, true); }

  friend bool operator==(const Condition&, const Condition&) = default;

 private:
  std::array<bool, 3> available_ = {false, false, false};
};

// The six test conditions in table order: {a}, {v}, {t}, {a,v}, {a,t}, {v,t}.
const std::array<Condition, 6>& missing_conditions();

// Uniform over the six conditions.
Condition sample_condition(Rng& rng);

// Missing modalities become a single all-zero frame.
RawUtterance apply_missing(const RawUtterance& u, Condition c);

// Enc_a, Enc_v, Enc_t and the invariance encoder Enc'.
struct EncoderSet {
  nn::LstmEncoder acoustic;
  nn::LstmEncoder visual;
  nn::TextCnnEncoder textual;
  nn::InvarianceEncoder invariance;

  void collect(const std::string& prefix, nn::ParamList& out);
};

EncoderSet make_encoders(const ModelDims& dims, Rng& rng);

struct Encoded {
  std::array<Var, 3> specific;   // h_a, h_v, h_t   [N, hidden]
  std::array<Var, 3> invariant;  // H_a, H_v, H_t   [N, invariant]
  Var h;                         // [N, 3 * hidden]
  Var H;                         // [N, 3 * invariant]
};

// Runs every encoder on a batch; h and H concatenate in a, v, t order.
Encoded encode(const nn::Context& ctx, const EncoderSet& encoders,
               std::span<const RawUtterance* const> batch);

std::vector<std::size_t> labels_of(std::span<const RawUtterance* const> batch);

// Stage 1 network: encoders plus a classifier over concat(h, H).
struct PretrainModel {
  ModelDims dims;
  EncoderSet encoders;
  nn::Classifier classifier;

  void collect(nn::ParamList& out);
};

PretrainModel make_pretrain_model(const ModelDims& dims, std::uint64_t seed);

struct PretrainForward {
  Encoded encoded;
  Var logits;
};

PretrainForward pretrain_forward(const nn::Context& ctx, const PretrainModel& model,
                                 std::span<const RawUtterance* const> batch);

// Frozen copy of the Stage 1 encoders used to produce regression targets.
struct Teacher {
  EncoderSet encoders;
  bool frozen = true;

  void collect(nn::ParamList& out);
};

struct StudentFlags {
  bool cascaded_input = true;
  bool use_imagination = true;  // false: classifier reads concat(h, H')
};

// Stage 2 network. Encoders start from Stage 1; IF-IM and classifier are new.
struct StudentModel {
  ModelDims dims;
  StudentFlags flags;
  EncoderSet encoders;
  ifim::ImaginationModule imagination;  // empty when !use_imagination
  nn::Classifier classifier;

  void collect(nn::ParamList& out);
  void collect_encoders(nn::ParamList& out);
  void collect_head(nn::ParamList& out);
};

StudentModel make_student(const PretrainModel& pretrained, StudentFlags flags, std::uint64_t seed);
Teacher make_teacher(const PretrainModel& pretrained);

struct StudentForward {
  Encoded encoded;             // h and H' from the (masked) input
  ifim::ImaginationOutput imagination;  // unset when !use_imagination
  Var logits;
};

// encoder_ctx binds the encoders, head_ctx binds IF-IM and the classifier.
StudentForward student_forward(const nn::Context& encoder_ctx, const nn::Context& head_ctx,
                               const StudentModel& model,
                               std::span<const RawUtterance* const> batch);

// Eval-mode argmax predictions of the student on already-masked input.
std::vector<std::size_t> predict(const StudentModel& model,
                                 std::span<const RawUtterance* const> batch);
std::vector<std::size_t> predict(const PretrainModel& model,
                                 std::span<const RawUtterance* const> batch);

std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace ifmmin::model
