#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "ifmmin/model.hpp"

namespace ifmmin::evaluation {

struct ConditionScore {
  std::string condition;
  double wa = 0.0;
  double ua = 0.0;
};

struct ConditionReport {
  std::vector<ConditionScore> conditions;  // table order
  double average_wa = 0.0;
  double average_ua = 0.0;
};

nlohmann::json to_json(const ConditionReport& report);
ConditionReport report_from_json(const nlohmann::json& j);

// Masks every test utterance per condition and scores the student in eval
// mode. Parameters are read only.
ConditionReport evaluate_conditions(const model::StudentModel& student, const data::Dataset& test,
                                    std::size_t batch_size = 128);

// Full-modality WA of the Stage 1 network.
double evaluate_full(const model::PretrainModel& model, const data::Dataset& set,
                     std::size_t batch_size = 128);

struct FeatureRow {
  std::string condition;
  std::vector<double> values;  // H', 3 * invariant wide
};

// One row per (condition, utterance) pair in that nesting order.
std::vector<FeatureRow> export_invariant_features(const model::StudentModel& student,
                                                  const data::Dataset& utterances,
                                                  const std::vector<model::Condition>& conditions);

// Header "condition,H_0,...,H_{k-1}" followed by one line per row.
std::string to_csv(const std::vector<FeatureRow>& rows);

}  // namespace ifmmin::evaluation
