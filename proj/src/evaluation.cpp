#include "ifmmin/evaluation.hpp"

#include <charconv>

#include "ifmmin/metrics.hpp"

namespace ifmmin::evaluation {

using data::RawUtterance;

nlohmann::json to_json(const ConditionReport& report) {
  nlohmann::json conditions = nlohmann::json::array();
  for (const ConditionScore& s : report.conditions) {
    conditions.push_back({{"condition", s.condition}, {"wa", s.wa}, {"ua", s.ua}});
  }
  return {{"conditions", conditions},
          {"average", {{"wa", report.average_wa}, {"ua", report.average_ua}}}};
}

ConditionReport report_from_json(const nlohmann::json& j) {
  ConditionReport r;
  for (const auto& c : j.at("conditions")) {
    r.conditions.push_back({c.at("condition").get<std::string>(), c.at("wa").get<double>(),
                            c.at("ua").get<double>()});
  }
  r.average_wa = j.at("average").at("wa").get<double>();
  r.average_ua = j.at("average").at("ua").get<double>();
  return r;
}

ConditionReport evaluate_conditions(const model::StudentModel& student, const data::Dataset& test,
                                    std::size_t batch_size) {
  if (test.empty()) throw ValidationError("evaluate_conditions: empty test set");
  if (batch_size == 0) batch_size = test.size();
  ConditionReport report;
  std::vector<std::size_t> labels;
  for (const RawUtterance& u : test) labels.push_back(u.label);

  for (const model::Condition& c : model::missing_conditions()) {
    std::vector<std::size_t> preds;
    preds.reserve(test.size());
    for (std::size_t start = 0; start < test.size(); start += batch_size) {
      const std::size_t end = std::min(test.size(), start + batch_size);
      std::vector<RawUtterance> masked;
      masked.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) masked.push_back(model::apply_missing(test[i], c));
      std::vector<const RawUtterance*> ptrs;
      for (const RawUtterance& u : masked) ptrs.push_back(&u);
      for (std::size_t p : model::predict(student, ptrs)) preds.push_back(p);
    }
    report.conditions.push_back({c.name(), metrics::weighted_accuracy(preds, labels),
                                 metrics::unweighted_accuracy(preds, labels)});
  }
  double wa = 0.0, ua = 0.0;
  for (const ConditionScore& s : report.conditions) {
    wa += s.wa;
    ua += s.ua;
  }
  report.average_wa = wa / static_cast<double>(report.conditions.size());
  report.average_ua = ua / static_cast<double>(report.conditions.size());
  return report;
}

double evaluate_full(const model::PretrainModel& model, const data::Dataset& set,
                     std::size_t batch_size) {
  if (set.empty()) throw ValidationError("evaluate_full: empty set");
  if (batch_size == 0) batch_size = set.size();
  std::vector<std::size_t> preds, labels;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    std::vector<const RawUtterance*> ptrs;
    for (std::size_t i = start; i < end; ++i) {
      ptrs.push_back(&set[i]);
      labels.push_back(set[i].label);
    }
    for (std::size_t p : model::predict(model, ptrs)) preds.push_back(p);
  }
  return metrics::weighted_accuracy(preds, labels);
}

std::vector<FeatureRow> export_invariant_features(const model::StudentModel& student,
                                                  const data::Dataset& utterances,
                                                  const std::vector<model::Condition>& conditions) {
  std::vector<FeatureRow> rows;
  if (utterances.empty()) return rows;
  for (const model::Condition& c : conditions) {
    std::vector<RawUtterance> masked;
    masked.reserve(utterances.size());
    for (const RawUtterance& u : utterances) masked.push_back(model::apply_missing(u, c));
    std::vector<const RawUtterance*> ptrs;
    for (const RawUtterance& u : masked) ptrs.push_back(&u);
    ad::Graph g;
    nn::Context ctx{g, false, false};
    const Tensor& H = model::encode(ctx, student.encoders, ptrs).H.value();
    const std::size_t width = H.dim(1);
    for (std::size_t r = 0; r < H.dim(0); ++r) {
      FeatureRow row{c.name(), std::vector<double>(width)};
      std::copy_n(H.data().data() + r * width, width, row.values.begin());
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string to_csv(const std::vector<FeatureRow>& rows) {
  std::string out = "condition";
  const std::size_t width = rows.empty() ? 0 : rows.front().values.size();
  for (std::size_t i = 0; i < width; ++i) out += ",H_" + std::to_string(i);
  out += '\n';
  char buf[32];
  for (const FeatureRow& row : rows) {
    out += row.condition;
    for (double v : row.values) {
      out += ',';
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

}  // namespace ifmmin::evaluation
