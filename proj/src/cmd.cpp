#include "ifmmin/cmd.hpp"

#include <cmath>
#include <string>

namespace ifmmin::cmd {

using ad::Var;

namespace {

void check_samples(const Tensor& x, const char* what) {
  if (x.rank() != 2) {
    throw ValidationError(std::string(what) + ": samples must be [N, d], got " +
                          to_string(x.shape()));
  }
  if (x.dim(0) < 2) {
    throw ValidationError(std::string(what) + ": need at least 2 samples, got " +
                          std::to_string(x.dim(0)));
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite sample value");
  }
}

void check_config(const CmdConfig& cfg) {
  if (cfg.max_order < 2) {
    throw ValidationError("cmd: K must be >= 2, got " + std::to_string(cfg.max_order));
  }
}

Var euclidean_norm(Var v) { return ad::sqrt(ad::sum(ad::pow(v, 2))); }

Var centered(Var samples) { return ad::add_row(samples, ad::scale(ad::mean_rows(samples), -1.0)); }

}  // namespace

Var central_moment(Var samples, int order) {
  if (order < 2) {
    throw ValidationError("central_moment: order must be >= 2, got " + std::to_string(order));
  }
  check_samples(samples.value(), "central_moment");
  return ad::mean_rows(ad::pow(centered(samples), order));
}

Var cmd_pair(Var x, Var y, const CmdConfig& cfg) {
  check_config(cfg);
  check_samples(x.value(), "cmd_pair");
  check_samples(y.value(), "cmd_pair");
  if (x.value().dim(1) != y.value().dim(1)) {
    throw ValidationError("cmd_pair: feature dimension mismatch " + to_string(x.shape()) +
                          " vs " + to_string(y.shape()));
  }
  Var cx = centered(x);
  Var cy = centered(y);
  Var total = euclidean_norm(ad::mean_rows(x) - ad::mean_rows(y));
  for (int k = 2; k <= cfg.max_order; ++k) {
    Var diff = ad::mean_rows(ad::pow(cx, k)) - ad::mean_rows(ad::pow(cy, k));
    total = total + euclidean_norm(diff);
  }
  return total;
}

Var cmd_loss(Var acoustic, Var visual, Var textual, const CmdConfig& cfg) {
  if (acoustic.value().shape() != visual.value().shape() ||
      acoustic.value().shape() != textual.value().shape()) {
    throw ValidationError("cmd_loss: modality batches differ in shape: " +
                          to_string(acoustic.shape()) + ", " + to_string(visual.shape()) + ", " +
                          to_string(textual.shape()));
  }
  Var pairs = cmd_pair(textual, acoustic, cfg) + cmd_pair(textual, visual, cfg) +
              cmd_pair(acoustic, visual, cfg);
  return ad::scale(pairs, 1.0 / 3.0);
}

std::vector<double> central_moment(const Tensor& samples, int order) {
  ad::Graph g;
  return central_moment(g.constant(samples), order).value().values();
}

double cmd_pair(const Tensor& x, const Tensor& y, const CmdConfig& cfg) {
  ad::Graph g;
  return cmd_pair(g.constant(x), g.constant(y), cfg).value().item();
}

double cmd_loss(const Tensor& acoustic, const Tensor& visual, const Tensor& textual,
                const CmdConfig& cfg) {
  ad::Graph g;
  return cmd_loss(g.constant(acoustic), g.constant(visual), g.constant(textual), cfg).value().item();
}

}  // namespace ifmmin::cmd
