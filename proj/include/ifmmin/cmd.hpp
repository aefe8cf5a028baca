#pragma once

#include <vector>

#include "ifmmin/autodiff.hpp"

// Central moment discrepancy between batches of feature vectors and the
// three-pair invariance constraint built from it.
namespace ifmmin::cmd {

struct CmdConfig {
  int max_order = 5;  // K, highest central moment compared
};

// Per-coordinate k-th population central moment of the rows of X [N, d].
ad::Var central_moment(ad::Var samples, int order);

// ||E(X) - E(Y)||_2 + sum_{k=2..K} ||C_k(X) - C_k(Y)||_2.
ad::Var cmd_pair(ad::Var x, ad::Var y, const CmdConfig& cfg);

// Mean of cmd_pair over the pairs (t, a), (t, v), (a, v).
ad::Var cmd_loss(ad::Var acoustic, ad::Var visual, ad::Var textual, const CmdConfig& cfg);

// Value-only conveniences evaluated on a scratch graph.
std::vector<double> central_moment(const Tensor& samples, int order);
double cmd_pair(const Tensor& x, const Tensor& y, const CmdConfig& cfg);
double cmd_loss(const Tensor& acoustic, const Tensor& visual, const Tensor& textual,
                const CmdConfig& cfg);

}  // namespace ifmmin::cmd
