#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ifmmin/layers.hpp"

namespace ifmmin::gradcheck {

struct BlockResult {
  std::string block;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  bool pass = false;
};

// Loss built from scratch on the graph held by ctx.
using LossBuilder = std::function<ad::Var(const nn::Context&)>;

// Compares analytic parameter gradients of `build` against central
// differences. At most `per_tensor` coordinates of each tensor are probed,
// picked by rng; tensors are restored afterwards.
ad::GradCheckReport check_parameters(const nn::ParamList& params, const LossBuilder& build,
                                     Rng& rng, std::size_t per_tensor, double step, double tol);

// Every encoder, Enc', IF-IM, the classifier, CMD and the three Stage 2
// losses on small random models, with respect to inputs and parameters.
std::vector<BlockResult> run_suite(std::uint64_t seed);

// Fixed-width pass/fail table.
std::string format_table(const std::vector<BlockResult>& results, std::uint64_t seed);

}  // namespace ifmmin::gradcheck
