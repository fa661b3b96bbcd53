#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evmae/model.hpp"

namespace evmae {

struct GradCheckCase {
  std::string name;
  GradCheckResult result;
  double threshold = 1e-4;
  bool passed() const { return result.max_rel_err < threshold; }
};

// Fixed verification matrix run in double precision: a depth-0 purely
// linear configuration (tight 1e-7 threshold) plus multi-source deep
// configurations covering every mask scheme, norm_pix on/off and the
// time/source embedding tables.
std::vector<GradCheckCase> grad_check_suite(uint64_t seed, double eps = 1e-4);

}  // namespace evmae
