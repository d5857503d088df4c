#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace detrame::gradcheck {

struct GradCheckCase {
  std::string name;
  double max_rel_err;
  double threshold;
  bool pass;
};

/// Central finite-difference checks (eps = 1e-5) for every differentiable
/// primitive and for full two-layer models, against the analytic backward
/// passes. Deterministic per seed.
std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed);

bool all_pass(const std::vector<GradCheckCase>& cases);

}  // namespace detrame::gradcheck
