#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "murel/gradcheck.hpp"

namespace murel {

struct GradcheckCase {
  std::string suite;  // tensor-core, fusion, qencoder, murel, baseline
  std::string name;
  GradcheckReport report;
};

struct GradcheckSuiteOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

/// Finite-difference checks of every differentiable op, both fusion modes, the GRU encoder,
/// the full MuRel loss (3 regions, T = 2, d_v = 6, shared and unshared) and the attention baseline.
std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckSuiteOptions& options = {});

bool all_passed(const std::vector<GradcheckCase>& cases);
double max_rel_error(const std::vector<GradcheckCase>& cases);
nlohmann::ordered_json to_json(const std::vector<GradcheckCase>& cases, const GradcheckSuiteOptions& options);

}  // namespace murel
