#pragma once

#include <cstddef>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "murel/murel.hpp"

namespace murel::viz {

/// Default edge threshold on per-source occurrence frequency.
inline constexpr double kDefaultThreshold = 0.2;
/// Guard added to x before the elementwise ratio.
inline constexpr double kImpactEpsilon = 1e-8;
/// Lowest fill opacity, so every region stays visible.
inline constexpr double kOpacityFloor = 0.05;

/// How the per-region pairwise impact |e_i / x_i| is scored.
enum class ImpactMode {
  elementwise,  // || e_i ./ (x_i + eps) ||_2
  norm_ratio,   // ||e_i||_2 / (||x_i||_2 + eps)
};
std::string to_string(ImpactMode m);
ImpactMode impact_mode_from_string(const std::string& s);

struct Edge {
  std::size_t source = 0;
  std::size_t target = 0;
  double weight = 0.0;
};

struct StepReport {
  std::size_t step = 0;  // 1-based
  std::vector<std::size_t> counts;  // coordinates won per region; sums to d_v
  std::vector<double> frequencies;  // counts / d_v
  std::optional<std::size_t> i_star;
  std::vector<Edge> edges;
};

struct ContributionReport {
  double threshold = kDefaultThreshold;
  ImpactMode mode = ImpactMode::elementwise;
  std::vector<StepReport> steps;
};

/// Per-region argmax counts of the state after the traced step, over the real regions of `group`.
/// Ties go to the lowest region index.
std::vector<std::size_t> contribution_counts(const CellTrace& trace, std::size_t group = 0);
std::vector<double> contribution_map(const CellTrace& trace, std::size_t group = 0);
/// Step t in [1, traces.size()]; IndexError otherwise.
std::vector<double> contribution_map(const std::vector<CellTrace>& traces, std::size_t step, std::size_t group = 0);

/// Per-region pairwise impact score used to pick i_star.
std::vector<double> pairwise_impact(const CellTrace& trace, std::size_t group = 0,
                                    ImpactMode mode = ImpactMode::elementwise);

struct PairwiseRelations {
  std::optional<std::size_t> i_star;
  std::vector<Edge> edges;  // sources other than i_star, weight >= threshold, by source index
};

/// The region most changed by the pairwise term and the sources that win its max aggregation.
/// ContractError on a trace without pairwise values.
PairwiseRelations pairwise_relations(const CellTrace& trace, double threshold = kDefaultThreshold,
                                     std::size_t group = 0, ImpactMode mode = ImpactMode::elementwise);

/// Frequencies for every step, plus relations when the traces carry them.
ContributionReport build_report(const std::vector<CellTrace>& traces, double threshold = kDefaultThreshold,
                                ImpactMode mode = ImpactMode::elementwise, std::size_t group = 0);

nlohmann::ordered_json to_json(const ContributionReport& report);
nlohmann::ordered_json to_json(const StepReport& step);

/// SVG 1.1 with one rectangle per region in index order.
std::string render_svg(const Scene& scene, const StepReport& step, double canvas = 400.0);
/// Writes render_svg output; FileError names the path on failure.
void render_overlay(const Scene& scene, const StepReport& step, const std::string& out_path);

}  // namespace murel::viz
