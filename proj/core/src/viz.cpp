#include "murel/viz.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "murel/errors.hpp"
#include "murel/params.hpp"

namespace murel::viz {

using ordered_json = nlohmann::ordered_json;

std::string to_string(ImpactMode m) { return m == ImpactMode::elementwise ? "elementwise" : "norm_ratio"; }

ImpactMode impact_mode_from_string(const std::string& s) {
  if (s == "elementwise") return ImpactMode::elementwise;
  if (s == "norm_ratio") return ImpactMode::norm_ratio;
  throw DataError("unknown impact mode '" + s + "'");
}

namespace {

std::size_t real_regions(const CellTrace& trace, std::size_t group) {
  if (group >= trace.groups) throw IndexError("group " + std::to_string(group) + " out of range");
  std::size_t n = 0;
  for (std::size_t i = 0; i < trace.max_regions; ++i) n += trace.region_mask[group * trace.max_regions + i] != 0;
  return n;
}

}  // namespace

std::vector<std::size_t> contribution_counts(const CellTrace& trace, std::size_t group) {
  const std::size_t n = real_regions(trace, group);
  const std::size_t d = trace.state.cols();
  const auto s = trace.state.data();
  const std::size_t base = group * trace.max_regions;
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t k = 0; k < d; ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (s[(base + i) * d + k] > s[(base + best) * d + k]) best = i;
    counts[best] += 1;
  }
  return counts;
}

std::vector<double> contribution_map(const CellTrace& trace, std::size_t group) {
  const auto counts = contribution_counts(trace, group);
  const double d = static_cast<double>(trace.state.cols());
  std::vector<double> f;
  for (auto c : counts) f.push_back(static_cast<double>(c) / d);
  return f;
}

std::vector<double> contribution_map(const std::vector<CellTrace>& traces, std::size_t step, std::size_t group) {
  if (step < 1 || step > traces.size()) {
    throw IndexError("step " + std::to_string(step) + " outside 1.." + std::to_string(traces.size()));
  }
  return contribution_map(traces[step - 1], group);
}

std::vector<double> pairwise_impact(const CellTrace& trace, std::size_t group, ImpactMode mode) {
  if (!trace.pairwise()) throw ContractError("trace has no pairwise relations");
  const std::size_t n = real_regions(trace, group);
  const std::size_t d = trace.context.cols();
  const auto e = trace.context.data();
  const auto x = trace.update.data();
  const std::size_t base = group * trace.max_regions;
  std::vector<double> impact(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = (base + i) * d;
    if (mode == ImpactMode::elementwise) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double r = e[row + k] / (x[row + k] + kImpactEpsilon);
        s += r * r;
      }
      impact[i] = std::sqrt(s);
    } else {
      double se = 0.0, sx = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        se += e[row + k] * e[row + k];
        sx += x[row + k] * x[row + k];
      }
      impact[i] = std::sqrt(se) / (std::sqrt(sx) + kImpactEpsilon);
    }
  }
  return impact;
}

PairwiseRelations pairwise_relations(const CellTrace& trace, double threshold, std::size_t group, ImpactMode mode) {
  const auto impact = pairwise_impact(trace, group, mode);
  const std::size_t n = impact.size();
  const std::size_t d = trace.context.cols();
  std::size_t star = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (impact[i] > impact[star]) star = i;

  std::vector<std::size_t> counts(n, 0);
  const std::size_t row = (group * trace.max_regions + star) * d;
  for (std::size_t k = 0; k < d; ++k) {
    const std::int32_t j = trace.context_source[row + k];
    if (j >= 0) counts[static_cast<std::size_t>(j)] += 1;
  }
  PairwiseRelations out;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == star) continue;
    const double w = static_cast<double>(counts[j]) / static_cast<double>(d);
    if (w >= threshold && counts[j] > 0) out.edges.push_back(Edge{j, star, w});
  }
  if (!out.edges.empty()) out.i_star = star;
  return out;
}

ContributionReport build_report(const std::vector<CellTrace>& traces, double threshold, ImpactMode mode,
                                std::size_t group) {
  ContributionReport rep;
  rep.threshold = threshold;
  rep.mode = mode;
  for (std::size_t t = 0; t < traces.size(); ++t) {
    StepReport s;
    s.step = t + 1;
    s.counts = contribution_counts(traces[t], group);
    s.frequencies = contribution_map(traces[t], group);
    if (traces[t].pairwise()) {
      auto rel = pairwise_relations(traces[t], threshold, group, mode);
      s.i_star = rel.i_star;
      s.edges = std::move(rel.edges);
    }
    rep.steps.push_back(std::move(s));
  }
  return rep;
}

ordered_json to_json(const StepReport& step) {
  ordered_json j;
  j["step"] = step.step;
  j["frequencies"] = step.frequencies;
  j["counts"] = step.counts;
  j["i_star"] = step.i_star ? ordered_json(*step.i_star) : ordered_json(nullptr);
  ordered_json edges = ordered_json::array();
  for (const auto& e : step.edges) edges.push_back(ordered_json{{"source", e.source}, {"target", e.target}, {"weight", e.weight}});
  j["edges"] = edges;
  return j;
}

ordered_json to_json(const ContributionReport& report) {
  ordered_json j;
  j["threshold"] = report.threshold;
  j["impact"] = to_string(report.mode);
  ordered_json steps = ordered_json::array();
  for (const auto& s : report.steps) steps.push_back(to_json(s));
  j["steps"] = steps;
  return j;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string render_svg(const Scene& scene, const StepReport& step, double canvas) {
  const std::size_t n = scene.regions();
  if (step.frequencies.size() != n) {
    throw DimensionError("report has " + std::to_string(step.frequencies.size()) + " regions, scene has " + std::to_string(n));
  }
  std::vector<bool> source(n, false);
  for (const auto& e : step.edges) {
    if (e.source >= n) throw IndexError("edge source " + std::to_string(e.source) + " out of range");
    source[e.source] = true;
  }
  std::ostringstream os;
  const std::string c = fixed(canvas, 0);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << c << "\" height=\"" << c
     << "\" viewBox=\"0 0 " << c << ' ' << c << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << c << "\" height=\"" << c << "\" fill=\"#ffffff\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const double opacity = std::max(kOpacityFloor, step.frequencies[i]);
    std::string stroke = "#555555";
    std::string width = "1";
    if (step.i_star && *step.i_star == i) {
      stroke = "#00a000";
      width = "3";
    } else if (source[i]) {
      stroke = "#d00000";
      width = "3";
    }
    os << "  <rect id=\"region-" << i << "\" x=\"" << fixed(scene.boxes.at(i, 0) * canvas, 2) << "\" y=\""
       << fixed(scene.boxes.at(i, 1) * canvas, 2) << "\" width=\"" << fixed(scene.boxes.at(i, 2) * canvas, 2)
       << "\" height=\"" << fixed(scene.boxes.at(i, 3) * canvas, 2) << "\" fill=\"#ffb000\" fill-opacity=\""
       << fixed(opacity, 4) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void render_overlay(const Scene& scene, const StepReport& step, const std::string& out_path) {
  write_file_atomic(out_path, render_svg(scene, step));
}

}  // namespace murel::viz
