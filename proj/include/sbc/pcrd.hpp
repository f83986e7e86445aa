#pragma once

// Post-compression rate-distortion optimization: choose per-block truncation
// points for a ladder of cumulative byte budgets.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <queue>
#include <span>
#include <vector>

#include "sbc/ebcot.hpp"

namespace sbc {

struct HullPoint {
  int passes = 0;
  std::size_t cost = 0;
  double dist = 0.0;   // cumulative distortion decrease
  double slope = 0.0;  // decrease per byte on the segment ending here
};

/// Upper concave hull of (cum_bytes, sum delta_d), starting at (0, 0).
/// Slopes are strictly decreasing along the hull.
inline std::vector<HullPoint> convex_hull(std::span<const PassRecord> passes) {
  std::vector<HullPoint> hull{{0, 0, 0.0, 0.0}};
  double dist = 0.0;
  for (std::size_t k = 0; k < passes.size(); ++k) {
    dist += passes[k].delta_d;
    HullPoint p{static_cast<int>(k + 1), passes[k].cum_bytes, dist, 0.0};
    if (p.cost <= hull.back().cost) continue;
    while (true) {
      const auto& last = hull.back();
      p.slope = (p.dist - last.dist) / static_cast<double>(p.cost - last.cost);
      if (hull.size() > 1 && p.slope >= last.slope)
        hull.pop_back();
      else
        break;
    }
    if (p.slope > 0.0) hull.push_back(p);
  }
  return hull;
}

/// Truncation table: t[block][layer] = passes included through that layer.
using TruncationTable = std::vector<std::vector<int>>;

struct Allocation {
  TruncationTable truncation;
  std::vector<std::size_t> layer_cost;  // cumulative cost per layer
  std::vector<bool> starved;            // layer could not grow within its budget
};

/// For each cumulative budget (ascending), picks the hull points with slope
/// >= lambda where lambda is found by bisection over the distinct hull slopes,
/// then spends the leftover greedily on the steepest remaining hull steps.
/// Truncations never decrease from one layer to the next. Costs are the
/// passes' cum_bytes.
inline Allocation allocate_layers(const std::vector<std::vector<PassRecord>>& blocks,
                                  std::span<const double> budgets) {
  const std::size_t nb = blocks.size(), nl = budgets.size();
  std::vector<std::vector<HullPoint>> hulls(nb);
  std::vector<double> slopes;
  for (std::size_t b = 0; b < nb; ++b) {
    hulls[b] = convex_hull(blocks[b]);
    for (std::size_t j = 1; j < hulls[b].size(); ++j) slopes.push_back(hulls[b][j].slope);
  }
  std::sort(slopes.begin(), slopes.end(), std::greater<>());
  slopes.erase(std::unique(slopes.begin(), slopes.end()), slopes.end());

  Allocation out;
  out.truncation.assign(nb, std::vector<int>(nl, 0));
  std::vector<std::size_t> vertex(nb, 0);  // current hull vertex per block

  auto vertex_at = [&](std::size_t b, double lambda) {
    std::size_t j = vertex[b];
    while (j + 1 < hulls[b].size() && hulls[b][j + 1].slope >= lambda) ++j;
    return j;
  };
  auto total_cost = [&](double lambda) {
    std::size_t c = 0;
    for (std::size_t b = 0; b < nb; ++b) c += hulls[b][vertex_at(b, lambda)].cost;
    return c;
  };

  for (std::size_t k = 0; k < nl; ++k) {
    const double budget = std::max(0.0, budgets[k]);
    std::size_t base = 0;
    for (std::size_t b = 0; b < nb; ++b) base += hulls[b][vertex[b]].cost;
    bool grew = false;
    if (static_cast<double>(base) <= budget && !slopes.empty()) {
      // slopes is descending, so cost grows with the index; find the largest
      // feasible index by bisection.
      std::ptrdiff_t lo = -1, hi = static_cast<std::ptrdiff_t>(slopes.size());
      while (hi - lo > 1) {
        const auto mid = (lo + hi) / 2;
        if (static_cast<double>(total_cost(slopes[static_cast<std::size_t>(mid)])) <= budget)
          lo = mid;
        else
          hi = mid;
      }
      if (lo >= 0) {
        const double lambda = slopes[static_cast<std::size_t>(lo)];
        for (std::size_t b = 0; b < nb; ++b) vertex[b] = vertex_at(b, lambda);
      }
      std::size_t used = 0;
      for (std::size_t b = 0; b < nb; ++b) used += hulls[b][vertex[b]].cost;
      double leftover = budget - static_cast<double>(used);

      using Step = std::pair<double, std::size_t>;
      std::priority_queue<Step, std::vector<Step>, std::function<bool(const Step&, const Step&)>> queue(
          [](const Step& a, const Step& b) { return a.first < b.first || (a.first == b.first && a.second > b.second); });
      for (std::size_t b = 0; b < nb; ++b)
        if (vertex[b] + 1 < hulls[b].size()) queue.emplace(hulls[b][vertex[b] + 1].slope, b);
      while (!queue.empty()) {
        const auto [slope, b] = queue.top();
        queue.pop();
        const auto& next = hulls[b][vertex[b] + 1];
        const double step = static_cast<double>(next.cost - hulls[b][vertex[b]].cost);
        if (step > leftover) continue;
        leftover -= step;
        ++vertex[b];
        if (vertex[b] + 1 < hulls[b].size()) queue.emplace(hulls[b][vertex[b] + 1].slope, b);
      }
      std::size_t after = 0;
      for (std::size_t b = 0; b < nb; ++b) after += hulls[b][vertex[b]].cost;
      grew = after > base;
    }
    std::size_t cost = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      out.truncation[b][k] = hulls[b][vertex[b]].passes;
      cost += hulls[b][vertex[b]].cost;
    }
    out.layer_cost.push_back(cost);
    out.starved.push_back(!grew);
  }
  return out;
}

}  // namespace sbc
