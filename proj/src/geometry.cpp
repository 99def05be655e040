#include "roiattn/geometry.hpp"

#include <algorithm>
#include <numeric>

namespace roiattn {

void validate(const BBox& b) {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!(in_unit(b.x1) && in_unit(b.y1) && in_unit(b.x2) && in_unit(b.y2)))
    throw ValidationError("bbox coordinates must lie in [0,1]");
  if (!(b.x1 < b.x2 && b.y1 < b.y2))
    throw ValidationError("bbox must satisfy x1 < x2 and y1 < y2");
}

std::pair<double, double> box_center(const BBox& b) {
  return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0};
}

double box_area(const BBox& b) { return (b.x2 - b.x1) * (b.y2 - b.y1); }

void validate(const RoiProposal& p) {
  validate(p.bbox);
  if (!(p.confidence >= 0.0 && p.confidence <= 1.0))
    throw ValidationError("confidence must lie in [0,1]");
}

std::vector<SelectedRoi> select_top_k(const std::vector<RoiProposal>& proposals,
                                      std::size_t k) {
  if (proposals.empty()) throw ValidationError("no proposals");
  if (k == 0) throw ValidationError("k must be positive");

  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const auto& a = proposals[i];
    const auto& b = proposals[j];
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    const double aa = box_area(a.bbox), ab = box_area(b.bbox);
    if (aa != ab) return aa > ab;
    return i < j;
  });

  std::vector<SelectedRoi> out;
  out.reserve(k);
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r)
    out.push_back({proposals[order[r]], order[r], false});

  if (out.size() < k) {
    std::size_t largest = 0;
    for (std::size_t i = 1; i < proposals.size(); ++i)
      if (box_area(proposals[i].bbox) > box_area(proposals[largest].bbox))
        largest = i;
    while (out.size() < k) out.push_back({proposals[largest], largest, true});
  }
  return out;
}

std::size_t identify_anchor(const std::vector<RoiProposal>& selected) {
  if (selected.empty()) throw ValidationError("no proposals");
  std::size_t best = 0;
  for (std::size_t i = 1; i < selected.size(); ++i)
    if (box_area(selected[i].bbox) > box_area(selected[best].bbox)) best = i;
  return best;
}

std::size_t identify_anchor(const std::vector<SelectedRoi>& selected) {
  if (selected.empty()) throw ValidationError("no proposals");
  std::size_t best = 0;
  for (std::size_t i = 1; i < selected.size(); ++i)
    if (box_area(selected[i].proposal.bbox) >
        box_area(selected[best].proposal.bbox))
      best = i;
  return best;
}

}  // namespace roiattn
