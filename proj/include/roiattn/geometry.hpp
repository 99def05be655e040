#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "roiattn/common.hpp"

namespace roiattn {

// Boxes live in normalized image coordinates, [0,1] on both axes.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

void validate(const BBox& b);

std::pair<double, double> box_center(const BBox& b);
double box_area(const BBox& b);

struct RoiProposal {
  BBox bbox;
  double confidence = 0;
};

void validate(const RoiProposal& p);

// select_top_k output element: the chosen proposal plus where it came from and
// whether it is a pad copy (inserted when fewer than k proposals exist).
struct SelectedRoi {
  RoiProposal proposal;
  std::size_t source_index = 0;
  bool padded = false;
};

// The k highest-confidence proposals, descending confidence; ties broken by
// larger area, then lower original index. Short lists are padded with copies
// of the largest-area proposal, flagged as padded.
std::vector<SelectedRoi> select_top_k(const std::vector<RoiProposal>& proposals,
                                      std::size_t k);

// Index of the maximum-area proposal, lowest index on ties. Callers put the
// winner at sequence position 0 before modeling.
std::size_t identify_anchor(const std::vector<RoiProposal>& selected);
std::size_t identify_anchor(const std::vector<SelectedRoi>& selected);

}  // namespace roiattn
