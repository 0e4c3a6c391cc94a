#pragma once

#include "gs4d/image.hpp"

#include <map>
#include <vector>

namespace gs4d {

// One view's label correspondence: per-view label -> canonical label.
struct IdMapping {
  std::map<int, int> to_canonical;  // injective; 0 -> 0 is implicit
  std::vector<int> unmatched_view;
  std::vector<int> unmatched_canonical;

  IdMapping inverse() const;
};

// Pixel counts of every (a, b) label pair plus per-label totals.
struct LabelOverlap {
  std::vector<std::vector<long>> joint;  // [label_a][label_b]
  std::vector<long> count_a, count_b;
  double iou(int la, int lb) const;
};
LabelOverlap label_overlap(const LabelMap& a, const LabelMap& b);

// Greedy one-to-one matching of foreground labels by descending IoU (ties by lower
// canonical then lower view label); pairs at or below `min_iou` stay unmatched.
IdMapping match_canonical_to_view(const LabelMap& canonical, const LabelMap& view,
                                  double min_iou = 0.1);

// Rewrites labels through the mapping; labels without a mapping become 0 and are counted.
LabelMap relabel(const LabelMap& mask, const IdMapping& mapping, long* unmatched_pixels = nullptr);

// masks[v][t] relabeled with mappings[v]. Returns the number of pixels zeroed.
long propagate_ids(const std::vector<IdMapping>& mappings,
                   std::vector<std::vector<LabelMap>>& masks);

}  // namespace gs4d
