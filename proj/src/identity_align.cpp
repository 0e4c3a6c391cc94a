#include "gs4d/identity_align.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <tuple>

namespace gs4d {

IdMapping IdMapping::inverse() const {
  IdMapping inv;
  for (const auto& [v, c] : to_canonical) inv.to_canonical[c] = v;
  inv.unmatched_view = unmatched_canonical;
  inv.unmatched_canonical = unmatched_view;
  return inv;
}

double LabelOverlap::iou(int la, int lb) const {
  const long inter = joint[la][lb];
  const long uni = count_a[la] + count_b[lb] - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

LabelOverlap label_overlap(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("label_overlap: resolution mismatch (" +
                                std::to_string(a.width) + "x" + std::to_string(a.height) +
                                " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  LabelOverlap o;
  o.joint.assign(256, std::vector<long>(256, 0));
  o.count_a.assign(256, 0);
  o.count_b.assign(256, 0);
  for (std::size_t p = 0; p < a.data.size(); ++p) {
    ++o.joint[a.data[p]][b.data[p]];
    ++o.count_a[a.data[p]];
    ++o.count_b[b.data[p]];
  }
  return o;
}

IdMapping match_canonical_to_view(const LabelMap& canonical, const LabelMap& view,
                                  double min_iou) {
  const LabelOverlap o = label_overlap(canonical, view);
  std::vector<std::tuple<double, int, int>> pairs;  // (iou, canonical, view)
  for (int c = 1; c < 256; ++c) {
    if (!o.count_a[c]) continue;
    for (int v = 1; v < 256; ++v) {
      if (!o.count_b[v] || !o.joint[c][v]) continue;
      const double iou = o.iou(c, v);
      if (iou > min_iou) pairs.emplace_back(iou, c, v);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
    return std::get<2>(x) < std::get<2>(y);
  });
  std::array<bool, 256> used_c{}, used_v{};
  IdMapping m;
  for (const auto& [iou, c, v] : pairs) {
    if (used_c[c] || used_v[v]) continue;
    used_c[c] = used_v[v] = true;
    m.to_canonical[v] = c;
  }
  for (int v = 1; v < 256; ++v)
    if (o.count_b[v] && !used_v[v]) m.unmatched_view.push_back(v);
  for (int c = 1; c < 256; ++c)
    if (o.count_a[c] && !used_c[c]) m.unmatched_canonical.push_back(c);
  return m;
}

LabelMap relabel(const LabelMap& mask, const IdMapping& mapping, long* unmatched_pixels) {
  std::array<int, 256> lut;
  lut.fill(-1);
  lut[0] = 0;
  for (const auto& [v, c] : mapping.to_canonical) lut[v] = c;
  LabelMap out(mask.height, mask.width, mask.channels);
  long zeroed = 0;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    const int l = lut[mask.data[p]];
    if (l < 0) ++zeroed;
    out.data[p] = static_cast<std::uint8_t>(std::max(l, 0));
  }
  if (unmatched_pixels) *unmatched_pixels = zeroed;
  return out;
}

long propagate_ids(const std::vector<IdMapping>& mappings,
                   std::vector<std::vector<LabelMap>>& masks) {
  if (mappings.size() != masks.size())
    throw std::invalid_argument("propagate_ids: one mapping per view required");
  long total = 0;
  for (std::size_t v = 0; v < masks.size(); ++v)
    for (auto& m : masks[v]) {
      long z = 0;
      m = relabel(m, mappings[v], &z);
      total += z;
    }
  return total;
}

}  // namespace gs4d
