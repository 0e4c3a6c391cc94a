#pragma once

// Random label maps and brute-force oracles shared by unit and acceptance tests.

#include "gs4d/identity_align.hpp"
#include "gs4d/image.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace gs4d::testing {

// D discs at random positions; later discs overwrite earlier ones.
inline LabelMap random_blobs(std::mt19937_64& rng, int h, int w, int d, double rmin = 4.0,
                             double rmax = 12.0) {
  std::uniform_real_distribution<double> ux(0.0, w - 1.0), uy(0.0, h - 1.0), ur(rmin, rmax);
  LabelMap m(h, w, 1);
  for (int l = 1; l <= d; ++l) {
    const double cx = ux(rng), cy = uy(rng), r = ur(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(y, x) = l;
  }
  return m;
}

// Non-overlapping instances on a grid so that each label survives.
inline LabelMap grid_blobs(std::mt19937_64& rng, int h, int w, int d) {
  std::uniform_real_distribution<double> jitter(-2.0, 2.0);
  LabelMap m(h, w, 1);
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
  const int rows = (d + cols - 1) / cols;
  const double cw = static_cast<double>(w) / cols, ch = static_cast<double>(h) / rows;
  for (int l = 1; l <= d; ++l) {
    const int gx = (l - 1) % cols, gy = (l - 1) / cols;
    const double cx = (gx + 0.5) * cw + jitter(rng), cy = (gy + 0.5) * ch + jitter(rng);
    const double r = 0.3 * std::min(cw, ch);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(y, x) = l;
  }
  return m;
}

// Same scene seen by another view: labels permuted, shifted by a few pixels, some noise.
inline LabelMap perturbed_view(std::mt19937_64& rng, const LabelMap& m,
                               const std::vector<int>& perm /* perm[l] = new label */,
                               int max_shift = 2, double flip_prob = 0.02) {
  std::uniform_int_distribution<int> sh(-max_shift, max_shift);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int dx = sh(rng), dy = sh(rng);
  LabelMap out(m.height, m.width, 1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const int sx = std::clamp(x - dx, 0, m.width - 1), sy = std::clamp(y - dy, 0, m.height - 1);
      int l = m.at(sy, sx);
      if (u(rng) < flip_prob) l = 0;
      out.at(y, x) = static_cast<std::uint8_t>(perm[l]);
    }
  return out;
}

// Exhaustive maximum-total-IoU injection of view labels into canonical labels, pairs with
// IoU <= min_iou forbidden.
inline std::map<int, int> exhaustive_assignment(const LabelMap& canonical, const LabelMap& view,
                                                double min_iou = 0.1) {
  std::vector<int> cl, vl;
  std::vector<long> ca(256, 0), cb(256, 0);
  std::vector<std::vector<long>> joint(256, std::vector<long>(256, 0));
  for (std::size_t p = 0; p < canonical.data.size(); ++p) {
    ++ca[canonical.data[p]];
    ++cb[view.data[p]];
    ++joint[canonical.data[p]][view.data[p]];
  }
  for (int l = 1; l < 256; ++l) {
    if (ca[l]) cl.push_back(l);
    if (cb[l]) vl.push_back(l);
  }
  auto iou = [&](int c, int v) {
    const long inter = joint[c][v];
    return static_cast<double>(inter) / static_cast<double>(ca[c] + cb[v] - inter);
  };
  double best = -1.0;
  std::map<int, int> best_map, cur;
  std::vector<bool> used(cl.size(), false);
  std::function<void(std::size_t, double)> rec = [&](std::size_t i, double total) {
    if (i == vl.size()) {
      if (total > best + 1e-12) {
        best = total;
        best_map = cur;
      }
      return;
    }
    rec(i + 1, total);  // leave view label unmatched
    for (std::size_t j = 0; j < cl.size(); ++j) {
      if (used[j]) continue;
      const double s = iou(cl[j], vl[i]);
      if (!(s > min_iou)) continue;
      used[j] = true;
      cur[vl[i]] = cl[j];
      rec(i + 1, total + s);
      cur.erase(vl[i]);
      used[j] = false;
    }
  };
  rec(0, 0.0);
  return best_map;
}

// Squared distance from every pixel to the nearest pixel of the opposite class, O(N^2).
inline std::vector<double> brute_force_sdf(const LabelMap& mask) {
  const int h = mask.height, w = mask.width;
  std::vector<double> phi(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool in = mask.at(y, x) != 0;
      long best = std::numeric_limits<long>::max();
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
          if ((mask.at(yy, xx) != 0) != in) {
            const long d = static_cast<long>(xx - x) * (xx - x) + static_cast<long>(yy - y) * (yy - y);
            best = std::min(best, d);
          }
      const double d = std::sqrt(static_cast<double>(best));
      phi[static_cast<std::size_t>(y) * w + x] = in ? -d : d;
    }
  return phi;
}

inline LabelMap random_binary_mask(std::mt19937_64& rng, int h, int w) {
  LabelMap m = random_blobs(rng, h, w, 1 + static_cast<int>(rng() % 5), 2.0, 14.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : m.data) {
    v = v ? 1 : 0;
    if (u(rng) < 0.01) v = 1 - v;  // isolated specks stress the envelope
  }
  // guarantee both classes
  m.at(0, 0) = 1;
  m.at(h - 1, w - 1) = 0;
  return m;
}

}  // namespace gs4d::testing
