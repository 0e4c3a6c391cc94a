#include "gs4d/mask_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>

namespace gs4d {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (q - v)^2 + f(v) over a 1D sampled function.
void envelope_1d(const double* f, int n, double* d, int* v, double* z) {
  int k = 0;
  int first = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] < kInf) {
      first = q;
      break;
    }
  }
  if (first < 0) {
    std::fill(d, d + n, kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = first + 1; q < n; ++q) {
    if (!(f[q] < kInf)) continue;
    double s;
    while (true) {
      const int r = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[r] + static_cast<double>(r) * r)) /
          (2.0 * (q - r));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

LabelMap instance_mask(const LabelMap& labels, int label) {
  LabelMap m(labels.height, labels.width, 1);
  for (std::size_t p = 0; p < m.data.size(); ++p) m.data[p] = labels.data[p] == label ? 1 : 0;
  return m;
}

std::vector<double> squared_distance_transform(const LabelMap& on) {
  const int h = on.height, w = on.width;
  const int n = std::max(h, w);
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (std::size_t p = 0; p < grid.size(); ++p) grid[p] = on.data[p] ? 0.0 : kInf;

  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  // columns first, then rows
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
    envelope_1d(f.data(), h, d.data(), v.data(), z.data());
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  for (int y = 0; y < h; ++y) {
    double* row = grid.data() + static_cast<std::size_t>(y) * w;
    std::copy(row, row + w, f.begin());
    envelope_1d(f.data(), w, d.data(), v.data(), z.data());
    std::copy(d.begin(), d.begin() + w, row);
  }
  return grid;
}

Image signed_distance_field(const LabelMap& mask, int instance_id) {
  std::size_t inside = 0;
  for (auto m : mask.data) inside += m ? 1 : 0;
  if (inside == 0) {
    throw std::invalid_argument("signed_distance_field: empty mask for instance " +
                                std::to_string(instance_id));
  }
  Image phi(mask.height, mask.width, 1);
  const auto outside_d2 = squared_distance_transform(mask);
  if (inside == mask.data.size()) {
    std::cerr << "warning: instance " << instance_id
              << " mask covers the full frame; using distance to the image border\n";
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        phi.at(y, x) = -static_cast<double>(
            1 + std::min({x, y, mask.width - 1 - x, mask.height - 1 - y}));
    return phi;
  }
  LabelMap complement(mask.height, mask.width, 1);
  for (std::size_t p = 0; p < mask.data.size(); ++p) complement.data[p] = mask.data[p] ? 0 : 1;
  const auto inside_d2 = squared_distance_transform(complement);
  for (std::size_t p = 0; p < mask.data.size(); ++p)
    phi.data[p] = mask.data[p] ? -std::sqrt(inside_d2[p]) : std::sqrt(outside_d2[p]);
  return phi;
}

double mask_iou(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("mask_iou: resolution mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < a.data.size(); ++p) {
    const bool x = a.data[p] != 0, y = b.data[p] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double sample_bilinear(const Image& img, double u, double v, int c, Vec2* gradient, bool* clamped) {
  const double umax = img.width - 1, vmax = img.height - 1;
  const bool cu = u < 0.0 || u > umax;
  const bool cv = v < 0.0 || v > vmax;
  if (clamped) *clamped = cu || cv;
  u = std::clamp(u, 0.0, umax);
  v = std::clamp(v, 0.0, vmax);
  const int x0 = std::min(static_cast<int>(std::floor(u)), std::max(0, img.width - 2));
  const int y0 = std::min(static_cast<int>(std::floor(v)), std::max(0, img.height - 2));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = u - x0, fy = v - y0;
  const double a = img.at(y0, x0, c), b = img.at(y0, x1, c);
  const double d = img.at(y1, x0, c), e = img.at(y1, x1, c);
  if (gradient) {
    *gradient = Vec2(cu ? 0.0 : (1.0 - fy) * (b - a) + fy * (e - d),
                     cv ? 0.0 : (1.0 - fx) * (d - a) + fx * (e - b));
  }
  return (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e);
}

}  // namespace gs4d
