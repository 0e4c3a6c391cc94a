#pragma once

#include "gs4d/image.hpp"
#include "gs4d/neural_heads.hpp"
#include "gs4d/rasterizer.hpp"

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gs4d {

struct Psnr {
  double db = std::numeric_limits<double>::infinity();
  bool exact = true;  // identical inputs; db is +inf
};

// 10 log10(1 / MSE) over all pixels and channels. Throws on shape mismatch.
Psnr psnr(const Image& a, const Image& b);

struct SegMetrics {
  double miou = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int pairs = 0;  // (instance, frame) pairs that entered the averages
};

// Per (instance, frame) IoU, recall and F1, averaged over all pairs where the instance
// occurs in the prediction or the ground truth. With an empty ground truth recall and
// F1 count as 0.
SegMetrics seg_metrics(std::span<const LabelMap> predicted, std::span<const LabelMap> truth, int instances);

// Per-pixel argmax of the classification head on normalised rendered features; pixels
// with alpha at or below the feature floor are background.
LabelMap predict_labels(const RenderTarget& target, const Mlp& classifier);

// Argmax of the classification head on each primitive's own feature.
std::vector<int> primitive_labels(std::span<const GaussianPrimitive> prims, const Mlp& classifier);

// Mean position per label 1..instances; nullopt when no primitive carries the label.
std::vector<std::optional<Vec3>> instance_centroids(std::span<const GaussianPrimitive> prims,
                                                    std::span<const int> labels, int instances);

struct FrameRow {
  int frame = 0;
  Psnr psnr;
  double ssim = 0.0;
  SegMetrics seg;
};

std::string metrics_json(const std::vector<FrameRow>& rows);
std::string metrics_html(const std::vector<FrameRow>& rows, const std::string& title);

struct ChartSeries {
  std::string name;
  std::vector<double> values;
};

// Standalone SVG line chart over integer x (frames). Optional horizontal threshold and
// shaded [first, last] intervals.
std::string svg_line_chart(const std::string& title, const std::vector<int>& x,
                           const std::vector<ChartSeries>& series,
                           std::optional<double> threshold = std::nullopt,
                           const std::vector<std::pair<int, int>>& intervals = {});

}  // namespace gs4d
