#pragma once

#include "gs4d/image.hpp"
#include "gs4d/scene.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace gs4d {

// Binary 0/1 map of pixels carrying `label`.
LabelMap instance_mask(const LabelMap& labels, int label);

// Squared Euclidean distance from every pixel to the nearest pixel where `on` is nonzero
// (exact two-pass lower-envelope transform). Pixels of an empty set get +inf.
std::vector<double> squared_distance_transform(const LabelMap& on);

// Signed distance field of a binary mask in pixel units: positive outside (distance to
// the nearest foreground pixel centre), non-positive inside (minus the distance to the
// nearest background pixel centre). A full-frame mask treats the area outside the image
// as background. Throws std::invalid_argument naming `instance_id` for an empty mask.
Image signed_distance_field(const LabelMap& mask, int instance_id = 0);

// |a & b| / |a | b| for binary maps; 1 when both are empty.
double mask_iou(const LabelMap& a, const LabelMap& b);

// Bilinear sample of channel `c`, coordinates clamped to the image. When `gradient` is
// given it receives the derivative of the interpolant w.r.t. (u, v) (zero on clamped axes).
double sample_bilinear(const Image& image, double u, double v, int c = 0,
                       Vec2* gradient = nullptr, bool* clamped = nullptr);

}  // namespace gs4d
