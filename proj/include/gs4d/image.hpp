#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gs4d {

// Interleaved H x W x C buffer.
template <typename T>
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const Raster& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  T& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  const T& at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  T* pixel(std::size_t p) { return data.data() + p * channels; }
  const T* pixel(std::size_t p) const { return data.data() + p * channels; }

  bool operator==(const Raster&) const = default;
};

using Image = Raster<double>;
using LabelMap = Raster<std::uint8_t>;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit PNG. Color images are read as 3 channels in [0,1]; gray PNGs as label maps.
Image read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Image& image);
LabelMap read_png_labels(const std::filesystem::path& path);
void write_png_labels(const std::filesystem::path& path, const LabelMap& labels);
// Width/height from the PNG header without decoding pixels.
std::pair<int, int> png_size(const std::filesystem::path& path);

struct F32mHeader {
  int height = 0;
  int width = 0;
  int channels = 0;
};

// "F32M" raw planar float32: 16-byte header {magic, H, W, C} then C planes of H*W values.
void write_f32m(const std::filesystem::path& path, const Raster<float>& raster);
Raster<float> read_f32m(const std::filesystem::path& path);
F32mHeader read_f32m_header(const std::filesystem::path& path);

Raster<float> to_float(const Image& image);
Image to_double(const Raster<float>& raster);

// Raw float32 vectors with a {count, dim} uint32 header.
struct VectorFile {
  int count = 0;
  int dim = 0;
  std::vector<float> data;
};
void write_vectors(const std::filesystem::path& path, const VectorFile& vectors);
VectorFile read_vectors(const std::filesystem::path& path);

// Writes via a temporary sibling and renames into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace gs4d
