#include "gs4d/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace gs4d {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

PngData read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto bit_depth = png_get_bit_depth(png, info);
  const auto color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  PngData out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y)
    rows[y] = out.pixels.data() + static_cast<std::size_t>(y) * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, int width, int height, int channels,
               const std::uint8_t* pixels) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": PNG write failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void put_u32(std::string& s, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

std::uint32_t get_u32(const std::string& s, std::size_t offset) {
  std::uint32_t v;
  std::memcpy(&v, s.data() + offset, 4);
  return v;
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
  const PngData png = read_png(path);
  Image img(png.height, png.width, 3);
  for (std::size_t p = 0; p < img.pixels(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const int src = png.channels == 1 ? 0 : c;
      img.data[p * 3 + c] = png.pixels[p * png.channels + src] / 255.0;
    }
  }
  return img;
}

void write_png_rgb(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw IoError("write_png_rgb expects 3 channels");
  std::vector<std::uint8_t> px(image.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::clamp(image.data[i], 0.0, 1.0);
    px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_png(path, image.width, image.height, 3, px.data());
}

LabelMap read_png_labels(const std::filesystem::path& path) {
  const PngData png = read_png(path);
  if (png.channels != 1) throw IoError(path.string() + ": label PNG must be single-channel");
  LabelMap m(png.height, png.width, 1);
  m.data = png.pixels;
  return m;
}

void write_png_labels(const std::filesystem::path& path, const LabelMap& labels) {
  write_png(path, labels.width, labels.height, 1, labels.data.data());
}

std::pair<int, int> png_size(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  std::uint8_t head[24];
  if (std::fread(head, 1, 24, file.get()) != 24 || png_sig_cmp(head, 0, 8) != 0)
    throw IoError(path.string() + ": not a PNG file");
  auto be = [&](int off) {
    return (static_cast<std::uint32_t>(head[off]) << 24) | (head[off + 1] << 16) |
           (head[off + 2] << 8) | head[off + 3];
  };
  return {static_cast<int>(be(16)), static_cast<int>(be(20))};
}

void write_f32m(const std::filesystem::path& path, const Raster<float>& r) {
  std::string bytes = "F32M";
  put_u32(bytes, static_cast<std::uint32_t>(r.height));
  put_u32(bytes, static_cast<std::uint32_t>(r.width));
  put_u32(bytes, static_cast<std::uint32_t>(r.channels));
  const std::size_t n = r.pixels();
  std::vector<float> planar(r.data.size());
  for (int c = 0; c < r.channels; ++c)
    for (std::size_t p = 0; p < n; ++p) planar[c * n + p] = r.data[p * r.channels + c];
  bytes.append(reinterpret_cast<const char*>(planar.data()), planar.size() * sizeof(float));
  write_file_atomic(path, bytes);
}

F32mHeader read_f32m_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string head(16, '\0');
  in.read(head.data(), 16);
  if (in.gcount() != 16 || head.compare(0, 4, "F32M") != 0)
    throw IoError(path.string() + ": missing F32M header");
  return {static_cast<int>(get_u32(head, 4)), static_cast<int>(get_u32(head, 8)),
          static_cast<int>(get_u32(head, 12))};
}

Raster<float> read_f32m(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || bytes.compare(0, 4, "F32M") != 0)
    throw IoError(path.string() + ": missing F32M header");
  const int h = static_cast<int>(get_u32(bytes, 4));
  const int w = static_cast<int>(get_u32(bytes, 8));
  const int c = static_cast<int>(get_u32(bytes, 12));
  Raster<float> r(h, w, c);
  const std::size_t n = r.pixels();
  if (bytes.size() != 16 + r.data.size() * sizeof(float))
    throw IoError(path.string() + ": F32M payload size does not match header");
  std::vector<float> planar(r.data.size());
  std::memcpy(planar.data(), bytes.data() + 16, planar.size() * sizeof(float));
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < n; ++p) r.data[p * c + ch] = planar[ch * n + p];
  return r;
}

Raster<float> to_float(const Image& image) {
  Raster<float> r(image.height, image.width, image.channels);
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = static_cast<float>(image.data[i]);
  return r;
}

Image to_double(const Raster<float>& raster) {
  Image r(raster.height, raster.width, raster.channels);
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = raster.data[i];
  return r;
}

void write_vectors(const std::filesystem::path& path, const VectorFile& v) {
  if (v.data.size() != static_cast<std::size_t>(v.count) * v.dim)
    throw IoError("vector file shape mismatch for " + path.string());
  std::string bytes;
  put_u32(bytes, static_cast<std::uint32_t>(v.count));
  put_u32(bytes, static_cast<std::uint32_t>(v.dim));
  bytes.append(reinterpret_cast<const char*>(v.data.data()), v.data.size() * sizeof(float));
  write_file_atomic(path, bytes);
}

VectorFile read_vectors(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw IoError(path.string() + ": truncated vector file");
  VectorFile v;
  v.count = static_cast<int>(get_u32(bytes, 0));
  v.dim = static_cast<int>(get_u32(bytes, 4));
  const std::size_t n = static_cast<std::size_t>(v.count) * v.dim;
  if (bytes.size() != 8 + n * sizeof(float))
    throw IoError(path.string() + ": vector payload size does not match header");
  v.data.resize(n);
  std::memcpy(v.data.data(), bytes.data() + 8, n * sizeof(float));
  return v;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gs4d
