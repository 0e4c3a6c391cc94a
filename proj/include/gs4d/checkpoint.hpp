#pragma once

#include "gs4d/neural_heads.hpp"
#include "gs4d/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gs4d {

// On-disk container: magic "G4D1", little-endian header {u32 count, u32 has_feature,
// u32 frame_index}, `count` fixed records (p 3, q 4, log_scale 3, opacity_logit 1,
// sh 48 coefficient-major RGB, f 8; all f32), then named sections
// {u32 name_len, name, u64 len, payload}. Background primitives come first; the
// "layers" section stores the split.
struct Checkpoint {
  SceneModel scene;
  std::optional<Mlp> classifier;
  std::optional<Mlp> semantic;
  std::optional<Autoencoder> autoencoder;
  std::vector<Camera> cameras;
  // Stable identity of each fg primitive; clones get fresh ids.
  std::vector<std::uint64_t> fg_ids;
  std::uint64_t next_id = 0;
  std::string meta;  // free-form JSON
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

// Round every stored parameter to float32 so that the in-memory state equals what a
// save/load round trip yields.
void quantize(GaussianPrimitive& g);
void quantize(SceneModel& scene);
void quantize(Mlp& mlp);
void quantize(Autoencoder& ae);

// Standalone autoencoder file (same container, no primitives).
void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae);
Autoencoder load_autoencoder(const std::filesystem::path& path);

}  // namespace gs4d
