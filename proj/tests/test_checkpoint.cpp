#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gs4d/checkpoint.hpp"
#include "gs4d/image.hpp"
#include "test_util.hpp"

#include <cstring>

using namespace gs4d;
using namespace gs4d::testing;

namespace {

Checkpoint random_checkpoint(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Checkpoint c;
  c.scene.bg = random_primitives(rng, 7);
  c.scene.fg = random_primitives(rng, 5);
  c.scene.snapshot_bg_reference();
  c.scene.bg_reference[2].opacity_logit += 0.25;  // reference differs from the live state
  c.scene.frame_index = 4;
  c.classifier = make_head(3, rng);
  c.semantic = make_head(6, rng);
  Autoencoder ae;
  ae.enc_w = Eigen::MatrixXd::Random(6, 10);
  ae.enc_b = Eigen::VectorXd::Random(6);
  ae.dec_w = Eigen::MatrixXd::Random(10, 6);
  ae.dec_b = Eigen::VectorXd::Random(10);
  c.autoencoder = ae;
  c.cameras = {test_camera(), look_at(Vec3(3, 0, -3), Vec3::Zero(), Vec3(0, -1, 0), 30.5, 32, 24)};
  c.fg_ids = {0, 1, 2, 9, 11};
  c.next_id = 12;
  c.meta = R"({"stage":"track"})";
  return c;
}

void check_same(const Checkpoint& a, const Checkpoint& b) {
  CHECK(a.scene.bg == b.scene.bg);
  CHECK(a.scene.fg == b.scene.fg);
  REQUIRE(a.scene.bg_reference.size() == b.scene.bg_reference.size());
  for (std::size_t i = 0; i < a.scene.bg_reference.size(); ++i) {
    CHECK(a.scene.bg_reference[i].sh == b.scene.bg_reference[i].sh);
    CHECK(a.scene.bg_reference[i].opacity_logit == b.scene.bg_reference[i].opacity_logit);
  }
  CHECK(a.scene.frame_index == b.scene.frame_index);
  REQUIRE(a.classifier.has_value() == b.classifier.has_value());
  if (a.classifier) {
    REQUIRE(a.classifier->layers.size() == b.classifier->layers.size());
    for (std::size_t l = 0; l < a.classifier->layers.size(); ++l) {
      CHECK(a.classifier->layers[l].weight == b.classifier->layers[l].weight);
      CHECK(a.classifier->layers[l].bias == b.classifier->layers[l].bias);
      CHECK(a.classifier->layers[l].activation == b.classifier->layers[l].activation);
    }
  }
  REQUIRE(a.autoencoder.has_value() == b.autoencoder.has_value());
  if (a.autoencoder) {
    CHECK(a.autoencoder->enc_w == b.autoencoder->enc_w);
    CHECK(a.autoencoder->dec_b == b.autoencoder->dec_b);
  }
  REQUIRE(a.cameras.size() == b.cameras.size());
  for (std::size_t i = 0; i < a.cameras.size(); ++i) {
    CHECK(a.cameras[i].K == b.cameras[i].K);
    CHECK(a.cameras[i].R == b.cameras[i].R);
    CHECK(a.cameras[i].t == b.cameras[i].t);
  }
  CHECK(a.fg_ids == b.fg_ids);
  CHECK(a.next_id == b.next_id);
  CHECK(a.meta == b.meta);
}

}  // namespace

TEST_CASE("quantised checkpoint survives save and load bit for bit") {
  Checkpoint c = random_checkpoint(1);
  quantize(c.scene);
  quantize(*c.classifier);
  quantize(*c.semantic);
  quantize(*c.autoencoder);
  for (auto& r : c.scene.bg_reference) {
    for (Eigen::Index k = 0; k < r.sh.size(); ++k) r.sh.data()[k] = static_cast<float>(r.sh.data()[k]);
    r.opacity_logit = static_cast<float>(r.opacity_logit);
  }
  TempDir dir("ckpt");
  save_checkpoint(dir.path / "a.g4d", c);
  const Checkpoint back = load_checkpoint(dir.path / "a.g4d");
  check_same(c, back);
  // and encoding is a pure function of the state
  CHECK(encode_checkpoint(back) == slurp(dir.path / "a.g4d"));
}

TEST_CASE("quantize is idempotent and matches float32 rounding") {
  std::mt19937_64 rng(2);
  GaussianPrimitive g = random_primitives(rng, 1)[0];
  const double x = g.position.x();
  quantize(g);
  CHECK(g.position.x() == static_cast<double>(static_cast<float>(x)));
  GaussianPrimitive h = g;
  quantize(h);
  CHECK(h == g);
}

TEST_CASE("header layout: magic, count, feature flag, frame index") {
  Checkpoint c = random_checkpoint(3);
  const std::string bytes = encode_checkpoint(c);
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 4) == "G4D1");
  std::uint32_t count, has_feature, frame;
  std::memcpy(&count, bytes.data() + 4, 4);
  std::memcpy(&has_feature, bytes.data() + 8, 4);
  std::memcpy(&frame, bytes.data() + 12, 4);
  CHECK(count == 12);
  CHECK(has_feature == 1);
  CHECK(frame == 4);
  // 67 float32 per record
  CHECK(bytes.size() > 16 + 12 * 67 * 4);
}

TEST_CASE("unknown trailing section is skipped") {
  Checkpoint c = random_checkpoint(4);
  quantize(c.scene);
  std::string bytes = encode_checkpoint(c);
  const std::string name = "future_extension";
  const std::string payload = "opaque payload";
  const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
  const std::uint64_t plen = payload.size();
  bytes.append(reinterpret_cast<const char*>(&nlen), 4);
  bytes += name;
  bytes.append(reinterpret_cast<const char*>(&plen), 8);
  bytes += payload;
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.scene.fg == c.scene.fg);
  CHECK(back.meta == c.meta);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string good = encode_checkpoint(random_checkpoint(5));
  SUBCASE("bad magic") {
    std::string b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(b), IoError);
  }
  SUBCASE("truncated records") { CHECK_THROWS_AS(decode_checkpoint(good.substr(0, 200)), IoError); }
  SUBCASE("count larger than the file") {
    std::string b = good;
    const std::uint32_t huge = 1u << 30;
    std::memcpy(b.data() + 4, &huge, 4);
    CHECK_THROWS_AS(decode_checkpoint(b), IoError);
  }
}

TEST_CASE("checkpoint without heads or feature round-trips") {
  std::mt19937_64 rng(6);
  Checkpoint c;
  c.scene.bg = random_primitives(rng, 3);
  for (auto& g : c.scene.bg) g.feature.setZero();
  quantize(c.scene);
  c.scene.snapshot_bg_reference();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  check_same(c, back);
  CHECK(back.scene.fg.empty());
}

TEST_CASE("standalone autoencoder file round-trips") {
  Checkpoint c = random_checkpoint(7);
  Autoencoder ae = *c.autoencoder;
  quantize(ae);
  TempDir dir("ae");
  save_autoencoder(dir.path / "ae.bin", ae);
  const Autoencoder back = load_autoencoder(dir.path / "ae.bin");
  CHECK(back.enc_w == ae.enc_w);
  CHECK(back.enc_b == ae.enc_b);
  CHECK(back.dec_w == ae.dec_w);
  CHECK(back.dec_b == ae.dec_b);
  save_checkpoint(dir.path / "none.g4d", Checkpoint{});
  CHECK_THROWS_AS(load_autoencoder(dir.path / "none.g4d"), IoError);
}
