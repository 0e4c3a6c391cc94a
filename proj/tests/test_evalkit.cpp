#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gs4d/evalkit.hpp"
#include "gs4d/losses.hpp"
#include "test_util.hpp"

#include <json.hpp>

using namespace gs4d;
using namespace gs4d::testing;

namespace {

LabelMap square(int size, int x0, int y0, int side, std::uint8_t label, LabelMap m = {}) {
  if (m.empty()) m = LabelMap(size, size, 1);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) m.at(y, x) = label;
  return m;
}

}  // namespace

TEST_CASE("psnr: identical images are exact") {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, 8, 8, 3);
  const Psnr p = psnr(a, a);
  CHECK(p.exact);
  CHECK(std::isinf(p.db));
}

TEST_CASE("psnr: uniform difference of 0.1 gives 20 dB") {
  Image a(6, 5, 3, 0.3), b(6, 5, 3, 0.4);
  const Psnr p = psnr(a, b);
  CHECK_FALSE(p.exact);
  CHECK(p.db == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("psnr: matches a per-pixel oracle and rejects shape mismatch") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(9, 7, 3), b(9, 7, 3);
  for (auto& x : a.data) x = u(rng);
  for (auto& x : b.data) x = u(rng);
  double se = 0.0;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 7; ++x)
      for (int c = 0; c < 3; ++c) se += (a.at(y, x, c) - b.at(y, x, c)) * (a.at(y, x, c) - b.at(y, x, c));
  CHECK(psnr(a, b).db == doctest::Approx(-10.0 * std::log10(se / (9 * 7 * 3))).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, Image(9, 8, 3)), std::invalid_argument);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("seg_metrics: prediction equal to the truth scores one") {
  const LabelMap gt = square(16, 2, 2, 5, 1, square(16, 9, 8, 4, 2));
  const SegMetrics m = seg_metrics(std::span<const LabelMap>(&gt, 1), std::span<const LabelMap>(&gt, 1), 2);
  CHECK(m.miou == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.pairs == 2);
}

TEST_CASE("seg_metrics: all-background prediction scores zero") {
  const LabelMap gt = square(16, 2, 2, 5, 1);
  const LabelMap pred(16, 16, 1);
  const SegMetrics m = seg_metrics(std::span<const LabelMap>(&pred, 1), std::span<const LabelMap>(&gt, 1), 1);
  CHECK(m.miou == 0.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
}

TEST_CASE("seg_metrics: half-overlapping squares give IoU 1/3, recall 1/2, F1 1/2") {
  // 4x4 squares shifted by two columns: 8 shared pixels, 24 in the union
  const LabelMap gt = square(16, 4, 4, 4, 1);
  const LabelMap pred = square(16, 6, 4, 4, 1);
  const SegMetrics m = seg_metrics(std::span<const LabelMap>(&pred, 1), std::span<const LabelMap>(&gt, 1), 1);
  CHECK(m.miou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(m.recall == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.f1 == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("seg_metrics: instances absent from both maps are skipped and frames average") {
  std::vector<LabelMap> gt{square(16, 0, 0, 4, 1), square(16, 0, 0, 4, 2)};
  std::vector<LabelMap> pred{square(16, 0, 0, 4, 1), square(16, 2, 0, 4, 2)};
  const SegMetrics m = seg_metrics(pred, gt, 3);
  CHECK(m.pairs == 2);
  CHECK(m.miou == doctest::Approx((1.0 + 1.0 / 3.0) / 2.0));
}

TEST_CASE("seg_metrics: invariant under a consistent label permutation") {
  std::mt19937_64 rng(3);
  std::vector<LabelMap> gt, pred;
  for (int f = 0; f < 3; ++f) {
    LabelMap g(20, 20, 1), p(20, 20, 1);
    for (auto& x : g.data) x = static_cast<std::uint8_t>(rng() % 4);
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = rng() % 3 ? g.data[i] : static_cast<std::uint8_t>(rng() % 4);
    gt.push_back(g);
    pred.push_back(p);
  }
  const std::uint8_t perm[] = {0, 3, 1, 2};
  auto permuted = [&](std::vector<LabelMap> v) {
    for (auto& m : v)
      for (auto& x : m.data) x = perm[x];
    return v;
  };
  const SegMetrics a = seg_metrics(pred, gt, 3);
  const SegMetrics b = seg_metrics(permuted(pred), permuted(gt), 3);
  CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-14));
  CHECK(a.recall == doctest::Approx(b.recall).epsilon(1e-14));
  CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-14));
}

TEST_CASE("metrics json and html carry every frame") {
  FrameRow a;
  a.frame = 0;
  a.psnr = {31.5, false};
  a.seg.miou = 0.9;
  FrameRow b = a;
  b.frame = 1;
  b.psnr = Psnr{};  // exact
  const auto j = nlohmann::json::parse(metrics_json({a, b}));
  REQUIRE(j["frames"].size() == 2);
  CHECK(j["frames"][0]["psnr"] == 31.5);
  const std::string html = metrics_html({a, b}, "t");
  CHECK(html.find("<svg") != std::string::npos);
  CHECK(html.find("31.5") != std::string::npos);
}

TEST_CASE("svg chart shades intervals and draws the threshold") {
  const std::string svg = svg_line_chart("x", {0, 1, 2, 3}, {{"s", {0, 0, 1, 1}}}, 0.5, {{2, 3}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("<rect") != std::string::npos);
  CHECK(svg.find("stroke-dasharray") != std::string::npos);
}
