#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradient_suite.hpp"
#include "gs4d/losses.hpp"
#include "gs4d/mask_geometry.hpp"

#include <cmath>
#include <random>

using namespace gs4d;
using namespace gs4d::testing;

namespace {

// Direct windowed SSIM: every pixel sums its own 11x11 neighbourhood.
double naive_ssim(const Image& a, const Image& b) {
  double g1[11], s = 0.0;
  for (int i = 0; i < 11; ++i) {
    g1[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
    s += g1[i];
  }
  for (double& v : g1) v /= s;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= a.height || xx >= a.width) continue;
            const double w = g1[dy + 5] * g1[dx + 5];
            const double va = a.at(yy, xx, c), vb = b.at(yy, xx, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        saa -= ma * ma;
        sbb -= mb * mb;
        sab -= ma * mb;
        total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
      }
  return total / static_cast<double>(a.data.size());
}

void check_report(const GradReport& r) {
  INFO(r.name << ": " << r.failed << "/" << r.checked << " failed; " << r.first_failure);
  CHECK(r.ok());
}

}  // namespace

TEST_CASE("weights: defaults and validation") {
  LossWeights w;
  CHECK(w.iso == 0.0005);
  CHECK(w.size == 0.02);
  CHECK(w.dssim_mix == 0.2);
  CHECK_NOTHROW(w.validate());
  w.sdf = -1.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("color_loss: null case, pure L1 and empty mask") {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, 9, 10, 3, 0.5);
  CHECK(color_loss(a, a, 0.2).value == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  Image b(9, 10, 3, 0.3), c(9, 10, 3, 0.4);
  CHECK(color_loss(b, c, 0.0).value == doctest::Approx(0.1).epsilon(1e-12));
  LabelMap empty(9, 10, 1);
  const ImageLoss l = color_loss(b, c, 0.2, &empty);
  CHECK(l.value == 0.0);
  for (double v : l.grad.data) CHECK(v == 0.0);
}

TEST_CASE("color_loss: masked variant ignores and does not push unmasked pixels") {
  std::mt19937_64 rng(2);
  Image a = random_image(rng, 12, 12, 3), b = random_image(rng, 12, 12, 3);
  LabelMap m(12, 12, 1);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 6; ++x) m.at(y, x) = 1;
  const ImageLoss l = color_loss(a, b, 0.2, &m);
  Image a2 = a;
  for (int y = 0; y < 12; ++y)
    for (int x = 6; x < 12; ++x)
      for (int c = 0; c < 3; ++c) {
        a2.at(y, x, c) += 5.0;
        CHECK(l.grad.at(y, x, c) == 0.0);
      }
  CHECK(color_loss(a2, b, 0.2, &m).value == l.value);
}

TEST_CASE("ssim: matches a naive windowed implementation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    Image a(16, 16, 3), b(16, 16, 3);
    for (auto& v : a.data) v = u(rng);
    for (std::size_t k = 0; k < b.data.size(); ++k) b.data[k] = 0.7 * a.data[k] + 0.3 * u(rng);
    CHECK(std::abs(ssim(a, b) - naive_ssim(a, b)) < 1e-6);
  }
  Image a(16, 16, 1, 0.5);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("iso/size: null case and worked example") {
  std::vector<GaussianPrimitive> p(3);
  for (auto& g : p) g.log_scale = Vec3::Constant(std::log(0.01));
  auto v = iso_size_losses(p, 0.05, 1, 1, nullptr);
  CHECK(v.iso == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  CHECK(v.size == 0.0);
  std::vector<GaussianPrimitive> q(1);
  q[0].log_scale = Vec3(std::log(2.0), 0.0, 0.0);
  v = iso_size_losses(q, 1.5, 1, 1, nullptr);
  CHECK(v.iso == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(v.size == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("id_loss: one-hot correct, uniform three classes, out-of-range label") {
  Eigen::MatrixXd z(2, 3);
  z << 50, -50, -50, -50, -50, 50;
  std::vector<int> y{0, 2};
  CHECK(id_loss(z, y).value < 1e-20);
  const Eigen::MatrixXd u = Eigen::MatrixXd::Zero(4, 3);
  std::vector<int> y4{0, 1, 2, 1};
  CHECK(id_loss(u, y4).value == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  const RowLoss l = id_loss(u, y4);
  CHECK(l.grad(1, 1) == doctest::Approx((1.0 / 3.0 - 1.0) / 4.0).epsilon(1e-14));
  std::vector<int> bad{0, 3};
  CHECK_THROWS_AS(id_loss(z, bad), std::invalid_argument);
}

TEST_CASE("emb_loss: null case, arithmetic example, subgradient") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 6), b = a;
  std::vector<std::uint8_t> valid{1, 0};
  CHECK(emb_loss(a, b, valid).value == 0.0);
  a.row(0).setConstant(0.1);
  a.row(1).setConstant(7.0);  // invalid row is ignored
  const RowLoss l = emb_loss(a, b, valid);
  CHECK(l.value == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(l.grad(0, 3) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(l.grad(1, 3) == 0.0);
}

TEST_CASE("kl3d: identical distributions and the two-point closed form") {
  Eigen::MatrixXd z = Eigen::MatrixXd::Constant(5, 3, 0.3);
  std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(1, 1, 1)};
  const auto nb = knn_neighbors(pts, 4);
  std::vector<int> all{0, 1, 2, 3, 4};
  CHECK(kl3d_loss(z, all, nb).value == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  Eigen::MatrixXd two(2, 2);
  two << 100.0, -100.0, 0.0, 0.0;  // P_0 = (1, 0), P_1 = (0.5, 0.5)
  std::vector<std::vector<int>> nb2{{1}, {0}};
  std::vector<int> s{0};
  CHECK(kl3d_loss(two, s, nb2).value == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("arap: rigid motion and pure translation are in the null space") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  const int n = 40;
  std::vector<Vec3> p0(n), p1(n), p2(n);
  std::vector<Vec4> q0(n), q1(n);
  const Vec4 r0 = random_unit_quat(rng);
  const Mat3 rot = quat_to_rotation(r0);
  const Vec3 tr(0.3, -0.2, 0.5);
  for (int i = 0; i < n; ++i) {
    p0[i] = Vec3(u(rng), u(rng), u(rng));
    q0[i] = random_unit_quat(rng);
    p1[i] = rot * p0[i] + tr;
    q1[i] = quat_multiply(r0, q0[i]);
    p2[i] = p0[i] + tr;
  }
  const auto nb = knn_neighbors(p0, 4);
  CHECK(arap_loss({p1, q1, p0, q0, &nb, 0.5}).value < 1e-20);
  CHECK(arap_loss({p2, q0, p0, q0, &nb, 0.5}).value < 1e-20);
  p2[3] += Vec3(0.1, 0, 0);
  CHECK(arap_loss({p2, q0, p0, q0, &nb, 0.5}).value > 1e-4);
}

TEST_CASE("sdf_loss: inside is free, three pixels outside costs nine") {
  const Camera cam = test_camera(32);
  LabelMap m(32, 32, 1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 16; ++x) m.at(y, x) = 1;
  std::vector<std::vector<Image>> sdf{{signed_distance_field(m, 1)}};
  std::vector<GaussianPrimitive> fg(2);
  fg[0].position = cam.back_project(Vec2(10.0, 12.0), 4.0);
  fg[1].position = cam.back_project(Vec2(18.0, 20.0), 4.0);  // Phi = 3 at column 18
  std::vector<Camera> cams{cam};
  std::vector<int> inside{1, 0};
  CHECK(sdf_loss(fg, inside, sdf, cams, 1.0, nullptr, 0) == 0.0);
  std::vector<int> labels{1, 1};
  CHECK(sdf_loss(fg, labels, sdf, cams, 1.0, nullptr, 0) == doctest::Approx(9.0).epsilon(1e-9));
  std::vector<int> missing{2, 1};
  CHECK_THROWS_AS(sdf_loss(fg, missing, sdf, cams, 1.0, nullptr, 0), std::invalid_argument);
}

TEST_CASE("temporal: null case, scalar drift and count mismatch") {
  std::mt19937_64 rng(5);
  auto fg = random_primitives(rng, 4);
  CHECK(temporal_fg_loss(fg, fg, 1.0, nullptr, 0) == 0.0);
  auto moved = fg;
  moved[2].opacity_logit += 0.3;
  CHECK(temporal_fg_loss(moved, fg, 1.0, nullptr, 0) == doctest::Approx(0.09 / 4).epsilon(1e-12));
  Gradients g(4);
  temporal_fg_loss(moved, fg, 1.0, &g, 0);
  CHECK(g.opacity_logit[2] == doctest::Approx(2 * 0.3 / 4).epsilon(1e-12));
  CHECK_THROWS_AS(temporal_fg_loss(moved, std::span(fg).first(3), 1.0, nullptr, 0), std::invalid_argument);
  std::vector<AppearanceSnapshot> ref;
  for (const auto& x : fg) ref.push_back(appearance_of(x));
  CHECK(temporal_bg_loss(fg, ref, 1.0, nullptr) == 0.0);
  CHECK_THROWS_AS(temporal_bg_loss(fg, std::span(ref).first(2), 1.0, nullptr), std::invalid_argument);
}

TEST_CASE("breakdown: total is the weighted sum and serialises as one JSON line") {
  LossBreakdown b;
  b.add("color", 1.0, 0.25);
  b.add("sdf", 0.01, 3.0);
  CHECK(b.total() == doctest::Approx(0.28).epsilon(1e-15));
  const std::string line = b.json_line("train", 7);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.find("\"sdf\":3.0") != std::string::npos);
}

TEST_CASE("gradients: every loss term against finite differences") {
  std::mt19937_64 rng(99);
  check_report(check_color(rng, 20));
  check_report(check_iso(rng, 20));
  check_report(check_size(rng, 20));
  check_report(check_id(rng, 20));
  check_report(check_emb(rng, 20));
  check_report(check_kl3d(rng, 20));
  check_report(check_arap(rng, 20));
  check_report(check_sdf(rng, 20));
  check_report(check_temporal_bg(rng, 20));
  check_report(check_temporal_fg(rng, 20));
}
