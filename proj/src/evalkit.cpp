#include "gs4d/evalkit.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gs4d {

Psnr psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  if (a.data.empty()) throw std::invalid_argument("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  if (se == 0.0) return {};
  const double mse = se / static_cast<double>(a.data.size());
  return {10.0 * std::log10(1.0 / mse), false};
}

SegMetrics seg_metrics(std::span<const LabelMap> pred, std::span<const LabelMap> gt, int instances) {
  if (pred.size() != gt.size()) throw std::invalid_argument("seg_metrics: frame count mismatch");
  SegMetrics out;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (!pred[f].same_shape(gt[f])) throw std::invalid_argument("seg_metrics: mask shape mismatch");
    std::vector<long> tp(instances + 1, 0), np(instances + 1, 0), ng(instances + 1, 0);
    for (std::size_t p = 0; p < pred[f].data.size(); ++p) {
      const int a = pred[f].data[p], b = gt[f].data[p];
      if (a > instances || b > instances) throw std::invalid_argument("seg_metrics: label out of range");
      ++np[a];
      ++ng[b];
      if (a == b) ++tp[a];
    }
    for (int d = 1; d <= instances; ++d) {
      if (np[d] == 0 && ng[d] == 0) continue;
      const double iou = static_cast<double>(tp[d]) / static_cast<double>(np[d] + ng[d] - tp[d]);
      const double recall = ng[d] > 0 ? static_cast<double>(tp[d]) / ng[d] : 0.0;
      const double precision = np[d] > 0 ? static_cast<double>(tp[d]) / np[d] : 0.0;
      const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
      out.miou += iou;
      out.recall += recall;
      out.f1 += f1;
      ++out.pairs;
    }
  }
  if (out.pairs > 0) {
    out.miou /= out.pairs;
    out.recall /= out.pairs;
    out.f1 /= out.pairs;
  }
  return out;
}

namespace {

int argmax_row(const Eigen::MatrixXd& m, Eigen::Index r) {
  int best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = static_cast<int>(c);
  return best;
}

}  // namespace

LabelMap predict_labels(const RenderTarget& t, const Mlp& classifier) {
  std::vector<int> px(t.alpha.pixels());
  for (std::size_t p = 0; p < px.size(); ++p) px[p] = static_cast<int>(p);
  const Eigen::MatrixXd logits = mlp_forward(classifier, normalized_features(t, px));
  LabelMap out(t.height, t.width, 1);
  for (std::size_t p = 0; p < px.size(); ++p)
    out.data[p] = t.alpha.data[p] > kAlphaFloor ? static_cast<std::uint8_t>(argmax_row(logits, p)) : 0;
  return out;
}

std::vector<int> primitive_labels(std::span<const GaussianPrimitive> prims, const Mlp& classifier) {
  std::vector<int> out(prims.size(), 0);
  if (prims.empty()) return out;
  const Eigen::MatrixXd logits = mlp_forward(classifier, feature_rows(prims));
  for (std::size_t i = 0; i < prims.size(); ++i) out[i] = argmax_row(logits, i);
  return out;
}

std::vector<std::optional<Vec3>> instance_centroids(std::span<const GaussianPrimitive> prims,
                                                    std::span<const int> labels, int instances) {
  std::vector<Vec3> sum(instances + 1, Vec3::Zero());
  std::vector<int> n(instances + 1, 0);
  for (std::size_t i = 0; i < prims.size(); ++i)
    if (labels[i] >= 1 && labels[i] <= instances) {
      sum[labels[i]] += prims[i].position;
      ++n[labels[i]];
    }
  std::vector<std::optional<Vec3>> out(instances);
  for (int d = 1; d <= instances; ++d)
    if (n[d] > 0) out[d - 1] = sum[d] / n[d];
  return out;
}

std::string metrics_json(const std::vector<FrameRow>& rows) {
  nlohmann::json j;
  j["frames"] = nlohmann::json::array();
  double ps = 0.0, ss = 0.0, mi = 0.0, re = 0.0, f1 = 0.0;
  int finite = 0;
  for (const auto& r : rows) {
    nlohmann::json f;
    f["frame"] = r.frame;
    if (r.psnr.exact)
      f["psnr"] = "exact";
    else
      f["psnr"] = r.psnr.db;
    f["ssim"] = r.ssim;
    f["miou"] = r.seg.miou;
    f["recall"] = r.seg.recall;
    f["f1"] = r.seg.f1;
    j["frames"].push_back(f);
    if (!r.psnr.exact) {
      ps += r.psnr.db;
      ++finite;
    }
    ss += r.ssim;
    mi += r.seg.miou;
    re += r.seg.recall;
    f1 += r.seg.f1;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  j["mean"] = {{"psnr", finite ? ps / finite : 0.0}, {"ssim", ss / n}, {"miou", mi / n}, {"recall", re / n}, {"f1", f1 / n}};
  if (!rows.empty())
    j["min_psnr"] = std::min_element(rows.begin(), rows.end(), [](const FrameRow& a, const FrameRow& b) {
                      return a.psnr.db < b.psnr.db;
                    })->psnr.db;
  return j.dump(2);
}

std::string svg_line_chart(const std::string& title, const std::vector<int>& x,
                           const std::vector<ChartSeries>& series, std::optional<double> threshold,
                           const std::vector<std::pair<int, int>>& intervals) {
  const double W = 640, H = 320, L = 56, R = 16, T = 32, B = 40;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (threshold) {
    lo = std::min(lo, *threshold);
    hi = std::max(hi, *threshold);
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const int x0 = x.empty() ? 0 : x.front(), x1 = x.empty() ? 1 : std::max(x.back(), x.front() + 1);
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  for (const auto& iv : intervals)
    o << "<rect x=\"" << px(iv.first - 0.5) << "\" y=\"" << T << "\" width=\"" << px(iv.second + 0.5) - px(iv.first - 0.5)
      << "\" height=\"" << H - T - B << "\" fill=\"#ffd54f\" opacity=\"0.35\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  const int step = std::max(1, static_cast<int>(x.size()) / 10);
  for (std::size_t i = 0; i < x.size(); i += step)
    o << "<text x=\"" << px(x[i]) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << x[i] << "</text>\n";
  o << "<text x=\"" << (W + L) / 2 << "\" y=\"" << H - 6 << "\" text-anchor=\"middle\">frame</text>\n";
  if (threshold)
    o << "<line x1=\"" << L << "\" y1=\"" << py(*threshold) << "\" x2=\"" << W - R << "\" y2=\"" << py(*threshold)
      << "\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    o << "<polyline fill=\"none\" stroke=\"" << colors[s % 5] << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < x.size() && i < series[s].values.size(); ++i)
      if (std::isfinite(series[s].values[i])) o << px(x[i]) << "," << py(series[s].values[i]) << " ";
    o << "\"/>\n";
    o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (s + 1) << "\" text-anchor=\"end\" fill=\"" << colors[s % 5]
      << "\">" << series[s].name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string metrics_html(const std::vector<FrameRow>& rows, const std::string& title) {
  std::vector<int> x;
  ChartSeries p{"PSNR (dB)", {}}, m{"mIoU", {}}, s{"SSIM", {}};
  for (const auto& r : rows) {
    x.push_back(r.frame);
    p.values.push_back(r.psnr.exact ? std::numeric_limits<double>::quiet_NaN() : r.psnr.db);
    m.values.push_back(r.seg.miou);
    s.values.push_back(r.ssim);
  }
  std::ostringstream o;
  o.precision(5);
  o << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << title
    << "</title>\n<style>body{font-family:sans-serif;margin:24px}table{border-collapse:collapse}"
       "td,th{border:1px solid #ccc;padding:3px 8px;text-align:right}</style></head><body>\n";
  o << "<h1>" << title << "</h1>\n";
  o << svg_line_chart("PSNR per frame", x, {p}) << svg_line_chart("Segmentation per frame", x, {m, s});
  o << "<table><tr><th>frame</th><th>PSNR</th><th>SSIM</th><th>mIoU</th><th>recall</th><th>F1</th></tr>\n";
  for (const auto& r : rows) {
    o << "<tr><td>" << r.frame << "</td><td>";
    if (r.psnr.exact)
      o << "exact";
    else
      o << r.psnr.db;
    o << "</td><td>" << r.ssim << "</td><td>" << r.seg.miou << "</td><td>" << r.seg.recall << "</td><td>" << r.seg.f1
      << "</td></tr>\n";
  }
  o << "</table>\n</body></html>\n";
  return o.str();
}

}  // namespace gs4d
