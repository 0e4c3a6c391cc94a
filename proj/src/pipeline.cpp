#include "gs4d/pipeline.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace gs4d {

using json = nlohmann::json;

fs::path bg_checkpoint_path(const fs::path& out) { return out / "bg.g4d"; }

fs::path frame_checkpoint_path(const fs::path& out, int frame) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%04d.g4d", frame);
  return out / name;
}

TrainConfig load_config(const fs::path& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw std::runtime_error(path.string() + ": config file does not exist");
  try {
    return TrainConfig::from_json(read_file(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

AlignReport align_dataset(const fs::path& manifest_path) {
  DatasetManifest m = DatasetManifest::load(manifest_path);
  m.aligned_masks.clear();  // align from the raw masks even when run twice
  const Dataset data(m);
  AlignReport rep;
  std::vector<std::vector<LabelMap>> masks(data.views());
  for (int v = 0; v < data.views(); ++v) {
    for (int t = 0; t < data.frames(); ++t) masks[v].push_back(data.raw_mask(v, t));
    rep.mappings.push_back(match_canonical_to_view(data.canonical_for_view(v), masks[v][0]));
  }
  rep.zeroed_pixels = propagate_ids(rep.mappings, masks);
  m.aligned_masks = "aligned/v{v}_t{t}.png";
  fs::create_directories(m.resolve("aligned"));
  for (int v = 0; v < data.views(); ++v)
    for (int t = 0; t < data.frames(); ++t)
      write_png_labels(m.resolve(expand_template(m.aligned_masks, v, t)), masks[v][t]);
  m.save(manifest_path);
  return rep;
}

CompressReport compress_embeddings(const fs::path& manifest_path, const AutoencoderOptions& opt) {
  DatasetManifest m = DatasetManifest::load(manifest_path);
  m.codes.clear();
  m.autoencoder.clear();
  const Dataset data(m);
  if (data.instances() == 0) throw std::runtime_error("compress-emb: dataset has no instances");
  const int D = data.instances();
  std::vector<Eigen::MatrixXd> per_frame;
  for (int t = 0; t < data.frames(); ++t) per_frame.push_back(data.embeddings(t));
  Eigen::MatrixXd raw(D * data.frames(), per_frame[0].cols());
  for (int t = 0; t < data.frames(); ++t) raw.middleRows(t * D, D) = per_frame[t];
  AutoencoderFit fit = autoencoder_fit(raw, opt);
  quantize(fit.model);

  m.codes = "codes/t{t}.vec";
  m.autoencoder = "autoencoder.bin";
  fs::create_directories(m.resolve("codes"));
  for (int t = 0; t < data.frames(); ++t)
    write_vectors(m.resolve(expand_template(m.codes, 0, t)), from_matrix(fit.model.encode(per_frame[t])));
  save_autoencoder(m.resolve(m.autoencoder), fit.model);
  m.save(manifest_path);
  CompressReport r;
  r.mse = fit.mse;
  r.rows = static_cast<int>(raw.rows());
  r.min_cosine = fit.cosine.empty() ? 1.0 : *std::min_element(fit.cosine.begin(), fit.cosine.end());
  return r;
}

namespace {

std::string stage_meta(const std::string& stage, int frame, const TrainConfig& c) {
  json j;
  j["stage"] = stage;
  j["frame"] = frame;
  j["config"] = json::parse(c.to_json());
  return j.dump();
}

}  // namespace

StageReport run_init_bg(const fs::path& manifest_path, const TrainConfig& cfg, const fs::path& out,
                        std::ostream* log) {
  const Dataset data(manifest_path);
  TrainLog tl(log, cfg.log_interval);
  StageReport rep;
  Checkpoint ck;
  ck.scene = init_background(data, cfg, &tl, &rep);
  ck.cameras = data.cameras();
  ck.meta = stage_meta("bg", 0, cfg);
  fs::create_directories(out);
  save_checkpoint(bg_checkpoint_path(out), ck);
  return rep;
}

StageReport run_init_frame(const fs::path& manifest_path, const TrainConfig& cfg, const fs::path& out,
                           std::ostream* log) {
  const Dataset data(manifest_path);
  const fs::path bgp = bg_checkpoint_path(out);
  if (!fs::exists(bgp)) throw std::runtime_error(bgp.string() + ": background checkpoint missing; run init-bg first");
  const Checkpoint bg = load_checkpoint(bgp);
  Autoencoder ae;
  if (data.instances() > 0) {
    if (data.manifest().autoencoder.empty())
      throw std::runtime_error("init-frame: no autoencoder in the manifest; run compress-emb first");
    ae = load_autoencoder(data.manifest().resolve(data.manifest().autoencoder));
  }
  TrainLog tl(log, cfg.log_interval);
  StageReport rep;
  Checkpoint ck = init_first_frame(data, bg.scene, ae, cfg, &tl, &rep);
  ck.meta = stage_meta("init", 0, cfg);
  save_checkpoint(frame_checkpoint_path(out, 0), ck);
  return rep;
}

TrackReport run_track(const fs::path& manifest_path, const TrainConfig& cfg, const fs::path& out, int first,
                      int last, std::ostream* log) {
  const Dataset data(manifest_path);
  if (first < 1 || last < first || last >= data.frames())
    throw std::invalid_argument("track: frame range " + std::to_string(first) + ".." + std::to_string(last) +
                                " is outside 1.." + std::to_string(data.frames() - 1));
  TrackReport rep;
  int start = first;
  while (start <= last && fs::exists(frame_checkpoint_path(out, start))) ++start;
  rep.resumed_from = start - 1;
  if (start > last) return rep;
  const fs::path prev = frame_checkpoint_path(out, start - 1);
  if (!fs::exists(prev)) throw std::runtime_error(prev.string() + ": checkpoint of frame " + std::to_string(start - 1) + " missing");
  Checkpoint st = load_checkpoint(prev);
  TrainLog tl(log, cfg.log_interval);
  for (int t = start; t <= last; ++t) {
    rep.frames.push_back(track_frame(st, data, t, cfg, &tl));
    st.meta = stage_meta("track", t, cfg);
    save_checkpoint(frame_checkpoint_path(out, t), st);
  }
  return rep;
}

RenderReport run_render(const fs::path& checkpoint, const Camera& cam, const fs::path& png, const RenderOptions& o) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RasterConfig rc;
  rc.sh_degree = o.sh_degree;
  RenderReport rep;
  RenderTarget r;
  if (o.instance) {
    const int D = ck.classifier ? ck.classifier->output_dim() - 1 : 0;
    if (*o.instance < 1 || *o.instance > D)
      throw std::invalid_argument("render: instance " + std::to_string(*o.instance) + " outside 1.." + std::to_string(D));
    const std::vector<GaussianPrimitive> prims = instance_primitives(ck, *o.instance);
    r = rasterize(prims, cam, rc);
    rep.foreign_contributors = audit_instance_render(r, *ck.classifier, *o.instance);
    rep.primitives = static_cast<int>(prims.size());
  } else {
    r = rasterize(ck.scene, cam, rc);
    rep.primitives = static_cast<int>(ck.scene.bg.size() + ck.scene.fg.size());
  }
  if (!png.parent_path().empty()) fs::create_directories(png.parent_path());
  write_png_rgb(png, r.color);
  if (o.feature_out) write_f32m(*o.feature_out, to_float(r.feature));
  return rep;
}

std::vector<int> checkpoint_frames(const fs::path& dir) {
  std::vector<int> out;
  for (int t = 0; fs::exists(frame_checkpoint_path(dir, t)); ++t) out.push_back(t);
  return out;
}

QueryReport run_query(const fs::path& dir, const fs::path& query_path, const fs::path& out) {
  const VectorFile qf = read_vectors(query_path);
  if (qf.count != 1) throw std::invalid_argument(query_path.string() + ": expected exactly one query vector");
  const Eigen::VectorXd q = to_matrix(qf).row(0).transpose();
  const std::vector<int> frames = checkpoint_frames(dir);
  if (frames.empty()) throw std::runtime_error(dir.string() + ": no frame checkpoints");
  QueryReport rep;
  rep.identity = identity_query(load_checkpoint(frame_checkpoint_path(dir, 0)), q);
  if (rep.identity.id) {
    rep.segment = segment_query(
        frames, [&](int i) { return load_checkpoint(frame_checkpoint_path(dir, frames[i])); }, *rep.identity.id, q);
  } else {
    rep.segment.frames = frames;
    rep.segment.scores.assign(frames.size(), std::nullopt);
  }
  fs::create_directories(out);
  write_file_atomic(out / "query.json", query_json(rep.identity, rep.segment));
  write_file_atomic(out / "query.svg", query_svg(rep.segment));
  return rep;
}

std::vector<FrameRow> run_eval(const fs::path& dir, const fs::path& manifest_path, const fs::path& out,
                               int sh_degree) {
  const Dataset data(manifest_path);
  const std::vector<int> frames = checkpoint_frames(dir);
  if (frames.empty() && !fs::exists(bg_checkpoint_path(dir)))
    throw std::runtime_error(dir.string() + ": no checkpoints to evaluate");
  RasterConfig rc;
  rc.sh_degree = sh_degree;
  const bool holdout = data.holdout_camera().has_value();
  const Camera cam = holdout ? *data.holdout_camera() : data.cameras()[0];
  const bool have_masks = !holdout || !data.manifest().holdout_masks.empty();
  std::vector<FrameRow> rows;
  auto eval_one = [&](const Checkpoint& ck, int t) {
    const RenderTarget r = rasterize(ck.scene, cam, rc);
    const Image truth = holdout ? data.holdout_image(t) : data.image(0, t);
    FrameRow row;
    row.frame = t;
    row.psnr = psnr(r.color, truth);
    row.ssim = ssim(r.color, truth);
    if (ck.classifier && data.instances() > 0 && have_masks) {
      const LabelMap pred = predict_labels(r, *ck.classifier);
      const LabelMap gt = holdout ? data.holdout_mask(t) : data.mask(0, t);
      row.seg = seg_metrics(std::span<const LabelMap>(&pred, 1), std::span<const LabelMap>(&gt, 1), data.instances());
    }
    rows.push_back(row);
  };
  if (frames.empty()) {
    // background only: score every frame against the bg model
    const Checkpoint bg = load_checkpoint(bg_checkpoint_path(dir));
    for (int t = 0; t < data.frames(); ++t) eval_one(bg, t);
  } else {
    for (int t : frames) eval_one(load_checkpoint(frame_checkpoint_path(dir, t)), t);
  }
  fs::create_directories(out);
  write_file_atomic(out / "metrics.json", metrics_json(rows));
  write_file_atomic(out / "report.html", metrics_html(rows, "Reconstruction metrics"));
  return rows;
}

}  // namespace gs4d
