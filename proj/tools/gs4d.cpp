// Command line front end for the pipeline stages.

#include "gs4d/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "a..b" or a single frame
std::pair<int, int> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) {
      const int a = std::stoi(s);
      return {a, a};
    }
    return {std::stoi(s.substr(0, dots)), std::stoi(s.substr(dots + 2))};
  } catch (const std::exception&) {
    throw Usage("--frames expects a..b, got '" + s + "'");
  }
}

gs4d::TrainConfig config_for(const std::string& positional) {
  // the environment wins over the command line so batch jobs can redirect every stage
  const char* env = std::getenv("GS4D_CONFIG");
  return gs4d::load_config(env && *env ? fs::path(env) : fs::path(positional));
}

fs::path out_dir_for(const fs::path& manifest, const std::string& out) {
  const fs::path root = fs::absolute(manifest).parent_path();
  const fs::path o(out);
  return o.is_absolute() ? o : root / o;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-aware dynamic Gaussian splatting pipeline"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: logical cores)")->check(CLI::NonNegativeNumber);

  std::string a1, a2, a3, out = "out", frames, feature;
  int instance = 0, sh_degree = 3;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("spec", a1, "spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("out_dir", a2, "output directory")->required();

  auto* align = app.add_subcommand("align", "canonicalise instance labels across views");
  align->add_option("manifest", a1)->required()->check(CLI::ExistingFile);

  auto* compress = app.add_subcommand("compress-emb", "fit the embedding autoencoder and write codes");
  compress->add_option("manifest", a1)->required()->check(CLI::ExistingFile);

  std::vector<CLI::App*> training;
  auto* init_bg = app.add_subcommand("init-bg", "train the background model");
  auto* init_frame = app.add_subcommand("init-frame", "train frame 0 with both heads");
  auto* track = app.add_subcommand("track", "warp, refine and train each frame");
  for (auto* c : {init_bg, init_frame, track}) {
    c->add_option("manifest", a1)->required()->check(CLI::ExistingFile);
    c->add_option("config", a2, "config JSON (GS4D_CONFIG overrides)");
    c->add_option("--out", out, "output directory, relative to the manifest root");
    c->add_flag("--quiet", quiet, "no training log on stdout");
  }
  track->add_option("--frames", frames, "frame range a..b")->required();

  auto* render = app.add_subcommand("render", "render a checkpoint");
  render->add_option("checkpoint", a1)->required()->check(CLI::ExistingFile);
  render->add_option("camera", a2)->required()->check(CLI::ExistingFile);
  render->add_option("out_png", a3)->required();
  render->add_option("--feature", feature, "write the feature map as F32M");
  render->add_option("--instance", instance, "render only this instance")->check(CLI::PositiveNumber);
  render->add_option("--sh-degree", sh_degree)->check(CLI::IsMember({0, 3}));

  auto* query = app.add_subcommand("query", "identity and segment query");
  query->add_option("checkpoints_dir", a1)->required()->check(CLI::ExistingDirectory);
  query->add_option("query", a2, "raw-dim f32 vector file")->required()->check(CLI::ExistingFile);
  query->add_option("--out", out, "output directory (default: checkpoints_dir)");

  auto* eval = app.add_subcommand("eval", "metrics report");
  eval->add_option("checkpoints_dir", a1)->required()->check(CLI::ExistingDirectory);
  eval->add_option("manifest", a2)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "output directory (default: checkpoints_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    std::ostream* log = quiet ? nullptr : &std::cout;
    if (gen->parsed()) {
      gs4d::gen_synthetic(gs4d::SyntheticSpec::from_json(gs4d::read_file(a1)), a2);
      std::cout << json{{"status", "ok"}, {"manifest", (fs::path(a2) / "manifest.json").string()}}.dump() << "\n";
    } else if (align->parsed()) {
      const auto rep = gs4d::align_dataset(a1);
      json maps = json::array();
      for (const auto& m : rep.mappings) {
        json v = json::object();
        for (const auto& [from, to] : m.to_canonical) v[std::to_string(from)] = to;
        maps.push_back(v);
      }
      std::cout << json{{"status", "ok"}, {"mappings", maps}, {"zeroed_pixels", rep.zeroed_pixels}}.dump() << "\n";
    } else if (compress->parsed()) {
      const auto rep = gs4d::compress_embeddings(a1);
      std::cout << json{{"status", "ok"}, {"rows", rep.rows}, {"mse", rep.mse}, {"min_cosine", rep.min_cosine}}.dump()
                << "\n";
    } else if (init_bg->parsed() || init_frame->parsed() || track->parsed()) {
      const gs4d::TrainConfig cfg = config_for(a2);
      const fs::path od = out_dir_for(a1, out);
      if (init_bg->parsed()) {
        const auto rep = gs4d::run_init_bg(a1, cfg, od, log);
        std::cout << json{{"status", "ok"}, {"stage", "bg"}, {"seconds", rep.seconds}}.dump() << "\n";
      } else if (init_frame->parsed()) {
        const auto rep = gs4d::run_init_frame(a1, cfg, od, log);
        std::cout << json{{"status", "ok"}, {"stage", "init"}, {"seconds", rep.seconds}}.dump() << "\n";
      } else {
        const auto [first, last] = parse_range(frames);
        const auto rep = gs4d::run_track(a1, cfg, od, first, last, log);
        std::cout << json{{"status", "ok"}, {"stage", "track"}, {"resumed_from", rep.resumed_from},
                          {"tracked", rep.frames.size()}}
                         .dump()
                  << "\n";
      }
    } else if (render->parsed()) {
      gs4d::RenderOptions o;
      if (!feature.empty()) o.feature_out = feature;
      if (instance > 0) o.instance = instance;
      o.sh_degree = sh_degree;
      const auto rep = gs4d::run_render(a1, gs4d::read_camera_json(a2), a3, o);
      json j{{"status", "ok"}, {"primitives", rep.primitives}};
      if (o.instance) j["foreign_contributors"] = rep.foreign_contributors;
      std::cout << j.dump() << "\n";
      if (o.instance && rep.foreign_contributors != 0) {
        std::cerr << "error: render: " << rep.foreign_contributors << " contributors from other instances\n";
        return 1;
      }
    } else if (query->parsed()) {
      const fs::path od = query->count("--out") ? fs::path(out) : fs::path(a1);
      const auto rep = gs4d::run_query(a1, a2, od);
      std::cout << json{{"status", "ok"}, {"output", (od / "query.json").string()}}.dump() << "\n";
      (void)rep;
    } else if (eval->parsed()) {
      const fs::path od = eval->count("--out") ? fs::path(out) : fs::path(a1);
      gs4d::run_eval(a1, a2, od, sh_degree);
      std::cout << json{{"status", "ok"}, {"output", (od / "metrics.json").string()}}.dump() << "\n";
    }
  } catch (const Usage& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
