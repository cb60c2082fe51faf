/* Copyright 2026 The polyrefine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line front end: generate-data, convert, train, infer, evaluate,
// plot. Every failure exits 1 with a one-line diagnostic on stderr and
// removes whatever outputs the command had produced.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polyrefine/image.hpp"
#include "polyrefine/metrics.hpp"
#include "polyrefine/pipeline/checkpoint.hpp"
#include "polyrefine/pipeline/coco.hpp"
#include "polyrefine/pipeline/config.hpp"
#include "polyrefine/pipeline/convert.hpp"
#include "polyrefine/pipeline/io.hpp"
#include "polyrefine/pipeline/plot.hpp"
#include "polyrefine/pipeline/scene.hpp"
#include "polyrefine/pipeline/train.hpp"

namespace pr = polyrefine;
namespace fs = std::filesystem;

namespace {

// Outputs created so far; removed if the command fails.
std::vector<fs::path> g_outputs;

void track(const fs::path& p) { g_outputs.push_back(p); }

void remove_outputs() {
  std::error_code ec;
  for (auto it = g_outputs.rbegin(); it != g_outputs.rend(); ++it) fs::remove_all(*it, ec);
  g_outputs.clear();
}

constexpr const char* kAnnotationsFile = "annotations.json";
constexpr const char* kImagesDir = "images";
constexpr const char* kMasksDir = "masks";

// Options shared by several subcommands. Unset optionals leave the
// config-file (or preset) value alone.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_proposals, m_vertices;
  std::optional<double> score_thresh, vertex_thresh;
  std::string output;
};

pr::TrainingConfig resolve_config(const Common& c) {
  pr::TrainingConfig cfg = c.config.empty() ? pr::TrainingConfig::desk() : pr::load_config(c.config);
  if (c.seed) cfg.seed = cfg.model.seed = *c.seed;
  if (c.n_proposals) cfg.model.num_proposals = *c.n_proposals;
  if (c.m_vertices) cfg.model.num_vertices = *c.m_vertices;
  if (c.score_thresh) cfg.score_thresh = *c.score_thresh;
  if (c.vertex_thresh) cfg.vertex_thresh = *c.vertex_thresh;
  cfg.validate();
  return cfg;
}

void require_output(const Common& c) {
  if (c.output.empty()) throw pr::ConfigError("--output is required");
}

// Image ids of a directory of PNGs: numeric stems keep their number, other
// names are numbered 1.. in sorted order.
std::vector<std::pair<int, fs::path>> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw pr::Error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<int, fs::path>> out;
  int next = 1;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    int id = 0;
    const auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), id);
    const bool numeric = ec == std::errc() && ptr == stem.data() + stem.size();
    out.emplace_back(numeric ? id : next, f);
    ++next;
  }
  return out;
}

// Dataset directory written by generate-data.
struct Dataset {
  fs::path root;
  pr::CocoDataset coco;

  static Dataset open(const fs::path& root) {
    return {root, pr::coco_read(root / kAnnotationsFile)};
  }
  pr::Image image(const pr::CocoImage& im) const {
    pr::Image img = pr::read_png((root / kImagesDir / im.file_name).string());
    if (img.height != im.height || img.width != im.width) {
      throw pr::Error("image " + im.file_name + " does not match its annotation size");
    }
    return img;
  }
};

// ---------------------------------------------------------------------------

int cmd_generate(const Common& c, pr::GeneratorConfig g) {
  require_output(c);
  if (c.seed) g.seed = *c.seed;
  g.validate();
  const fs::path out = c.output;
  if (fs::exists(out)) throw pr::Error("output already exists: " + out.string());
  const auto scenes = pr::generate_scenes(g);
  const fs::path tmp = pr::temp_sibling(out);
  track(tmp);
  fs::create_directories(tmp / kImagesDir);
  fs::create_directories(tmp / kMasksDir);
  const pr::CocoDataset coco = pr::to_coco(scenes);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string name = coco.images[i].file_name;
    pr::write_png((tmp / kImagesDir / name).string(), scenes[i].image);
    pr::write_png((tmp / kMasksDir / name).string(), scenes[i].semantic_mask());
  }
  pr::coco_write(tmp / kAnnotationsFile, coco);
  fs::rename(tmp, out);
  g_outputs.clear();
  std::cerr << "wrote " << scenes.size() << " scenes, " << coco.annotations.size()
            << " annotations to " << out.string() << "\n";
  return 0;
}

int cmd_convert(const Common& c, const std::string& masks_dir, const pr::ConvertOptions& opt) {
  require_output(c);
  std::vector<pr::MaskImage> masks;
  for (const auto& [id, path] : list_pngs(masks_dir)) {
    masks.push_back({id, path.filename().string(), pr::read_mask_png(path.string())});
  }
  pr::ConvertStats stats;
  const pr::CocoDataset d = pr::convert_masks(masks, opt, &stats);
  track(c.output);
  pr::coco_write(c.output, d);
  g_outputs.clear();
  std::cerr << "traced " << stats.traced << " rings, dropped " << stats.dropped
            << " degenerate, kept " << d.annotations.size() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data, std::optional<int> epochs,
              std::string loss_log, std::optional<int> eval_every,
              std::optional<double> target_ap50) {
  require_output(c);
  pr::TrainingConfig cfg = resolve_config(c);
  if (epochs) cfg.epochs = *epochs;
  if (eval_every) cfg.eval_every = *eval_every;
  if (target_ap50) cfg.target_ap50 = *target_ap50;
  cfg.validate();
  if (loss_log.empty()) loss_log = c.output + ".loss.jsonl";

  const Dataset ds = Dataset::open(data);
  std::vector<pr::TrainingSample> samples;
  for (const auto& im : ds.coco.images) {
    samples.push_back({im.id, ds.image(im), ds.coco.instances_of(im.id)});
  }
  pr::Trainer trainer(cfg, std::move(samples));
  trainer.train([](const pr::EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.total;
    if (r.ap50) std::cerr << " train_AP50 " << *r.ap50;
    std::cerr << "\n";
  });
  track(c.output);
  track(loss_log);
  pr::save_checkpoint(c.output, cfg, trainer.model());
  pr::atomic_write_text(loss_log, pr::loss_log_text(trainer.history()));
  g_outputs.clear();
  return 0;
}

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& data) {
  require_output(c);
  pr::Checkpoint ck = pr::load_checkpoint(checkpoint);
  if (c.score_thresh) ck.config.score_thresh = *c.score_thresh;
  if (c.vertex_thresh) ck.config.vertex_thresh = *c.vertex_thresh;
  ck.config.validate();
  const auto opt = pr::postprocess_options(ck.config);

  std::vector<pr::Detection> dets;
  auto run = [&](int id, const pr::Image& img) {
    for (auto& d : pr::infer(ck.model, img, id, opt)) dets.push_back(std::move(d));
  };
  const fs::path root = data;
  if (fs::exists(root / kAnnotationsFile)) {
    const Dataset ds = Dataset::open(root);
    for (const auto& im : ds.coco.images) run(im.id, ds.image(im));
  } else {
    const fs::path dir = fs::is_directory(root / kImagesDir) ? root / kImagesDir : root;
    for (const auto& [id, path] : list_pngs(dir)) run(id, pr::read_png(path.string()));
  }
  track(c.output);
  pr::results_write(c.output, dets);
  g_outputs.clear();
  std::cerr << "wrote " << dets.size() << " detections\n";
  return 0;
}

// Results may be a COCO-results array or a COCO GT document, which is then
// read as perfect detections.
std::vector<pr::Detection> read_any_results(const fs::path& path) {
  return pr::detail::from_file(path, [](const nlohmann::json& j) {
    if (j.is_object()) return pr::ground_truth_as_results(pr::coco_from_json(j));
    return pr::results_from_json(j);
  });
}

int cmd_evaluate(const Common& c, const std::string& gt_path, const std::string& results_path) {
  const pr::CocoDataset gt = pr::coco_read(gt_path);
  const auto dets = read_any_results(results_path);
  const pr::MetricReport rep =
      pr::evaluate_all(dets, gt.ground_truth(), gt.sizes(), pr::kInnerCategory);
  if (!c.output.empty()) {
    track(c.output);
    pr::atomic_write_text(c.output, pr::to_json(rep).dump(2) + "\n");
    g_outputs.clear();
  }
  std::cout << pr::to_table(rep);
  return 0;
}

int cmd_plot(const Common& c, const std::string& data, const std::string& results_path) {
  require_output(c);
  const Dataset ds = Dataset::open(data);
  const auto dets = results_path.empty() ? std::vector<pr::Detection>{}
                                         : read_any_results(results_path);
  const fs::path out = c.output;
  if (!fs::exists(out)) {
    track(out);
    fs::create_directories(out);
  }
  int written = 0;
  for (const auto& im : ds.coco.images) {
    pr::Image img = ds.image(im);
    for (const auto& a : ds.coco.annotations) {
      if (a.image_id == im.id) pr::draw_ring(img, a.polygon, pr::kGroundTruthColor, false);
    }
    for (const auto& d : dets) {
      if (d.image_id != im.id) continue;
      if (c.score_thresh && d.score < *c.score_thresh) continue;
      pr::draw_ring(img, d.polygon, pr::kPredictionColor, true);
    }
    const fs::path target = out / im.file_name;
    track(target);
    pr::atomic_write(target, [&](const fs::path& tmp) { pr::write_png(tmp.string(), img); });
    ++written;
  }
  g_outputs.clear();
  std::cerr << "wrote " << written << " overlays to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Polygonal building outline extraction at desk scale"};
  app.require_subcommand(1);
  Common common;

  auto add_output = [&](CLI::App* s, const std::string& what) {
    s->add_option("--output,-o", common.output, what);
  };
  auto add_model = [&](CLI::App* s) {
    s->add_option("--config", common.config, "config file (key = value lines)");
    s->add_option("--seed", common.seed, "random seed");
    s->add_option("--n-proposals", common.n_proposals, "number of proposals N");
    s->add_option("--m-vertices", common.m_vertices, "vertices per polygon M");
  };
  auto add_thresholds = [&](CLI::App* s) {
    s->add_option("--score-thresh", common.score_thresh, "minimum class score");
    s->add_option("--vertex-thresh", common.vertex_thresh, "minimum vertex score");
  };

  pr::GeneratorConfig gen;
  auto* g = app.add_subcommand("generate-data", "write a synthetic dataset directory");
  add_output(g, "dataset directory (must not exist)");
  g->add_option("--seed", common.seed, "random seed");
  g->add_option("--scenes", gen.scene_count, "number of scenes");
  g->add_option("--image-size", gen.image_size, "image side in pixels (multiple of 32)");
  g->add_option("--min-buildings", gen.min_buildings, "buildings per scene, lower bound");
  g->add_option("--max-buildings", gen.max_buildings, "buildings per scene, upper bound");
  g->add_option("--min-corners", gen.min_corners, "corners per building, lower bound");
  g->add_option("--max-corners", gen.max_corners, "corners per building, upper bound");
  g->add_option("--hole-prob", gen.hole_probability, "probability of a courtyard");
  g->add_option("--noise", gen.noise_level, "texture noise sigma as a fraction of 255");

  pr::ConvertOptions conv;
  std::string masks_dir;
  auto* cv = app.add_subcommand("convert", "vectorize binary mask PNGs into COCO JSON");
  cv->add_option("--masks", masks_dir, "directory of mask PNGs")->required();
  add_output(cv, "COCO JSON file");
  cv->add_option("--dp-tol", conv.dp_tolerance, "Douglas-Peucker tolerance in pixels");
  cv->add_option("--angle-low", conv.angle_low, "merge threshold for spikes, degrees");
  cv->add_option("--angle-high", conv.angle_high, "merge threshold for straight runs, degrees");

  std::string data, loss_log, checkpoint, gt_path, results_path;
  std::optional<int> epochs, eval_every;
  std::optional<double> target_ap50;
  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  tr->add_option("--data", data, "dataset directory")->required();
  add_output(tr, "checkpoint file");
  add_model(tr);
  add_thresholds(tr);
  tr->add_option("--epochs", epochs, "number of epochs");
  tr->add_option("--loss-log", loss_log, "loss log (JSON lines; default <output>.loss.jsonl)");
  tr->add_option("--eval-every", eval_every, "epochs between training-set AP50 checks");
  tr->add_option("--target-ap50", target_ap50, "stop once training-set AP50 reaches this");

  auto* in = app.add_subcommand("infer", "run a checkpoint over images");
  in->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  in->add_option("--data", data, "dataset directory or directory of PNGs")->required();
  add_output(in, "COCO-results JSON file");
  add_thresholds(in);

  auto* ev = app.add_subcommand("evaluate", "score results against ground truth");
  ev->add_option("--gt", gt_path, "COCO GT JSON")->required();
  ev->add_option("--results", results_path, "COCO-results JSON (or a GT document)")->required();
  add_output(ev, "metric report JSON (the table always goes to stdout)");

  auto* pl = app.add_subcommand("plot", "draw GT and predicted polygons over the images");
  pl->add_option("--data", data, "dataset directory")->required();
  pl->add_option("--results", results_path, "COCO-results JSON");
  add_output(pl, "overlay directory");
  pl->add_option("--score-thresh", common.score_thresh, "hide detections scoring lower");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "polyrefine: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*g) return cmd_generate(common, gen);
    if (*cv) return cmd_convert(common, masks_dir, conv);
    if (*tr) return cmd_train(common, data, epochs, loss_log, eval_every, target_ap50);
    if (*in) return cmd_infer(common, checkpoint, data);
    if (*ev) return cmd_evaluate(common, gt_path, results_path);
    if (*pl) return cmd_plot(common, data, results_path);
  } catch (const std::exception& e) {
    remove_outputs();
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "polyrefine: error: " << msg << "\n";
    return 1;
  }
  return 1;
}
