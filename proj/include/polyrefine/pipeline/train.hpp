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

// Inference and the training loop.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyrefine/matching.hpp"
#include "polyrefine/metrics.hpp"
#include "polyrefine/model.hpp"
#include "polyrefine/pipeline/coco.hpp"
#include "polyrefine/pipeline/config.hpp"
#include "polyrefine/pipeline/preprocess.hpp"
#include "polyrefine/pipeline/scene.hpp"

namespace polyrefine {

// ---------------------------------------------------------------------------
// Inference

inline PostprocessOptions postprocess_options(const TrainingConfig& cfg) {
  PostprocessOptions o;
  o.score_thresh = cfg.score_thresh;
  o.vertex_thresh = cfg.vertex_thresh;
  o.group_holes = cfg.model.num_classes > 1;
  return o;
}

// Final-stage predictions of one image as COCO detections (one ring each;
// class index k becomes category k + 1).
inline std::vector<Detection> infer(const Model& model, const Image& image, int image_id,
                                    const PostprocessOptions& opt) {
  const ForwardResult fr = model.forward(image);
  const StageOutput out = StageOutput::from(fr.stages.back());
  PostprocessResult pp = postprocess(out, image.width, image.height, opt);
  std::vector<Detection> dets;
  for (auto& sp : pp.polygons) {
    dets.push_back({image_id, sp.category + 1, std::move(sp.polygon), {}, sp.score});
  }
  return dets;
}

// Final-stage instances with inner rings grouped into their outers.
inline std::vector<BuildingInstance> infer_buildings(const Model& model, const Image& image,
                                                     PostprocessOptions opt) {
  opt.group_holes = true;
  const ForwardResult fr = model.forward(image);
  return postprocess(StageOutput::from(fr.stages.back()), image.width, image.height, opt)
      .instances;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-4;
  std::vector<Matrix> m, v;
  long step_count = 0;

  // One step over `params` (gradients already accumulated). Missing
  // gradients count as zero.
  void step(const nn::ParameterList& params, double lr) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
        v.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
      }
    }
    ++step_count;
    const double c1 = 1.0 - std::pow(beta1, double(step_count));
    const double c2 = 1.0 - std::pow(beta2, double(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var var = params[i].var;
      Matrix& w = var.mutable_value();
      w *= (1.0 - lr * weight_decay);
      if (var.grad().size() == 0) continue;
      const Matrix& g = var.grad();
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
      w.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

inline double global_grad_norm(const nn::ParameterList& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (p.var.grad().size() != 0) s += p.var.grad().squaredNorm();
  }
  return std::sqrt(s);
}

inline void scale_grads(const nn::ParameterList& params, double f) {
  for (const auto& p : params) {
    Var v = p.var;
    if (v.grad().size() != 0) v.mutable_grad() *= f;
  }
}

inline void zero_grads(const nn::ParameterList& params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Losses over the stages of one forward pass

struct ImageLoss {
  Var total;
  std::vector<LossBreakdown> stages;
};

inline ImageLoss deep_supervision_loss(const ForwardResult& fr,
                                       std::span<const InstanceTarget> targets,
                                       const TrainingConfig& cfg) {
  ImageLoss out;
  std::vector<std::pair<double, Var>> terms;
  std::optional<MatchResult> shared;
  if (!cfg.per_stage_matching) shared = match_stage(fr.stages.back(), targets, cfg.loss);
  for (const auto& sp : fr.stages) {
    const MatchResult mr = shared ? *shared : match_stage(sp, targets, cfg.loss);
    StageLoss sl = total_loss(sp, targets, mr, cfg.loss);
    terms.emplace_back(1.0, sl.total);
    out.stages.push_back(sl.parts);
  }
  out.total = ad::weighted_sum(terms);
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingSample {
  int image_id = 0;
  Image image;
  std::vector<BuildingInstance> instances;  // flat, pixel coordinates
};

inline std::vector<TrainingSample> samples_from_scenes(const std::vector<SceneAnnotation>& scenes) {
  std::vector<TrainingSample> out;
  for (const auto& s : scenes) out.push_back({s.image_id, s.image, s.instances});
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  std::vector<LossBreakdown> stages;  // per-stage means over the epoch's images
  double total = 0.0;
  std::optional<double> ap50;  // when evaluated this epoch

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["total"] = total;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : stages) j["stages"].push_back(s.record());
    if (ap50) j["train_AP50"] = *ap50;
    return j;
  }
};

// Precomputed augmented variants of one sample: index = 2 * vflip + hflip.
struct AugmentedSample {
  std::array<Image, 4> images;
  std::array<std::vector<InstanceTarget>, 4> targets;
};

class Trainer {
 public:
  Trainer(TrainingConfig cfg, std::vector<TrainingSample> samples)
      : cfg_(std::move(cfg)), model_(cfg_.model), samples_(std::move(samples)), rng_(cfg_.seed) {
    cfg_.validate();
    opt_.weight_decay = cfg_.weight_decay;
    const std::size_t m = std::size_t(cfg_.model.num_vertices);
    for (const auto& s : samples_) {
      AugmentedSample a;
      for (int k = 0; k < 4; ++k) {
        const bool hf = k & 1, vf = k & 2;
        if (k > 0 && !cfg_.random_flip) break;
        a.images[std::size_t(k)] = k == 0 ? s.image : flip_image(s.image, hf, vf);
        const auto inst = k == 0 ? s.instances
                                 : flip_instances(s.instances, s.image.width, s.image.height, hf, vf);
        a.targets[std::size_t(k)] = preprocess_gt(inst, s.image.width, s.image.height, m,
                                                  cfg_.model.num_classes, s.image_id);
      }
      augmented_.push_back(std::move(a));
    }
  }

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainingConfig& config() const { return cfg_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  int epochs_run() const { return int(history_.size()); }

  // One pass over the data in shuffled mini-batches.
  EpochRecord run_epoch(int epoch) {
    const auto params = model_.parameters();
    const double lr = cfg_.lr_at(epoch);
    std::vector<std::size_t> order(samples_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[std::size_t(rng_.uniform_int(0, int(i - 1)))]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.stages.assign(std::size_t(cfg_.model.num_stages), {});
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg_.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg_.batch_size));
      zero_grads(params);
      for (std::size_t b = start; b < end; ++b) {
        const auto& a = augmented_[order[b]];
        int variant = 0;
        if (cfg_.random_flip) variant = rng_.uniform_int(0, 3);
        const ForwardResult fr = model_.forward(a.images[std::size_t(variant)]);
        const ImageLoss loss = deep_supervision_loss(fr, a.targets[std::size_t(variant)], cfg_);
        ad::backward(ad::scale(loss.total, 1.0 / double(end - start)));
        for (std::size_t k = 0; k < loss.stages.size(); ++k) rec.stages[k] += loss.stages[k];
      }
      if (cfg_.grad_clip > 0.0) {
        const double norm = global_grad_norm(params);
        if (norm > cfg_.grad_clip) scale_grads(params, cfg_.grad_clip / norm);
      }
      opt_.step(params, lr);
    }
    const double n = std::max<double>(1.0, double(samples_.size()));
    for (auto& s : rec.stages) {
      s.box /= n, s.cls /= n, s.giou /= n, s.poly /= n, s.vtx /= n, s.total /= n;
      rec.total += s.total;
    }
    return rec;
  }

  // Training-set report through the full inference path.
  MetricReport evaluate_training_set() const {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    std::map<int, ImageSize> sizes;
    const auto opt = postprocess_options(cfg_);
    for (const auto& s : samples_) {
      sizes[s.image_id] = {s.image.height, s.image.width};
      for (auto& d : infer(model_, s.image, s.image_id, opt)) dets.push_back(std::move(d));
      for (const auto& inst : s.instances) {
        gts.push_back({s.image_id, category_of(inst.class_tag), inst.outer, {}, false});
      }
    }
    return evaluate_all(dets, gts, sizes, kInnerCategory);
  }

  // Runs up to cfg.epochs epochs; `on_epoch` sees every record as it is
  // produced. Stops early once the periodic AP50 reaches the target.
  void train(const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    for (int e = 0; e < cfg_.epochs; ++e) {
      EpochRecord rec = run_epoch(e);
      const bool eval_now = cfg_.eval_every > 0 && ((e + 1) % cfg_.eval_every == 0 || e + 1 == cfg_.epochs);
      if (eval_now) rec.ap50 = evaluate_training_set().mask.ap50;
      history_.push_back(rec);
      if (on_epoch) on_epoch(rec);
      if (cfg_.target_ap50 > 0.0 && rec.ap50 && *rec.ap50 >= cfg_.target_ap50) break;
    }
  }

 private:
  TrainingConfig cfg_;
  Model model_;
  std::vector<TrainingSample> samples_;
  std::vector<AugmentedSample> augmented_;
  nn::Rng rng_;
  AdamW opt_;
  std::vector<EpochRecord> history_;
};

inline std::string loss_log_text(const std::vector<EpochRecord>& history) {
  std::string s;
  for (const auto& r : history) s += r.to_json().dump() + "\n";
  return s;
}

}  // namespace polyrefine
