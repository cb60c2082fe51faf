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

// Training configuration and its flat text form.
//
// One "key = value" per line; '#' starts a comment; unknown keys are
// errors. Lists are comma separated. `to_text` writes every key, so a
// saved file fully records a run.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "polyrefine/errors.hpp"
#include "polyrefine/matching.hpp"
#include "polyrefine/model.hpp"
#include "polyrefine/pipeline/io.hpp"

namespace polyrefine {

struct TrainingConfig {
  ModelConfig model = ModelConfig::desk();
  LossOptions loss;
  double learning_rate = 2.5e-5;
  std::vector<int> lr_drop_epochs;  // epochs (0-based) at which the rate drops
  double lr_drop_factor = 10.0;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  int batch_size = 16;
  int epochs = 500;
  bool random_flip = true;
  // Match every stage on its own predictions; otherwise reuse the final
  // stage's matching for all stages.
  bool per_stage_matching = true;
  // Training-set AP50 is measured every `eval_every` epochs (0: never) and
  // training stops once it reaches `target_ap50` (0: never).
  int eval_every = 0;
  double target_ap50 = 0.0;
  double score_thresh = 0.5;
  double vertex_thresh = 0.5;
  std::uint64_t seed = 0;

  // Settings that train the desk-scale model on 32 scenes within 500 CPU
  // epochs. Focal training leaves vertex scores low (filler vertices near
  // 0.3, corners near 0.5), so the vertex cut sits at 0.3: a kept filler
  // lies on an edge and costs no mask IoU, while a dropped corner does.
  static TrainingConfig desk() {
    TrainingConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 2;
    c.lr_drop_epochs = {350};
    c.vertex_thresh = 0.3;
    return c;
  }

  void validate() const {
    model.validate();
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("TrainingConfig: " + what);
    };
    need(learning_rate > 0.0, "learning_rate must be > 0");
    need(lr_drop_factor > 0.0, "lr_drop_factor must be > 0");
    need(batch_size >= 1, "batch_size must be >= 1");
    need(epochs >= 0, "epochs must be >= 0");
    need(weight_decay >= 0.0, "weight_decay must be >= 0");
    need(grad_clip >= 0.0, "grad_clip must be >= 0");
    need(score_thresh > 0.0 && score_thresh < 1.0, "score_thresh must be in (0, 1)");
    need(vertex_thresh > 0.0 && vertex_thresh < 1.0, "vertex_thresh must be in (0, 1)");
    const auto& w = loss.weights;
    need(w.box >= 0 && w.cls >= 0 && w.giou >= 0 && w.poly >= 0 && w.vtx >= 0,
         "loss weights must be >= 0");
  }

  // Learning rate in effect during `epoch`.
  double lr_at(int epoch) const {
    double lr = learning_rate;
    for (int e : lr_drop_epochs) {
      if (epoch >= e) lr /= lr_drop_factor;
    }
    return lr;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(int(parse_int(key, item)));
  }
  return out;
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string num(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

struct Field {
  std::function<void(TrainingConfig&, const std::string&)> set;
  std::function<std::string(const TrainingConfig&)> get;
};

inline const std::vector<std::pair<std::string, Field>>& config_fields() {
  using C = TrainingConfig;
  auto i = [](auto member) {
    return Field{[member](C& c, const std::string& v) {
                   member(c) = std::remove_reference_t<decltype(member(c))>(parse_int("", v));
                 },
                 [member](const C& c) { return std::to_string(member(const_cast<C&>(c))); }};
  };
  auto d = [](auto member) {
    return Field{[member](C& c, const std::string& v) { member(c) = parse_double("", v); },
                 [member](const C& c) { return num(member(const_cast<C&>(c))); }};
  };
  auto b = [](auto member) {
    return Field{[member](C& c, const std::string& v) { member(c) = parse_bool("", v); },
                 [member](const C& c) {
                   return std::string(member(const_cast<C&>(c)) ? "true" : "false");
                 }};
  };
  static const std::vector<std::pair<std::string, Field>> fields = {
      {"model.num_proposals", i([](C& c) -> int& { return c.model.num_proposals; })},
      {"model.num_vertices", i([](C& c) -> int& { return c.model.num_vertices; })},
      {"model.channels", i([](C& c) -> int& { return c.model.channels; })},
      {"model.num_stages", i([](C& c) -> int& { return c.model.num_stages; })},
      {"model.pool_size", i([](C& c) -> int& { return c.model.pool_size; })},
      {"model.sampling_ratio", i([](C& c) -> int& { return c.model.sampling_ratio; })},
      {"model.ffn_hidden", i([](C& c) -> int& { return c.model.ffn_hidden; })},
      {"model.num_heads", i([](C& c) -> int& { return c.model.num_heads; })},
      {"model.dynamic_dim", i([](C& c) -> int& { return c.model.dynamic_dim; })},
      {"model.num_classes", i([](C& c) -> int& { return c.model.num_classes; })},
      {"model.backbone_widths",
       Field{[](C& c, const std::string& v) {
               c.model.backbone_widths = parse_int_list("model.backbone_widths", v);
             },
             [](const C& c) { return join(c.model.backbone_widths); }}},
      {"model.self_attention_enabled",
       b([](C& c) -> bool& { return c.model.self_attention_enabled; })},
      {"model.vertex_proposal_feature_enabled",
       b([](C& c) -> bool& { return c.model.vertex_proposal_feature_enabled; })},
      {"model.carry_object_features",
       b([](C& c) -> bool& { return c.model.carry_object_features; })},
      {"model.detach_proposals", b([](C& c) -> bool& { return c.model.detach_proposals; })},
      {"model.seed", i([](C& c) -> std::uint64_t& { return c.model.seed; })},
      {"loss.lambda_box", d([](C& c) -> double& { return c.loss.weights.box; })},
      {"loss.lambda_cls", d([](C& c) -> double& { return c.loss.weights.cls; })},
      {"loss.lambda_giou", d([](C& c) -> double& { return c.loss.weights.giou; })},
      {"loss.lambda_poly", d([](C& c) -> double& { return c.loss.weights.poly; })},
      {"loss.lambda_vtx", d([](C& c) -> double& { return c.loss.weights.vtx; })},
      {"loss.focal_alpha", d([](C& c) -> double& { return c.loss.focal.alpha; })},
      {"loss.focal_gamma", d([](C& c) -> double& { return c.loss.focal.gamma; })},
      {"loss.poly_reduction",
       Field{[](C& c, const std::string& v) {
               if (v == "mean") {
                 c.loss.poly_reduction = PolyReduction::mean;
               } else if (v == "sum") {
                 c.loss.poly_reduction = PolyReduction::sum;
               } else {
                 throw ConfigError("loss.poly_reduction: expected mean or sum, got '" + v + "'");
               }
             },
             [](const C& c) {
               return std::string(c.loss.poly_reduction == PolyReduction::mean ? "mean" : "sum");
             }}},
      {"train.learning_rate", d([](C& c) -> double& { return c.learning_rate; })},
      {"train.lr_drop_epochs",
       Field{[](C& c, const std::string& v) {
               c.lr_drop_epochs = parse_int_list("train.lr_drop_epochs", v);
             },
             [](const C& c) { return join(c.lr_drop_epochs); }}},
      {"train.lr_drop_factor", d([](C& c) -> double& { return c.lr_drop_factor; })},
      {"train.weight_decay", d([](C& c) -> double& { return c.weight_decay; })},
      {"train.grad_clip", d([](C& c) -> double& { return c.grad_clip; })},
      {"train.batch_size", i([](C& c) -> int& { return c.batch_size; })},
      {"train.epochs", i([](C& c) -> int& { return c.epochs; })},
      {"train.random_flip", b([](C& c) -> bool& { return c.random_flip; })},
      {"train.per_stage_matching", b([](C& c) -> bool& { return c.per_stage_matching; })},
      {"train.eval_every", i([](C& c) -> int& { return c.eval_every; })},
      {"train.target_ap50", d([](C& c) -> double& { return c.target_ap50; })},
      {"train.score_thresh", d([](C& c) -> double& { return c.score_thresh; })},
      {"train.vertex_thresh", d([](C& c) -> double& { return c.vertex_thresh; })},
      {"train.seed", i([](C& c) -> std::uint64_t& { return c.seed; })},
  };
  return fields;
}

}  // namespace detail

inline void set_config_value(TrainingConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : detail::config_fields()) {
    if (name != key) continue;
    try {
      f.set(c, value);
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      throw ConfigError(key + (what.rfind(":", 0) == 0 ? "" : ": ") + what);
    }
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::map<std::string, std::string> config_map(const TrainingConfig& c) {
  std::map<std::string, std::string> out;
  for (const auto& [name, f] : detail::config_fields()) out[name] = f.get(c);
  return out;
}

inline std::string to_text(const TrainingConfig& c) {
  std::string s;
  for (const auto& [name, f] : detail::config_fields()) s += name + " = " + f.get(c) + "\n";
  return s;
}

// Applies the lines of `text` on top of `base`.
inline TrainingConfig parse_config(const std::string& text, TrainingConfig base = TrainingConfig::desk(),
                                   const std::string& source = "config") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline TrainingConfig load_config(const fs::path& path, TrainingConfig base = TrainingConfig::desk()) {
  return parse_config(read_text(path), std::move(base), path.string());
}

}  // namespace polyrefine
