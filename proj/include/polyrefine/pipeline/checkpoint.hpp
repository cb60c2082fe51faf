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

// Checkpoint file layout:
//   8 bytes   magic "PRCKPT01"
//   8 bytes   header length L (little-endian uint64)
//   L bytes   JSON header: {"config": {key: value}, "tensors":
//             [{"name", "rows", "cols", "offset"}]}, offsets counted in
//             doubles from the start of the payload
//   payload   IEEE-754 float64 values, little-endian, row-major

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyrefine/errors.hpp"
#include "polyrefine/model.hpp"
#include "polyrefine/pipeline/config.hpp"
#include "polyrefine/pipeline/io.hpp"

namespace polyrefine {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'C', 'K', 'P', 'T', '0', '1'};

struct Checkpoint {
  TrainingConfig config;
  Model model;
};

inline void save_checkpoint(const fs::path& path, const TrainingConfig& cfg, const Model& model) {
  nlohmann::json header;
  header["config"] = config_map(cfg);
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto params = model.parameters();
  for (const auto& p : params) {
    const auto& v = p.var.value();
    header["tensors"].push_back(
        {{"name", p.name}, {"rows", v.rows()}, {"cols", v.cols()}, {"offset", offset}});
    offset += std::uint64_t(v.size());
  }
  const std::string text = header.dump();
  atomic_write(path, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& p : params) {
      const auto& v = p.var.value();
      out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
    }
    out.close();
    if (!out) throw Error("write failed for " + tmp.string());
  });
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ParseError(path.string(), "not a checkpoint file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || len > (std::uint64_t(1) << 30)) throw ParseError(path.string(), "bad header length");
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw ParseError(path.string(), "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string(), std::string("bad header: ") + e.what());
  }
  TrainingConfig cfg;
  for (const auto& [k, v] : header.at("config").items()) {
    set_config_value(cfg, k, v.get<std::string>());
  }
  cfg.validate();
  Model model(cfg.model);
  std::vector<double> payload;
  {
    const auto start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(start);
    payload.resize(std::size_t(end - start) / 8);
    in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size() * 8));
  }
  std::map<std::string, nlohmann::json> tensors;
  for (const auto& t : header.at("tensors")) tensors[t.at("name").get<std::string>()] = t;
  for (auto& p : model.parameters()) {
    const auto it = tensors.find(p.name);
    if (it == tensors.end()) throw ParseError(path.string(), "missing tensor " + p.name);
    auto& v = p.var.mutable_value();
    const auto rows = it->second.at("rows").get<Index>();
    const auto cols = it->second.at("cols").get<Index>();
    const auto off = it->second.at("offset").get<std::uint64_t>();
    if (rows != v.rows() || cols != v.cols()) {
      throw ParseError(path.string(), "tensor " + p.name + " has shape " + std::to_string(rows) +
                                          "x" + std::to_string(cols) + ", model expects " +
                                          std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
    }
    if (off + std::uint64_t(v.size()) > payload.size()) {
      throw ParseError(path.string(), "truncated payload for tensor " + p.name);
    }
    std::memcpy(v.data(), payload.data() + off, std::size_t(v.size()) * 8);
  }
  return {std::move(cfg), std::move(model)};
}

}  // namespace polyrefine
