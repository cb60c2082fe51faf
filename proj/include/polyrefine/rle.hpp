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

// COCO run-length encoding: column-major runs that alternate
// background/foreground starting with background, plus the compact
// ASCII form used in COCO JSON ("counts" string).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"

namespace polyrefine::rle {

struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;
};

inline Rle encode(const Mask& mask) {
  Rle r{mask.height, mask.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < mask.width; ++x) {
    for (int y = 0; y < mask.height; ++y) {
      const std::uint8_t v = mask.at(y, x);
      if (v != current) {
        r.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

inline Mask decode(const Rle& r) {
  Mask m(r.height, r.width);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  const std::size_t total = std::size_t(r.height) * r.width;
  for (const auto c : r.counts) {
    if (pos + c > total) throw ParseError("", "RLE counts exceed mask size");
    for (std::uint32_t k = 0; k < c; ++k, ++pos) {
      const int x = int(pos / std::size_t(r.height));
      const int y = int(pos % std::size_t(r.height));
      m.at(y, x) = value;
    }
    value = value ? 0 : 1;
  }
  if (pos != total) throw ParseError("", "RLE counts do not cover the mask");
  return m;
}

// Compact string form of `counts`.
inline std::string to_string(const Rle& r) {
  std::string s;
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    long long x = r.counts[i];
    if (i > 2) x -= static_cast<long long>(r.counts[i - 2]);
    bool more = true;
    while (more) {
      char c = char(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      c += 48;
      s.push_back(c);
    }
  }
  return s;
}

inline Rle from_string(const std::string& s, int height, int width) {
  Rle r{height, width, {}};
  std::size_t p = 0;
  while (p < s.size()) {
    long long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw ParseError("", "truncated RLE string");
      const long long c = static_cast<long long>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (r.counts.size() > 2) {
      x += static_cast<long long>(r.counts[r.counts.size() - 2]);
    }
    if (x < 0) throw ParseError("", "negative RLE run");
    r.counts.push_back(static_cast<std::uint32_t>(x));
  }
  return r;
}

}  // namespace polyrefine::rle
