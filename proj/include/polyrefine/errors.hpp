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

#pragma once

#include <stdexcept>
#include <string>

namespace polyrefine {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ring with fewer than three vertices or otherwise unusable as a polygon.
class InvalidPolygonError : public Error {
 public:
  using Error::Error;
};

// A simplification step reduced a ring below three vertices.
class DegenerateOutputError : public Error {
 public:
  using Error::Error;
};

// Requested vertex budget is smaller than the number of reference corners.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class InvalidBoxError : public Error {
 public:
  using Error::Error;
};

// Tensor, raster or image dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input document. `path` locates the offending element
// (for example "annotations[3].segmentation[0]").
class ParseError : public Error {
 public:
  ParseError(const std::string& path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(path) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace polyrefine
