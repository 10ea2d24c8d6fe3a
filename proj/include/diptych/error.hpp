// Copyright 2026 The Diptych Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace diptych {

// Root of all errors raised by the library. Each subclass names one failure
// category so callers (and the pipeline's per-item error records) can
// distinguish them without string matching.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define DIPTYCH_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(what) {}               \
    const char* kind() const noexcept override { return tag; }            \
  };

DIPTYCH_DEFINE_ERROR(ShapeError, "shape")
DIPTYCH_DEFINE_ERROR(NumericError, "numeric")
DIPTYCH_DEFINE_ERROR(DegenerateInputError, "degenerate_input")
DIPTYCH_DEFINE_ERROR(InputError, "input")
DIPTYCH_DEFINE_ERROR(ConfigError, "config")
DIPTYCH_DEFINE_ERROR(PreconditionError, "precondition")
DIPTYCH_DEFINE_ERROR(RegionError, "region")
DIPTYCH_DEFINE_ERROR(TemplateError, "template")
DIPTYCH_DEFINE_ERROR(TrainingError, "training")
DIPTYCH_DEFINE_ERROR(CompatibilityError, "compatibility")
DIPTYCH_DEFINE_ERROR(EmptyDetectionError, "empty_detection")
DIPTYCH_DEFINE_ERROR(NetworkError, "network")
DIPTYCH_DEFINE_ERROR(ProtocolError, "protocol")
DIPTYCH_DEFINE_ERROR(IoError, "io")

#undef DIPTYCH_DEFINE_ERROR

}  // namespace diptych
