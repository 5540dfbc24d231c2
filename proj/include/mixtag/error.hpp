// Copyright 2026 The mixtag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mixtag {

enum class ErrorKind {
  ParseError,
  DuplicateId,
  BadLabel,
  FormatMismatch,
  IoError,
  TooFewItems,
  BadSize,
  BadRange,
  ShapeError,
  EmptyInput,
  BadAlpha,
  EmptyBatch,
  NonFiniteGradient,
  NonFiniteLoss,
  DegenerateClass,
  ConfigError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::BadLabel: return "BadLabel";
    case ErrorKind::FormatMismatch: return "FormatMismatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::TooFewItems: return "TooFewItems";
    case ErrorKind::BadSize: return "BadSize";
    case ErrorKind::BadRange: return "BadRange";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::BadAlpha: return "BadAlpha";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DegenerateClass: return "DegenerateClass";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the ErrorKind tags so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mixtag
