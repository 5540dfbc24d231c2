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

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "mixtag/error.hpp"

namespace mixtag {

inline constexpr std::size_t kNumClasses = 7;

/// Tag alphabet in class-index order: child speech, adult male speech, adult
/// female speech, video game/TV, percussive, broadband noise, other.
inline constexpr std::array<char, kNumClasses> kClassTags = {'c', 'm', 'f', 'v',
                                                             'p', 'b', 'o'};

/// Per-class target values. Hard labels are 0/1; soft labels only come out
/// of label-mixing augmentation.
using LabelVector = std::array<double, kNumClasses>;

inline int class_index(char tag) {
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (kClassTags[c] == tag) return static_cast<int>(c);
  return -1;
}

inline LabelVector encode_labels(std::string_view tags) {
  LabelVector labels{};
  for (char ch : tags) {
    const int c = class_index(ch);
    if (c < 0)
      throw Error(ErrorKind::BadLabel,
                  std::string("unknown label character '") + ch + "'");
    labels[c] = 1.0;
  }
  return labels;
}

/// Inverse of encode_labels for hard labels; classes with value >= 0.5 are
/// emitted in alphabet order.
inline std::string decode_labels(const LabelVector& labels) {
  std::string tags;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (labels[c] >= 0.5) tags.push_back(kClassTags[c]);
  return tags;
}

}  // namespace mixtag
