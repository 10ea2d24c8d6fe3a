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

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace diptych {

inline constexpr std::size_t kDefaultCaptionLength = 48;

// Fixed-length token ids; id 0 is the pad token.
struct Caption {
  std::vector<std::int32_t> ids;

  std::size_t length() const { return ids.size(); }
  bool is_unconditional() const;
  friend bool operator==(const Caption&, const Caption&) = default;
};

// Word-level tokenizer over the closed sprite-caption grammar. Lower-cases,
// splits on whitespace, and strips '.', ',' and quotes around words.
class Tokenizer {
 public:
  static constexpr std::int32_t kPad = 0;

  Tokenizer();  // uses sprites::vocabulary_words()
  explicit Tokenizer(std::vector<std::string> words);

  std::size_t vocab_size() const { return words_.size() + 1; }
  // Throws InputError for unknown words or captions longer than max_length.
  Caption encode(std::string_view text, std::size_t max_length = kDefaultCaptionLength) const;
  Caption unconditional(std::size_t max_length = kDefaultCaptionLength) const;
  std::vector<std::string> decode(const Caption& caption) const;
  static std::vector<std::string> split_words(std::string_view text);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

const Tokenizer& default_tokenizer();

}  // namespace diptych
