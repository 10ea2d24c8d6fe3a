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

#include "diptych/caption.hpp"

#include <algorithm>
#include <cctype>

#include "diptych/error.hpp"
#include "diptych/sprites.hpp"

namespace diptych {

bool Caption::is_unconditional() const {
  return std::all_of(ids.begin(), ids.end(), [](std::int32_t id) { return id == Tokenizer::kPad; });
}

Tokenizer::Tokenizer() : Tokenizer(sprites::vocabulary_words()) {}

Tokenizer::Tokenizer(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<std::int32_t>(i + 1));
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  const auto flush = [&] {
    const auto strip = [](char c) { return c == '.' || c == ',' || c == '"' || c == '\''; };
    while (!current.empty() && strip(current.back())) current.pop_back();
    std::size_t start = 0;
    while (start < current.size() && strip(current[start])) ++start;
    if (start < current.size()) out.push_back(current.substr(start));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

Caption Tokenizer::encode(std::string_view text, std::size_t max_length) const {
  const auto words = split_words(text);
  if (words.size() > max_length) {
    throw InputError("caption has " + std::to_string(words.size()) + " words; limit is " +
                     std::to_string(max_length));
  }
  Caption c{std::vector<std::int32_t>(max_length, kPad)};
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto it = index_.find(words[i]);
    if (it == index_.end()) throw InputError("word '" + words[i] + "' is not in the caption vocabulary");
    c.ids[i] = it->second;
  }
  return c;
}

Caption Tokenizer::unconditional(std::size_t max_length) const {
  return Caption{std::vector<std::int32_t>(max_length, kPad)};
}

std::vector<std::string> Tokenizer::decode(const Caption& caption) const {
  std::vector<std::string> out;
  for (std::int32_t id : caption.ids) {
    if (id == kPad) continue;
    if (id < 0 || static_cast<std::size_t>(id) > words_.size()) throw InputError("token id out of vocabulary");
    out.push_back(words_[static_cast<std::size_t>(id) - 1]);
  }
  return out;
}

const Tokenizer& default_tokenizer() {
  static const Tokenizer t;
  return t;
}

}  // namespace diptych
