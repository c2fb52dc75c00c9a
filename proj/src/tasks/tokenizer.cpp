// SPDX-License-Identifier: Apache-2.0

#include "mome/tasks/tokenizer.hpp"

namespace mome::tasks {

int token_id(char c) {
  const auto pos = kAlphabet.find(c);
  if (pos == std::string_view::npos) {
    throw TokenizeError(std::string("character '") + c + "' is outside the vocabulary");
  }
  return static_cast<int>(pos) + 3;
}

char token_char(int id) {
  if (id < 3 || id >= kVocabSize) throw TokenizeError("id " + std::to_string(id) + " has no printable symbol");
  return kAlphabet[static_cast<std::size_t>(id - 3)];
}

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(token_id(c));
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    out.push_back(token_char(id));
  }
  return out;
}

}  // namespace mome::tasks
