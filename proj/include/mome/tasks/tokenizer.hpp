// SPDX-License-Identifier: Apache-2.0
//
// Character-level tokenizer over a fixed 64-symbol vocabulary.

#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mome::tasks {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kVocabSize = 64;

// Printable symbols in id order, starting at id 3.
inline constexpr std::string_view kAlphabet =
    " abcdefghijklmnopqrstuvwxyz0123456789.,;:!?'\"-+*/=<>()[]#_&%@";
static_assert(kAlphabet.size() + 3 == kVocabSize);

class TokenizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::vector<int> tokenize(std::string_view text);
// Special ids (PAD/BOS/EOS) are dropped.
std::string detokenize(std::span<const int> ids);

int token_id(char c);
char token_char(int id);

}  // namespace mome::tasks
