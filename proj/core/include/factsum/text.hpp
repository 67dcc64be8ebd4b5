#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace factsum {

// The single tokenizer shared by corpus preparation, the model vocabulary
// and every metric: ASCII-lowercase, split on whitespace, strip punctuation
// from both token edges, drop tokens that end up empty.
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens,
                        std::string_view separator = " ");

// Splits on every occurrence of `delimiter`. An empty delimiter returns the
// input unchanged as a single piece.
std::vector<std::string> split(std::string_view text, std::string_view delimiter);

// 64-bit FNV-1a. Stable across platforms; used for hashing tokens, doc-id
// bucketing and artifact checksums.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

}  // namespace factsum
