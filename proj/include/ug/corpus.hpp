#pragma once

#include <string>
#include <vector>

#include "ug/common.hpp"
#include "ug/rng.hpp"

namespace ug {

// Byte-level tokenization: ids 0..kByteVocab-1 are raw bytes; kUgTokenId is
// reserved for the compression slot and is never produced from text (the
// model vocabulary is kByteVocab + 1).
constexpr i64 kByteVocab = 256;
constexpr int32_t kUgTokenId = 256;

std::vector<int32_t> ingest_bytes(const std::string& text);
std::string detokenize(const std::vector<int32_t>& ids);

// Deterministic synthetic prose: short words over a small alphabet with
// punctuation, enough structure for a desk-scale LM to learn from.
std::string synth_text(u64 seed, i64 n_chars);

// Sliding samples of fixed length drawn from a synthetic corpus.
std::vector<int32_t> synth_tokens(u64 seed, i64 n_tokens);

}  // namespace ug
