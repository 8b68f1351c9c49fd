#include "ug/corpus.hpp"

namespace ug {

std::vector<int32_t> ingest_bytes(const std::string& text) {
  std::vector<int32_t> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<int32_t>(c));
  return out;
}

std::string detokenize(const std::vector<int32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int32_t id : ids) {
    if (id == kUgTokenId) throw contract_error("detokenize: compression slot id has no bytes");
    if (id < 0 || id >= kByteVocab) throw contract_error("detokenize: id outside byte range");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::string synth_text(u64 seed, i64 n_chars) {
  if (n_chars < 0) throw contract_error("synth_text: negative length");
  // A small zipf-ish lexicon keeps the byte statistics learnable at desk scale.
  static const char* kWords[] = {
      "the", "a",    "of",   "to",   "and",  "in",   "is",    "it",    "on",    "as",
      "at",  "be",   "we",   "he",   "sun",  "sky",  "sea",   "map",   "ink",   "oak",
      "fog", "dawn", "tide", "stone", "river", "light", "green", "quiet", "round", "small",
  };
  constexpr int kNumWords = static_cast<int>(sizeof(kWords) / sizeof(kWords[0]));
  Rng r = Rng(seed).split("synth_text");
  std::string out;
  out.reserve(static_cast<size_t>(n_chars) + 16);
  int since_sentence = 0;
  while (static_cast<i64>(out.size()) < n_chars) {
    // Bias toward the head of the lexicon.
    u64 a = r.below(kNumWords), b = r.below(kNumWords);
    const char* w = kWords[a < b ? a : b];
    if (!out.empty()) out.push_back(' ');
    out += w;
    ++since_sentence;
    if (since_sentence >= 6 + static_cast<int>(r.below(6))) {
      out += r.below(4) == 0 ? "," : ".";
      since_sentence = 0;
    }
  }
  out.resize(static_cast<size_t>(n_chars));
  return out;
}

std::vector<int32_t> synth_tokens(u64 seed, i64 n_tokens) {
  return ingest_bytes(synth_text(seed, n_tokens));
}

}  // namespace ug
