#pragma once

#include <span>

#include "ug/model.hpp"

namespace ug::ref {

// Straight-line plain causal decoder over the base weights, written
// independently of the tape/mask/kernel machinery: per-position loops,
// causality by loop bounds, rotary rotation inlined. Serves as the oracle
// the cache-aware engine must reproduce when run with an empty cache and
// k = 0 compression slots.
//
// Intermediates are stored in T and accumulated in double at the same op
// boundaries as the engine, so agreement is tight even in f32.
template <typename T>
Tensor<T> decoder_logits(const Model<T>& m, std::span<const int32_t> tokens);

}  // namespace ug::ref
