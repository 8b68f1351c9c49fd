#pragma once

#include <string>
#include <vector>

#include "ug/common.hpp"
#include "ug/segment.hpp"

namespace ug {

enum class MaskVariant { stepwise, segmentation, full_coverage };

const char* mask_variant_name(MaskVariant v);
MaskVariant mask_variant_from_name(const std::string& s);

// Slot arrangement for one attention pass. Key order is fixed as
// [cache | normal | current-ug]; query order is [normal | current-ug].
// Every consumer (masks, positions, the attention engine) relies on exactly
// this ordering.
struct AttentionLayout {
  i64 cache_len = 0;   // previously emitted compression tokens
  i64 normal_len = 0;  // tokens of the current segment, <= w
  i64 ug_len = 0;      // compression tokens being emitted now

  i64 rows() const { return normal_len + ug_len; }
  i64 cols() const { return cache_len + normal_len + ug_len; }
  void validate() const {
    if (cache_len < 0 || normal_len < 0 || ug_len < 0)
      throw shape_error("layout: negative slot count");
    if (rows() == 0) throw contract_error("layout: no query rows");
  }
};

// Boolean attendability matrix, query rows x key cols, true = may attend.
struct Mask {
  i64 rows = 0;
  i64 cols = 0;
  MaskVariant variant = MaskVariant::stepwise;
  AttentionLayout layout;  // aggregate counts for unified masks
  std::vector<uint8_t> bits;

  bool at(i64 r, i64 c) const { return bits[r * cols + c] != 0; }
  void set(i64 r, i64 c) { bits[r * cols + c] = 1; }

  // True columns of one row, for tests that walk receptive fields.
  std::vector<i64> row_cols(i64 r) const;

  // '#' = attend, '.' = blocked; one text line per query row.
  std::string ascii() const;

  // Checks the structural invariants: no empty row, cache columns all true.
  void validate() const;
};

// Single-segment masks. Layout must satisfy ug_len == ceil(normal_len/alpha)
// whenever ug_len > 0. `ug_to_ug` keeps the causal self-inclusive attention
// of compression slots to one another; flipping it off removes those columns
// entirely (ablation).
Mask stepwise_mask(const AttentionLayout& layout, int alpha, bool ug_to_ug = true);
Mask segmentation_mask(const AttentionLayout& layout, int alpha, bool ug_to_ug = true);
Mask full_coverage_mask(const AttentionLayout& layout, int alpha, bool ug_to_ug = true);
Mask build_mask(MaskVariant v, const AttentionLayout& layout, int alpha, bool ug_to_ug = true);

// Square mask over the interleaved slots [x1.., ug1.., x2.., ug2.., ...] of a
// full plan. Within-segment blocks follow the variant; every slot attends all
// earlier segments' ug slots and never their normal slots. One full-sequence
// pass under this mask is mathematically identical to the serial procedure.
Mask unified_training_mask(const SegmentPlan& plan, MaskVariant v, bool ug_to_ug = true);

}  // namespace ug
