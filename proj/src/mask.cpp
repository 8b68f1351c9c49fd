#include "ug/mask.hpp"

#include <algorithm>

namespace ug {

const char* mask_variant_name(MaskVariant v) {
  switch (v) {
    case MaskVariant::stepwise: return "stepwise";
    case MaskVariant::segmentation: return "segmentation";
    case MaskVariant::full_coverage: return "full_coverage";
  }
  return "?";
}

MaskVariant mask_variant_from_name(const std::string& s) {
  if (s == "stepwise") return MaskVariant::stepwise;
  if (s == "segmentation") return MaskVariant::segmentation;
  if (s == "full_coverage") return MaskVariant::full_coverage;
  throw config_error("unknown mask variant: " + s);
}

std::vector<i64> Mask::row_cols(i64 r) const {
  std::vector<i64> out;
  for (i64 c = 0; c < cols; ++c)
    if (at(r, c)) out.push_back(c);
  return out;
}

std::string Mask::ascii() const {
  std::string out;
  out.reserve((cols + 1) * rows);
  for (i64 r = 0; r < rows; ++r) {
    for (i64 c = 0; c < cols; ++c) out += at(r, c) ? '#' : '.';
    out += '\n';
  }
  return out;
}

void Mask::validate() const {
  if (static_cast<i64>(bits.size()) != rows * cols) throw shape_error("mask: bit count mismatch");
  for (i64 r = 0; r < rows; ++r) {
    bool any = false;
    for (i64 c = 0; c < cols; ++c) any |= at(r, c);
    if (!any) throw contract_error("mask: empty row " + std::to_string(r));
    for (i64 c = 0; c < layout.cache_len; ++c)
      if (!at(r, c)) throw contract_error("mask: cache column blocked in row " + std::to_string(r));
  }
}

namespace {

// Last normal column (1-based count) a given ug row may reach, per variant.
i64 ug_field_end(MaskVariant v, i64 j, int alpha, i64 n) {
  switch (v) {
    case MaskVariant::stepwise:
    case MaskVariant::segmentation:
      return std::min<i64>(j * alpha, n);
    case MaskVariant::full_coverage:
      return n;
  }
  return n;
}

i64 ug_field_begin(MaskVariant v, i64 j, int alpha) {
  // 1-based first attendable normal column.
  if (v == MaskVariant::segmentation) return (j - 1) * alpha + 1;
  return 1;
}

Mask build_single(MaskVariant v, const AttentionLayout& layout, int alpha, bool ug_to_ug) {
  layout.validate();
  const i64 L = layout.cache_len, n = layout.normal_len, k = layout.ug_len;
  if (k > 0) {
    if (alpha < 1) throw contract_error("mask: ratio must be >= 1 when ug slots exist");
    if (k != ceil_div(n, alpha))
      throw shape_error("mask: layout has k=" + std::to_string(k) + ", expected ceil(" +
                        std::to_string(n) + "/" + std::to_string(alpha) + ")");
  }
  Mask m;
  m.rows = layout.rows();
  m.cols = layout.cols();
  m.variant = v;
  m.layout = layout;
  m.bits.assign(m.rows * m.cols, 0);

  // Normal rows: full cache + own causal prefix. Identical in all variants.
  for (i64 j = 1; j <= n; ++j) {
    i64 r = j - 1;
    for (i64 c = 0; c < L; ++c) m.set(r, c);
    for (i64 c = 1; c <= j; ++c) m.set(r, L + c - 1);
  }
  // Compression rows: full cache + variant-specific normal field + causal
  // (self-inclusive) same-segment ug columns.
  for (i64 j = 1; j <= k; ++j) {
    i64 r = n + j - 1;
    for (i64 c = 0; c < L; ++c) m.set(r, c);
    i64 lo = ug_field_begin(v, j, alpha), hi = ug_field_end(v, j, alpha, n);
    for (i64 c = lo; c <= hi; ++c) m.set(r, L + c - 1);
    if (ug_to_ug)
      for (i64 c = 1; c <= j; ++c) m.set(r, L + n + c - 1);
  }
  m.validate();
  return m;
}

}  // namespace

Mask stepwise_mask(const AttentionLayout& layout, int alpha, bool ug_to_ug) {
  return build_single(MaskVariant::stepwise, layout, alpha, ug_to_ug);
}
Mask segmentation_mask(const AttentionLayout& layout, int alpha, bool ug_to_ug) {
  return build_single(MaskVariant::segmentation, layout, alpha, ug_to_ug);
}
Mask full_coverage_mask(const AttentionLayout& layout, int alpha, bool ug_to_ug) {
  return build_single(MaskVariant::full_coverage, layout, alpha, ug_to_ug);
}
Mask build_mask(MaskVariant v, const AttentionLayout& layout, int alpha, bool ug_to_ug) {
  return build_single(v, layout, alpha, ug_to_ug);
}

Mask unified_training_mask(const SegmentPlan& plan, MaskVariant v, bool ug_to_ug) {
  plan.validate();
  const i64 nseg = plan.count();
  // Slot offsets of each segment's normal and ug runs in the interleaved
  // sequence [x1.., ug1.., x2.., ug2.., ...].
  std::vector<i64> norm_off(nseg), ug_off(nseg);
  i64 off = 0;
  for (i64 i = 0; i < nseg; ++i) {
    norm_off[i] = off;
    off += plan.segments[i].len();
    ug_off[i] = off;
    off += plan.segments[i].k;
  }
  const i64 S = off;

  Mask m;
  m.rows = S;
  m.cols = S;
  m.variant = v;
  m.layout = AttentionLayout{0, plan.total, plan.ug_total()};
  m.bits.assign(S * S, 0);

  for (i64 i = 0; i < nseg; ++i) {
    const Segment& seg = plan.segments[i];
    const i64 n = seg.len(), k = seg.k;
    // Earlier segments contribute only their ug slots.
    std::vector<i64> earlier;
    for (i64 e = 0; e < i; ++e)
      for (i64 j = 0; j < plan.segments[e].k; ++j) earlier.push_back(ug_off[e] + j);

    for (i64 j = 1; j <= n; ++j) {
      i64 r = norm_off[i] + j - 1;
      for (i64 c : earlier) m.set(r, c);
      for (i64 c = 1; c <= j; ++c) m.set(r, norm_off[i] + c - 1);
    }
    for (i64 j = 1; j <= k; ++j) {
      i64 r = ug_off[i] + j - 1;
      for (i64 c : earlier) m.set(r, c);
      i64 lo = ug_field_begin(v, j, seg.alpha), hi = ug_field_end(v, j, seg.alpha, n);
      for (i64 c = lo; c <= hi; ++c) m.set(r, norm_off[i] + c - 1);
      if (ug_to_ug)
        for (i64 c = 1; c <= j; ++c) m.set(r, ug_off[i] + c - 1);
    }
  }
  return m;
}

}  // namespace ug
