#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ug/common.hpp"
#include "ug/rng.hpp"

namespace ug {

// One window of the source stream, 1-based inclusive token span plus its
// compression ratio and the number of compression slots it emits.
struct Segment {
  i64 start = 0;
  i64 end = 0;
  int alpha = 0;
  i64 k = 0;

  i64 len() const { return end - start + 1; }
};

struct SegmentPlan {
  i64 window = 0;
  i64 total = 0;
  std::vector<Segment> segments;

  i64 count() const { return static_cast<i64>(segments.size()); }
  // Total number of compression slots the plan emits.
  i64 ug_total() const {
    i64 s = 0;
    for (const auto& seg : segments) s += seg.k;
    return s;
  }
  void validate() const;
};

enum class RatioMode {
  per_segment,   // fresh draw for every segment
  per_instance,  // one draw shared by all segments of the plan
  monotonous,    // fixed ratio, no randomness
};

const char* ratio_mode_name(RatioMode m);
RatioMode ratio_mode_from_name(const std::string& s);

// Draws compression ratios. All draws come from Rng(seed), so the same
// sampler produces the same plan every time.
struct RatioSampler {
  RatioMode mode = RatioMode::per_segment;
  std::vector<int> candidates{2, 4, 8, 16, 32};
  int fixed_alpha = 4;  // used by monotonous mode
  u64 seed = 0;

  void validate() const;
};

// Cuts [1, total] into consecutive windows; the last one may be short.
// Ratios are left unset (alpha = 0, k = 0).
SegmentPlan partition(i64 total, i64 window);

// Fills in alpha and k = ceil(len / alpha) for every segment.
SegmentPlan assign_ratios(SegmentPlan plan, const RatioSampler& sampler);

SegmentPlan make_plan(i64 total, i64 window, const RatioSampler& sampler);

// One line per segment: "start end alpha k". Round-trips exactly.
std::string plan_to_text(const SegmentPlan& plan);
SegmentPlan plan_from_text(std::string_view text, i64 window);

}  // namespace ug
