#include "ug/segment.hpp"

#include <algorithm>
#include <sstream>

namespace ug {

void SegmentPlan::validate() const {
  if (window <= 0) throw contract_error("plan: window must be positive");
  if (total <= 0) throw contract_error("plan: total must be positive");
  if (segments.empty()) throw contract_error("plan: no segments");
  i64 expect_start = 1;
  for (size_t i = 0; i < segments.size(); ++i) {
    const Segment& s = segments[i];
    if (s.start != expect_start)
      throw contract_error("plan: segment " + std::to_string(i + 1) + " starts at " +
                           std::to_string(s.start) + ", expected " + std::to_string(expect_start));
    if (s.end < s.start) throw contract_error("plan: empty segment " + std::to_string(i + 1));
    i64 len = s.len();
    bool last = (i + 1 == segments.size());
    if (len > window || (!last && len != window))
      throw contract_error("plan: segment " + std::to_string(i + 1) + " has length " +
                           std::to_string(len) + " for window " + std::to_string(window));
    if (s.alpha != 0) {
      if (s.alpha < 1) throw contract_error("plan: ratio must be >= 1");
      if (s.k != ceil_div(len, s.alpha))
        throw contract_error("plan: segment " + std::to_string(i + 1) + " has k=" +
                             std::to_string(s.k) + ", expected ceil(" + std::to_string(len) +
                             "/" + std::to_string(s.alpha) + ")");
    }
    expect_start = s.end + 1;
  }
  if (segments.back().end != total)
    throw contract_error("plan: segments cover " + std::to_string(segments.back().end) +
                         " of " + std::to_string(total) + " tokens");
}

const char* ratio_mode_name(RatioMode m) {
  switch (m) {
    case RatioMode::per_segment: return "per_segment";
    case RatioMode::per_instance: return "per_instance";
    case RatioMode::monotonous: return "monotonous";
  }
  return "?";
}

RatioMode ratio_mode_from_name(const std::string& s) {
  if (s == "per_segment") return RatioMode::per_segment;
  if (s == "per_instance") return RatioMode::per_instance;
  if (s == "monotonous") return RatioMode::monotonous;
  throw config_error("unknown ratio mode: " + s);
}

void RatioSampler::validate() const {
  if (mode == RatioMode::monotonous) {
    if (fixed_alpha < 1) throw config_error("sampler: fixed ratio must be >= 1");
    return;
  }
  if (candidates.empty()) throw config_error("sampler: no candidate ratios");
  for (int a : candidates)
    if (a < 1) throw config_error("sampler: ratios must be >= 1");
}

SegmentPlan partition(i64 total, i64 window) {
  if (window <= 0) throw contract_error("partition: window must be positive");
  if (total <= 0) throw contract_error("partition: empty input");
  SegmentPlan plan;
  plan.window = window;
  plan.total = total;
  for (i64 start = 1; start <= total; start += window) {
    Segment s;
    s.start = start;
    s.end = std::min(start + window - 1, total);
    plan.segments.push_back(s);
  }
  return plan;
}

SegmentPlan assign_ratios(SegmentPlan plan, const RatioSampler& sampler) {
  sampler.validate();
  Rng rng(sampler.seed);
  int shared = 0;
  if (sampler.mode == RatioMode::per_instance)
    shared = sampler.candidates[rng.below(sampler.candidates.size())];
  for (auto& seg : plan.segments) {
    switch (sampler.mode) {
      case RatioMode::per_segment:
        seg.alpha = sampler.candidates[rng.below(sampler.candidates.size())];
        break;
      case RatioMode::per_instance:
        seg.alpha = shared;
        break;
      case RatioMode::monotonous:
        seg.alpha = sampler.fixed_alpha;
        break;
    }
    seg.k = ceil_div(seg.len(), seg.alpha);
  }
  plan.validate();
  return plan;
}

SegmentPlan make_plan(i64 total, i64 window, const RatioSampler& sampler) {
  return assign_ratios(partition(total, window), sampler);
}

std::string plan_to_text(const SegmentPlan& plan) {
  std::ostringstream out;
  for (const auto& s : plan.segments)
    out << s.start << " " << s.end << " " << s.alpha << " " << s.k << "\n";
  return out.str();
}

SegmentPlan plan_from_text(std::string_view text, i64 window) {
  SegmentPlan plan;
  plan.window = window;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Segment s;
    if (!(ls >> s.start >> s.end >> s.alpha >> s.k))
      throw io_error("plan: malformed line: " + line);
    plan.segments.push_back(s);
  }
  if (plan.segments.empty()) throw io_error("plan: no segments in text");
  plan.total = plan.segments.back().end;
  if (plan.window == 0) {
    // Recover the window from the first segment; a single short segment
    // still yields a consistent plan.
    plan.window = plan.segments.front().len();
  }
  plan.validate();
  return plan;
}

}  // namespace ug
