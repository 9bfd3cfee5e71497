#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ambient/common.hpp"

namespace ambient {

// Strictly increasing grid of diffusion noise levels. sigma = 0 (clean data)
// is represented implicitly: clean samples carry sigma_min = 0 and are
// usable at every level.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
    if (sigmas_.size() < 2) throw std::invalid_argument("NoiseSchedule: need >= 2 levels");
    if (!(sigmas_.front() > 0.0))
      throw std::invalid_argument("NoiseSchedule: first sigma must be positive");
    for (std::size_t i = 1; i < sigmas_.size(); ++i)
      if (!(sigmas_[i] > sigmas_[i - 1]))
        throw std::invalid_argument("NoiseSchedule: sigmas must be strictly increasing");
  }

  // Default grid: log-spaced levels over an EDM-style [0.02, 80] range.
  static NoiseSchedule log_spaced(std::size_t levels = 64, double sigma_lo = 0.02,
                                  double sigma_hi = 80.0) {
    std::vector<double> sigmas(levels);
    for (std::size_t i = 0; i < levels; ++i) {
      const double t = levels == 1 ? 0.0 : static_cast<double>(i) / (levels - 1);
      sigmas[i] = sigma_lo * std::pow(sigma_hi / sigma_lo, t);
    }
    return NoiseSchedule(std::move(sigmas));
  }

  std::size_t size() const { return sigmas_.size(); }
  int top_index() const { return static_cast<int>(sigmas_.size()) - 1; }
  double sigma(int index) const { return sigmas_.at(static_cast<std::size_t>(index)); }
  const std::vector<double>& sigmas() const { return sigmas_; }

 private:
  std::vector<double> sigmas_;
};

// alpha(t, t_min) = (sigma_t^2 - sigma_min^2) / sigma_t^2.
inline double alpha(double sigma_t, double sigma_min) {
  if (!(sigma_t > 0.0)) throw std::invalid_argument("alpha: sigma_t must be positive");
  if (sigma_min < 0.0) throw std::invalid_argument("alpha: sigma_min must be >= 0");
  if (sigma_t < sigma_min) throw std::invalid_argument("alpha: sigma_t < sigma_min");
  return (sigma_t * sigma_t - sigma_min * sigma_min) / (sigma_t * sigma_t);
}

enum class LambdaRuleKind { none, clip, buffer };

struct LambdaRule {
  LambdaRuleKind kind = LambdaRuleKind::none;
  double max = 0.0;

  static LambdaRule none() { return {LambdaRuleKind::none, 0.0}; }
  static LambdaRule clip(double max) { return {LambdaRuleKind::clip, max}; }
  static LambdaRule buffer(double max) { return {LambdaRuleKind::buffer, max}; }
};

// Buffer admission bound: sigma must exceed sqrt(1 + 1/(max-1)) * sigma_min.
// Note this caps sigma^2/(sigma^2 - sigma_min^2) (the square root of the
// raw weight) at max, not the raw weight itself.
inline double buffer_sigma_bound(double sigma_min, double max) {
  if (!(max > 1.0)) throw std::invalid_argument("buffer: max must be > 1");
  return std::sqrt(1.0 + 1.0 / (max - 1.0)) * sigma_min;
}

// lambda_amb = sigma^4 / (sigma^2 - sigma_min^2)^2, with optional clip or
// buffer rule. nullopt means the level is excluded by the buffer.
inline std::optional<double> lambda_amb(double sigma_t, double sigma_min,
                                        const LambdaRule& rule = LambdaRule::none()) {
  if (!(sigma_t > 0.0)) throw std::invalid_argument("lambda_amb: sigma_t must be positive");
  if (sigma_min < 0.0) throw std::invalid_argument("lambda_amb: sigma_min must be >= 0");
  if (rule.kind != LambdaRuleKind::none && !(rule.max > 1.0))
    throw std::invalid_argument("lambda_amb: rule max must be > 1");
  if (sigma_min == 0.0) return 1.0;
  if (rule.kind == LambdaRuleKind::buffer && sigma_t <= buffer_sigma_bound(sigma_min, rule.max))
    return std::nullopt;
  if (!(sigma_t > sigma_min))
    throw std::invalid_argument("lambda_amb: sigma_t must exceed sigma_min");
  const double denom = sigma_t * sigma_t - sigma_min * sigma_min;
  const double raw = std::pow(sigma_t * sigma_t / denom, 2);
  if (rule.kind == LambdaRuleKind::clip) return std::min(raw, rule.max);
  return raw;
}

// Per-sample usability: t_min absent means CLEAN (usable everywhere),
// t_max absent means no low-noise branch.
struct MaskEntry {
  std::optional<int> t_min;
  std::optional<int> t_max;

  static MaskEntry clean() { return {}; }
  static MaskEntry annotated(int t_min_index) { return {t_min_index, std::nullopt}; }
  static MaskEntry donut(int t_min_index, int t_max_index) {
    return {t_min_index, t_max_index};
  }
};

// {t >= t_min} u {t <= t_max}, with the buffer applied to the lower edge of
// the high-noise branch only (the lambda singularity lives at sigma ->
// sigma_min; the t_max branch uses the standard objective).
inline std::vector<int> usable_times(const MaskEntry& entry, const NoiseSchedule& schedule,
                                     const LambdaRule& rule = LambdaRule::none()) {
  std::vector<int> out;
  const int top = schedule.top_index();
  if (!entry.t_min.has_value()) {
    for (int t = 0; t <= top; ++t) out.push_back(t);
    return out;
  }
  const int t_min = *entry.t_min;
  if (entry.t_max.has_value()) {
    for (int t = 0; t <= std::min(*entry.t_max, top); ++t) out.push_back(t);
  }
  for (int t = std::max(t_min, 0); t <= top; ++t) {
    if (rule.kind == LambdaRuleKind::buffer &&
        schedule.sigma(t) <= buffer_sigma_bound(schedule.sigma(t_min), rule.max))
      continue;
    out.push_back(t);
  }
  return out;
}

struct AvailabilityPoint {
  int index;
  double sigma;
  std::size_t count;
  double percent;  // relative to the target-distribution dataset size
};

// Per-level sample counts. reference_size is the size of the target
// (in-distribution) dataset; percent is count / reference_size * 100, so
// out-of-distribution contributions can push it above 100%.
inline std::vector<AvailabilityPoint> availability_curve(
    const std::vector<MaskEntry>& mask, const NoiseSchedule& schedule,
    std::size_t reference_size, const LambdaRule& rule = LambdaRule::none()) {
  std::vector<std::size_t> counts(schedule.size(), 0);
  for (const auto& entry : mask) {
    for (int t : usable_times(entry, schedule, rule)) ++counts[static_cast<std::size_t>(t)];
  }
  std::vector<AvailabilityPoint> out;
  for (int t = 0; t <= schedule.top_index(); ++t) {
    const auto c = counts[static_cast<std::size_t>(t)];
    out.push_back({t, schedule.sigma(t), c,
                   reference_size == 0 ? 0.0 : 100.0 * static_cast<double>(c) / reference_size});
  }
  return out;
}

inline nlohmann::json to_json(const NoiseSchedule& s) {
  return nlohmann::json(s.sigmas());
}

inline NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  return NoiseSchedule(j.get<std::vector<double>>());
}

}  // namespace ambient
