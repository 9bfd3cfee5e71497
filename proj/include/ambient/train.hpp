#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ambient/common.hpp"
#include "ambient/density.hpp"
#include "ambient/kde.hpp"
#include "ambient/rng.hpp"
#include "ambient/schedule.hpp"

namespace ambient {

// One training point: value is the observed sample (already at noise level
// sigma_min for annotated data), with its usability mask.
struct AnnotatedSample {
  double value;
  double sigma_min = 0.0;
  std::optional<int> t_min;  // absent: CLEAN, usable everywhere
  std::optional<int> t_max;  // absent: no low-noise branch

  MaskEntry mask() const { return {t_min, t_max}; }

  static AnnotatedSample clean(double value) { return {value, 0.0, std::nullopt, std::nullopt}; }
  static AnnotatedSample annotated(double value, int t_min, double sigma_min) {
    return {value, sigma_min, t_min, std::nullopt};
  }
  static AnnotatedSample ood(double value, int t_max) {
    return {value, 0.0, std::nullopt, t_max};
  }
};

enum class Objective { clean, ambient_o };

class DenoiserModel {
 public:
  virtual ~DenoiserModel() = default;
  virtual double predict(double x, int level) const = 0;
};

// Per-level affine predictor h(x, t) = a_t * x + b_t.
class AffineDenoiser : public DenoiserModel {
 public:
  explicit AffineDenoiser(std::size_t levels) : a_(levels, 0.0), b_(levels, 0.0) {}
  AffineDenoiser(std::vector<double> a, std::vector<double> b)
      : a_(std::move(a)), b_(std::move(b)) {}

  double predict(double x, int level) const override {
    return a_.at(static_cast<std::size_t>(level)) * x + b_.at(static_cast<std::size_t>(level));
  }

  std::vector<double>& slopes() { return a_; }
  std::vector<double>& offsets() { return b_; }
  const std::vector<double>& slopes() const { return a_; }
  const std::vector<double>& offsets() const { return b_; }

 private:
  std::vector<double> a_, b_;
};

// Exact posterior-mean denoiser for an analytic mixture (oracle model).
class AnalyticPosteriorDenoiser : public DenoiserModel {
 public:
  AnalyticPosteriorDenoiser(Density1D density, NoiseSchedule schedule)
      : density_(std::move(density)), schedule_(std::move(schedule)) {}
  double predict(double x, int level) const override {
    return posterior_mean(density_, x, schedule_.sigma(level));
  }

 private:
  Density1D density_;
  NoiseSchedule schedule_;
};

// Exact posterior mean of a KDE model (the empirical optimum of the
// diffusion objective).
class KdePosteriorDenoiser : public DenoiserModel {
 public:
  KdePosteriorDenoiser(KdeModel model, NoiseSchedule schedule)
      : model_(std::move(model)), schedule_(std::move(schedule)) {}
  double predict(double x, int level) const override {
    return model_.posterior_mean(x, schedule_.sigma(level));
  }

 private:
  KdeModel model_;
  NoiseSchedule schedule_;
};

struct TrainConfig {
  Objective objective = Objective::ambient_o;
  LambdaRule rule = LambdaRule::buffer(4.0);
  std::uint64_t seed = 0;
  int draws_per_sample = 1;
  // mlp only
  std::size_t steps = 2000;
  double learning_rate = 1e-3;

  void validate(const NoiseSchedule&) const {
    if (steps == 0) throw std::invalid_argument("TrainConfig: steps must be positive");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (draws_per_sample < 1)
      throw std::invalid_argument("TrainConfig: draws_per_sample must be >= 1");
  }
};

namespace detail {

inline bool level_usable(const AnnotatedSample& s, int level, const NoiseSchedule& schedule,
                         const LambdaRule& rule) {
  const auto usable = usable_times(s.mask(), schedule, rule);
  return std::find(usable.begin(), usable.end(), level) != usable.end();
}

struct DrawTerm {
  double x_t;      // noisy input
  double target;   // regression target (the observed value)
  double alpha;    // 1 for clean objective
  double lambda;   // 1 for clean objective
};

// One fresh Monte Carlo draw of the per-sample loss term. The clean
// objective is the ambient one with sigma_min forced to 0, alpha = lambda =
// 1, so shared rng draws give bitwise-identical losses on all-CLEAN data.
inline DrawTerm draw_term(const AnnotatedSample& s, int level, const NoiseSchedule& schedule,
                          Objective objective, const LambdaRule& rule, Rng& rng) {
  const double sigma_t = schedule.sigma(level);
  const double z = rng.normal();
  if (objective == Objective::clean) {
    return {s.value + sigma_t * z, s.value, 1.0, 1.0};
  }
  const double sigma_min = s.sigma_min;
  if (sigma_t < sigma_min)
    throw contract_violation("draw_term: level below the sample's sigma_min");
  if (rule.kind == LambdaRuleKind::buffer && sigma_min > 0.0 &&
      sigma_t <= buffer_sigma_bound(sigma_min, rule.max))
    throw contract_violation("draw_term: level excluded by the buffer rule");
  if (sigma_t == sigma_min) {
    // alpha = 0 and x_t = x_{t_min} exactly: the integrand is identically 0,
    // so the (divergent) raw weight never multiplies anything nonzero.
    return {s.value, s.value, 0.0, 0.0};
  }
  const double eff = std::sqrt(sigma_t * sigma_t - sigma_min * sigma_min);
  const auto lam = lambda_amb(sigma_t, sigma_min, rule);
  if (!lam.has_value())
    throw contract_violation("draw_term: level excluded by the buffer rule");
  return {s.value + eff * z, s.value, alpha(sigma_t, sigma_min), *lam};
}

}  // namespace detail

// Monte Carlo loss of a batch at one level: lambda * (alpha*h + (1-alpha)*x_t
// - target)^2 averaged over the batch, one fresh draw per sample.
inline double loss_at(const DenoiserModel& h, const std::vector<AnnotatedSample>& batch,
                      int level, const NoiseSchedule& schedule, Objective objective,
                      const LambdaRule& rule, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("loss_at: empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    if (!detail::level_usable(s, level, schedule, rule))
      throw contract_violation("loss_at: sample used at a level outside its usable set");
    const auto term = detail::draw_term(s, level, schedule, objective, rule, rng);
    const double pred = h.predict(term.x_t, level);
    const double r = term.alpha * pred + (1.0 - term.alpha) * term.x_t - term.target;
    total += term.lambda * r * r;
  }
  return total / static_cast<double>(batch.size());
}

struct LossTracePoint {
  std::size_t step;
  int level;
  double loss;
  double lambda_weight;
};

struct AffineFitResult {
  AffineDenoiser model;
  std::vector<LossTracePoint> trace;
  // per level: number of samples that contributed
  std::vector<std::size_t> samples_per_level;
};

// Exact per-level weighted least squares over simulated (x_t, target)
// pairs. Deterministic per seed; fresh noise per draw.
inline AffineFitResult fit_affine(const std::vector<AnnotatedSample>& dataset,
                                  const NoiseSchedule& schedule, const TrainConfig& config) {
  config.validate(schedule);
  AffineFitResult result{AffineDenoiser(schedule.size()), {}, {}};
  result.samples_per_level.assign(schedule.size(), 0);
  std::vector<LossTracePoint> traces(schedule.size());
  // precompute usable sets once per distinct mask
  std::vector<std::vector<int>> usable(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    usable[i] = usable_times(dataset[i].mask(), schedule,
                             config.objective == Objective::ambient_o ? config.rule
                                                                      : LambdaRule::none());
  parallel_for(schedule.size(), [&](std::size_t li) {
    const int level = static_cast<int>(li);
    Rng rng(Rng::derive(config.seed, li));
    // weighted LS for residual alpha*(a x + b) + (1-alpha) x - y
    double suu = 0.0, suv = 0.0, svv = 0.0, suz = 0.0, svz = 0.0;
    std::size_t count = 0;
    double lambda_sum = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (std::find(usable[i].begin(), usable[i].end(), level) == usable[i].end()) continue;
      ++count;
      for (int m = 0; m < config.draws_per_sample; ++m) {
        const auto term = detail::draw_term(dataset[i], level, schedule, config.objective,
                                            config.objective == Objective::ambient_o
                                                ? config.rule
                                                : LambdaRule::none(),
                                            rng);
        const double u = term.alpha * term.x_t;
        const double v = term.alpha;
        const double zt = term.target - (1.0 - term.alpha) * term.x_t;
        const double w = term.lambda;
        suu += w * u * u;
        suv += w * u * v;
        svv += w * v * v;
        suz += w * u * zt;
        svz += w * v * zt;
        lambda_sum += w;
      }
    }
    result.samples_per_level[li] = count;
    if (count == 0) return;
    const double det = suu * svv - suv * suv;
    double a, b;
    if (std::abs(det) < 1e-12 * std::max(1.0, suu * svv)) {
      // degenerate design (e.g. single atom): slope 0, intercept from mean
      a = 0.0;
      b = svv > 0.0 ? svz / svv : 0.0;
    } else {
      a = (svv * suz - suv * svz) / det;
      b = (suu * svz - suv * suz) / det;
    }
    result.model.slopes()[li] = a;
    result.model.offsets()[li] = b;
    // recorded loss: weighted mean squared residual of the fit draws
    Rng rng2(Rng::derive(config.seed, li));
    double loss = 0.0;
    std::size_t terms = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (std::find(usable[i].begin(), usable[i].end(), level) == usable[i].end()) continue;
      for (int m = 0; m < config.draws_per_sample; ++m) {
        const auto term = detail::draw_term(dataset[i], level, schedule, config.objective,
                                            config.objective == Objective::ambient_o
                                                ? config.rule
                                                : LambdaRule::none(),
                                            rng2);
        const double r =
            term.alpha * (a * term.x_t + b) + (1.0 - term.alpha) * term.x_t - term.target;
        loss += term.lambda * r * r;
        ++terms;
      }
    }
    traces[li] = {0, level, terms ? loss / terms : 0.0,
                  count ? lambda_sum / (count * config.draws_per_sample) : 0.0};
  });
  result.trace = std::move(traces);
  return result;
}

// Small feed-forward denoiser: one hidden tanh layer of width 32, inputs
// (x, sigma, log sigma). Gradients are analytic and validated against
// central finite differences before any training run.
class MlpDenoiser : public DenoiserModel {
 public:
  static constexpr int kWidth = 32;

  MlpDenoiser(const NoiseSchedule& schedule, std::uint64_t seed)
      : sigmas_(schedule.sigmas()) {
    Rng rng(seed);
    w1_.resize(kWidth * 3);
    b1_.assign(kWidth, 0.0);
    w2_.resize(kWidth);
    for (auto& w : w1_) w = 0.5 * rng.normal();
    for (auto& w : w2_) w = 0.5 * rng.normal() / std::sqrt(double(kWidth));
    b2_ = 0.0;
  }

  double predict(double x, int level) const override {
    const double sigma = sigmas_.at(static_cast<std::size_t>(level));
    const double in[3] = {x, sigma, std::log(sigma)};
    double out = b2_;
    for (int j = 0; j < kWidth; ++j) {
      double z = b1_[j];
      for (int k = 0; k < 3; ++k) z += w1_[j * 3 + k] * in[k];
      out += w2_[j] * std::tanh(z);
    }
    return out;
  }

  std::size_t param_count() const { return w1_.size() + b1_.size() + w2_.size() + 1; }

  std::vector<double> params() const {
    std::vector<double> p;
    p.insert(p.end(), w1_.begin(), w1_.end());
    p.insert(p.end(), b1_.begin(), b1_.end());
    p.insert(p.end(), w2_.begin(), w2_.end());
    p.push_back(b2_);
    return p;
  }

  void set_params(const std::vector<double>& p) {
    std::size_t i = 0;
    for (auto& w : w1_) w = p[i++];
    for (auto& w : b1_) w = p[i++];
    for (auto& w : w2_) w = p[i++];
    b2_ = p[i++];
  }

  // Gradient of lambda*(alpha*h(x_t) + (1-alpha)*x_t - y)^2 w.r.t. params,
  // accumulated into grad (same layout as params()).
  void accumulate_gradient(double x_t, int level, double target, double alpha_w,
                           double lambda_w, std::vector<double>& grad) const {
    const double sigma = sigmas_.at(static_cast<std::size_t>(level));
    const double in[3] = {x_t, sigma, std::log(sigma)};
    double hidden[kWidth];
    double out = b2_;
    for (int j = 0; j < kWidth; ++j) {
      double z = b1_[j];
      for (int k = 0; k < 3; ++k) z += w1_[j * 3 + k] * in[k];
      hidden[j] = std::tanh(z);
      out += w2_[j] * hidden[j];
    }
    const double r = alpha_w * out + (1.0 - alpha_w) * x_t - target;
    const double dout = 2.0 * lambda_w * r * alpha_w;
    const std::size_t off_b1 = w1_.size();
    const std::size_t off_w2 = off_b1 + b1_.size();
    for (int j = 0; j < kWidth; ++j) {
      grad[off_w2 + j] += dout * hidden[j];
      const double dz = dout * w2_[j] * (1.0 - hidden[j] * hidden[j]);
      grad[off_b1 + j] += dz;
      for (int k = 0; k < 3; ++k) grad[j * 3 + k] += dz * in[k];
    }
    grad.back() += dout;
  }

 private:
  std::vector<double> sigmas_;
  std::vector<double> w1_, b1_, w2_;
  double b2_ = 0.0;
};

struct MlpFitResult {
  std::shared_ptr<MlpDenoiser> model;
  std::vector<LossTracePoint> trace;
  double gradient_check_max_rel_error;
};

// Full-gradient descent with fresh noise per step. Aborts unless the
// analytic gradient matches central finite differences at initialization.
inline MlpFitResult fit_mlp(const std::vector<AnnotatedSample>& dataset,
                            const NoiseSchedule& schedule, const TrainConfig& config) {
  config.validate(schedule);
  if (dataset.empty()) throw std::invalid_argument("fit_mlp: empty dataset");
  auto model = std::make_shared<MlpDenoiser>(schedule, Rng::derive(config.seed, 0xabc));
  const LambdaRule rule =
      config.objective == Objective::ambient_o ? config.rule : LambdaRule::none();

  std::vector<std::vector<int>> usable(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    usable[i] = usable_times(dataset[i].mask(), schedule, rule);

  struct Term {
    double x_t, target, alpha, lambda;
    int level;
  };
  auto build_terms = [&](std::uint64_t step_seed) {
    Rng rng(step_seed);
    std::vector<Term> terms;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (usable[i].empty()) continue;
      // uniform over the sample's usable schedule indices
      const int level = usable[i][rng.below(usable[i].size())];
      const auto d = detail::draw_term(dataset[i], level, schedule, config.objective, rule, rng);
      terms.push_back({d.x_t, d.target, d.alpha, d.lambda, level});
    }
    return terms;
  };
  auto loss_and_grad = [&](const std::vector<Term>& terms, std::vector<double>* grad) {
    double loss = 0.0;
    for (const auto& t : terms) {
      const double pred = model->predict(t.x_t, t.level);
      const double r = t.alpha * pred + (1.0 - t.alpha) * t.x_t - t.target;
      loss += t.lambda * r * r;
      if (grad) model->accumulate_gradient(t.x_t, t.level, t.target, t.alpha, t.lambda, *grad);
    }
    const double inv = 1.0 / static_cast<double>(terms.size());
    if (grad)
      for (auto& g : *grad) g *= inv;
    return loss * inv;
  };

  // gradient contract check at initialization
  const auto check_terms = build_terms(Rng::derive(config.seed, 0xfeed));
  std::vector<double> grad(model->param_count(), 0.0);
  loss_and_grad(check_terms, &grad);
  std::vector<double> p0 = model->params();
  double max_rel = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < p0.size(); i += std::max<std::size_t>(1, p0.size() / 24)) {
    std::vector<double> p = p0;
    p[i] = p0[i] + h;
    model->set_params(p);
    const double lp = loss_and_grad(check_terms, nullptr);
    p[i] = p0[i] - h;
    model->set_params(p);
    const double lm = loss_and_grad(check_terms, nullptr);
    const double fd = (lp - lm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - grad[i]) / denom);
  }
  model->set_params(p0);
  if (max_rel > 1e-4)
    throw std::runtime_error("fit_mlp: analytic gradient failed the finite-difference check (" +
                             std::to_string(max_rel) + ")");

  MlpFitResult result{model, {}, max_rel};
  std::vector<double> losses;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto terms = build_terms(Rng::derive(config.seed, step + 1));
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = loss_and_grad(terms, &grad);
    losses.push_back(loss);
    if (loss > 1e6) throw training_diverged("fit_mlp: loss exceeded 1e6", losses);
    auto p = model->params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= config.learning_rate * grad[i];
    model->set_params(p);
    if (step % 50 == 0 || step + 1 == config.steps)
      result.trace.push_back({step, -1, loss, 0.0});
  }
  return result;
}

// Deterministic first-order reverse sampler: x_{t-1} = x_t +
// (sigma_{t-1} - sigma_t) (x_t - h(x_t, t)) / sigma_t, then a final
// posterior-mean step from sigma_0 to 0.
inline std::vector<double> generate(const DenoiserModel& h, const NoiseSchedule& schedule,
                                    std::size_t n, std::uint64_t seed) {
  std::vector<double> out(n, 0.0);
  const int top = schedule.top_index();
  parallel_for(n, [&](std::size_t i) {
    Rng rng(Rng::derive(seed, i));
    double x = schedule.sigma(top) * rng.normal();
    for (int t = top; t >= 1; --t) {
      const double sigma_t = schedule.sigma(t);
      const double denoised = h.predict(x, t);
      x += (schedule.sigma(t - 1) - sigma_t) * (x - denoised) / sigma_t;
      if (!std::isfinite(x))
        throw generation_failure("generate: non-finite trajectory value", t);
    }
    x = h.predict(x, 0);
    if (!std::isfinite(x)) throw generation_failure("generate: non-finite final value", 0);
    out[i] = x;
  });
  return out;
}

struct EvalStats {
  double tv_vs_truth;
  double wasserstein1;
  double mean;
  double var;
};

// Desk-scale stand-in for FID: TV at a fixed evaluation bandwidth plus W1
// against the analytic inverse CDF.
inline EvalStats eval_generated(const std::vector<double>& samples, const Density1D& truth,
                                double eval_bandwidth = 0.05) {
  if (samples.size() < 100) throw std::invalid_argument("eval_generated: need n >= 100");
  const KdeModel kde = KdeModel::from_samples(samples);
  const Density1D smoothed_truth = convolve(truth, eval_bandwidth);
  const double tv = tv_to_analytic(kde, smoothed_truth, eval_bandwidth, 1e-6);

  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double w1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    w1 += std::abs(sorted[i] - truth.quantile(u));
  }
  w1 /= static_cast<double>(n);

  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double var = 0.0;
  for (double x : sorted) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  return {tv, w1, mean, var};
}

inline nlohmann::json to_json(const AffineDenoiser& d, const NoiseSchedule& schedule) {
  return {{"kind", "affine-per-level"},
          {"sigmas", schedule.sigmas()},
          {"a", d.slopes()},
          {"b", d.offsets()}};
}

}  // namespace ambient
