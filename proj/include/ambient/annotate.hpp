#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ambient/common.hpp"
#include "ambient/density.hpp"
#include "ambient/fields.hpp"
#include "ambient/kde.hpp"
#include "ambient/quadrature.hpp"
#include "ambient/schedule.hpp"

namespace ambient {

// Time-conditional classifier between noised clean and noised corrupt data.
// bayes-exact evaluates the likelihood ratio from analytic (or KDE)
// densities; learned-logistic fits per-level weights on features
// (1, x, x^2, |x|) of the noisy scalar.
class NoiseClassifier {
 public:
  enum class Kind { bayes_exact, learned_logistic };

  static NoiseClassifier bayes_exact(Density1D p0, Density1D q0) {
    NoiseClassifier c;
    c.kind_ = Kind::bayes_exact;
    c.p0_ = std::make_shared<Density1D>(std::move(p0));
    c.q0_ = std::make_shared<Density1D>(std::move(q0));
    return c;
  }

  static NoiseClassifier bayes_kde(std::vector<double> good, std::vector<double> bad) {
    if (good.empty() || bad.empty())
      throw std::invalid_argument("bayes_kde: both classes must be nonempty");
    NoiseClassifier c;
    c.kind_ = Kind::bayes_exact;
    c.good_kde_ = std::make_shared<KdeModel>(KdeModel::from_samples(std::move(good)));
    c.bad_kde_ = std::make_shared<KdeModel>(KdeModel::from_samples(std::move(bad)));
    return c;
  }

  // Per-level logistic regression minimized by full-batch Newton iterations
  // to gradient norm < 1e-8. Each training point contributes noise_draws
  // Monte Carlo noisings per level.
  static NoiseClassifier fit_logistic(const std::vector<double>& good,
                                      const std::vector<double>& bad,
                                      const NoiseSchedule& schedule, std::uint64_t seed,
                                      int noise_draws = 64) {
    if (good.empty() || bad.empty())
      throw std::invalid_argument("fit_logistic: both classes must be nonempty");
    NoiseClassifier c;
    c.kind_ = Kind::learned_logistic;
    c.level_sigmas_ = schedule.sigmas();
    c.weights_.resize(schedule.size());
    parallel_for(schedule.size(), [&](std::size_t level) {
      const double sigma = schedule.sigma(static_cast<int>(level));
      Rng rng(Rng::derive(seed, level));
      std::vector<Eigen::Vector4d> xs;
      std::vector<double> ys;
      xs.reserve((good.size() + bad.size()) * noise_draws);
      for (int pass = 0; pass < 2; ++pass) {
        const auto& data = pass == 0 ? good : bad;
        const double label = pass == 0 ? 1.0 : 0.0;
        for (double x0 : data) {
          for (int m = 0; m < noise_draws; ++m) {
            const double x = x0 + sigma * rng.normal();
            xs.push_back(features(x));
            ys.push_back(label);
          }
        }
      }
      c.weights_[level] = newton_logistic(xs, ys);
    });
    return c;
  }

  Kind kind() const { return kind_; }

  // Classifier probability that a noisy point at level sigma came from the
  // clean class. sigma = 0 is allowed for analytic mode.
  double prob(double x, double sigma) const {
    if (kind_ == Kind::bayes_exact) {
      double p, q;
      if (p0_) {
        if (sigma == 0.0) {
          p = p0_->pdf(x);
          q = q0_->pdf(x);
        } else {
          const auto& pair = smoothed(sigma);
          p = pair.first.pdf(x);
          q = pair.second.pdf(x);
        }
      } else {
        if (!(sigma > 0.0))
          throw std::invalid_argument("prob: KDE-backed classifier needs sigma > 0");
        p = good_kde_->density_at(x, sigma);
        q = bad_kde_->density_at(x, sigma);
      }
      if (p + q <= 0.0) return 0.5;
      return p / (p + q);
    }
    const std::size_t level = nearest_level(sigma);
    const double z = weights_[level].dot(features(x));
    return 1.0 / (1.0 + std::exp(-z));
  }

  double prob_at_level(double x, const NoiseSchedule& schedule, int level) const {
    return prob(x, schedule.sigma(level));
  }

  nlohmann::json params_json() const {
    nlohmann::json j;
    if (kind_ == Kind::bayes_exact) {
      j["kind"] = "bayes-exact";
      if (p0_) {
        j["p0"] = to_json(*p0_);
        j["q0"] = to_json(*q0_);
      } else {
        j["good_kde"] = to_json(*good_kde_);
        j["bad_kde"] = to_json(*bad_kde_);
      }
    } else {
      j["kind"] = "learned-logistic";
      j["features"] = {"1", "x", "x^2", "|x|"};
      auto& levels = j["levels"] = nlohmann::json::array();
      for (std::size_t i = 0; i < weights_.size(); ++i) {
        levels.push_back({{"sigma", level_sigmas_[i]},
                          {"weights",
                           {weights_[i](0), weights_[i](1), weights_[i](2), weights_[i](3)}}});
      }
    }
    return j;
  }

 private:
  NoiseClassifier() = default;

  static Eigen::Vector4d features(double x) { return {1.0, x, x * x, std::abs(x)}; }

  static Eigen::Vector4d newton_logistic(const std::vector<Eigen::Vector4d>& xs,
                                         const std::vector<double>& ys) {
    Eigen::Vector4d w = Eigen::Vector4d::Zero();
    const double ridge = 1e-9;
    for (int iter = 0; iter < 200; ++iter) {
      Eigen::Vector4d grad = Eigen::Vector4d::Zero();
      Eigen::Matrix4d hess = ridge * Eigen::Matrix4d::Identity();
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double z = w.dot(xs[i]);
        const double p = 1.0 / (1.0 + std::exp(-z));
        grad += (p - ys[i]) * xs[i];
        hess += p * (1.0 - p) * xs[i] * xs[i].transpose();
      }
      grad += ridge * w;
      const Eigen::Vector4d step = hess.ldlt().solve(grad);
      w -= step;
      if (grad.norm() / xs.size() < 1e-8) break;
    }
    return w;
  }

  std::size_t nearest_level(double sigma) const {
    const auto it = std::lower_bound(level_sigmas_.begin(), level_sigmas_.end(), sigma);
    if (it == level_sigmas_.begin()) return 0;
    if (it == level_sigmas_.end()) return level_sigmas_.size() - 1;
    const std::size_t hi = static_cast<std::size_t>(it - level_sigmas_.begin());
    return (sigma - level_sigmas_[hi - 1] < level_sigmas_[hi] - sigma) ? hi - 1 : hi;
  }

  struct SmoothedCache {
    std::mutex mutex;
    std::map<double, std::pair<Density1D, Density1D>> map;
  };

  const std::pair<Density1D, Density1D>& smoothed(double sigma) const {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->map.find(sigma);
    if (it == cache_->map.end()) {
      it = cache_->map
               .emplace(sigma, std::make_pair(convolve(*p0_, sigma), convolve(*q0_, sigma)))
               .first;
    }
    return it->second;
  }

  Kind kind_ = Kind::bayes_exact;
  std::shared_ptr<Density1D> p0_, q0_;
  std::shared_ptr<KdeModel> good_kde_, bad_kde_;
  std::vector<double> level_sigmas_;
  std::vector<Eigen::Vector4d> weights_;
  std::shared_ptr<SmoothedCache> cache_ = std::make_shared<SmoothedCache>();
};

struct ExpectedProb {
  double value;
  double standard_error;  // 0 for quadrature mode
};

// E over the noised bad distribution of the classifier output, by quadrature
// against the analytic q_sigma.
inline ExpectedProb expected_prob_on_bad(const NoiseClassifier& c, const Density1D& q0,
                                         double sigma, double abs_tol = 1e-7) {
  if (sigma == 0.0) {
    const auto [lo, hi] = q0.support();
    const double v = integrate_adaptive(
                         [&](double x) { return q0.pdf(x) * c.prob(x, 0.0); }, lo, hi,
                         abs_tol)
                         .value;
    return {std::clamp(v, 0.0, 1.0), 0.0};
  }
  const Density1D q_sigma = convolve(q0, sigma);
  const auto [lo, hi] = q_sigma.support();
  const double v = integrate_adaptive(
                       [&](double x) { return q_sigma.pdf(x) * c.prob(x, sigma); }, lo, hi,
                       abs_tol)
                       .value;
  return {std::clamp(v, 0.0, 1.0), 0.0};
}

// Monte Carlo version over a finite bad set, noise_draws noisings per point.
inline ExpectedProb expected_prob_on_bad(const NoiseClassifier& c,
                                         const std::vector<double>& bad, double sigma,
                                         std::uint64_t seed, int noise_draws = 256) {
  if (bad.empty()) throw std::invalid_argument("expected_prob_on_bad: empty sample set");
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (double y : bad) {
    for (int m = 0; m < noise_draws; ++m) {
      const double p = c.prob(y + sigma * rng.normal(), sigma);
      sum += p;
      sumsq += p * p;
      ++n;
    }
  }
  const double mean = sum / n;
  const double var = std::max(0.0, sumsq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

struct DatasetAnnotation {
  int t_min_index;
  bool crossed;  // false: never crossed tau, index is T (pure filtering limit)
  std::vector<double> prob_curve;
  std::vector<double> se_curve;
};

// Smallest schedule index where the expected classifier probability on the
// bad set exceeds tau.
inline DatasetAnnotation annotate_dataset(const NoiseClassifier& c, const Density1D& q0,
                                          const NoiseSchedule& schedule, double tau) {
  if (!(tau > 0.0 && tau < 0.5)) throw std::invalid_argument("annotate_dataset: tau in (0, 0.5)");
  DatasetAnnotation out{schedule.top_index(), false, {}, {}};
  out.prob_curve.resize(schedule.size());
  out.se_curve.assign(schedule.size(), 0.0);
  parallel_for(schedule.size(), [&](std::size_t t) {
    out.prob_curve[t] = expected_prob_on_bad(c, q0, schedule.sigma(static_cast<int>(t))).value;
  });
  for (int t = 0; t <= schedule.top_index(); ++t) {
    if (out.prob_curve[static_cast<std::size_t>(t)] > tau) {
      out.t_min_index = t;
      out.crossed = true;
      break;
    }
  }
  return out;
}

inline DatasetAnnotation annotate_dataset(const NoiseClassifier& c,
                                          const std::vector<double>& bad,
                                          const NoiseSchedule& schedule, double tau,
                                          std::uint64_t seed, int noise_draws = 256) {
  if (!(tau > 0.0 && tau < 0.5)) throw std::invalid_argument("annotate_dataset: tau in (0, 0.5)");
  DatasetAnnotation out{schedule.top_index(), false, {}, {}};
  out.prob_curve.resize(schedule.size());
  out.se_curve.resize(schedule.size());
  parallel_for(schedule.size(), [&](std::size_t t) {
    const auto ep = expected_prob_on_bad(c, bad, schedule.sigma(static_cast<int>(t)),
                                         Rng::derive(seed, t), noise_draws);
    out.prob_curve[t] = ep.value;
    out.se_curve[t] = ep.standard_error;
  });
  for (int t = 0; t <= schedule.top_index(); ++t) {
    if (out.prob_curve[static_cast<std::size_t>(t)] > tau) {
      out.t_min_index = t;
      out.crossed = true;
      break;
    }
  }
  return out;
}

struct Annotation {
  std::size_t id;
  double value;
  int t_min_index;
  double sigma_min;
  double prob_at_tmin;
  double standard_error;
  std::string method;
};

// Per-sample t_min: smallest level where the expected classifier output on
// the sample's own noising path exceeds tau. Ties resolve to the earlier
// index (conservative: less corrupted-data usage).
inline std::vector<Annotation> annotate_samples(const NoiseClassifier& c,
                                               const std::vector<double>& samples,
                                               const NoiseSchedule& schedule, double tau,
                                               std::uint64_t seed, int noise_draws = 256) {
  if (!(tau > 0.0 && tau < 0.5)) throw std::invalid_argument("annotate_samples: tau in (0, 0.5)");
  const std::string method =
      c.kind() == NoiseClassifier::Kind::bayes_exact ? "bayes-exact" : "learned-logistic";
  std::vector<Annotation> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    Rng rng(Rng::derive(seed, i));
    Annotation a{i, samples[i], schedule.top_index(), schedule.sigma(schedule.top_index()),
                 0.0, 0.0, method};
    for (int t = 0; t <= schedule.top_index(); ++t) {
      const double sigma = schedule.sigma(t);
      double sum = 0.0, sumsq = 0.0;
      for (int m = 0; m < noise_draws; ++m) {
        const double p = c.prob(samples[i] + sigma * rng.normal(), sigma);
        sum += p;
        sumsq += p * p;
      }
      const double mean = sum / noise_draws;
      if (mean > tau) {
        a.t_min_index = t;
        a.sigma_min = sigma;
        a.prob_at_tmin = mean;
        a.standard_error =
            std::sqrt(std::max(0.0, sumsq / noise_draws - mean * mean) / noise_draws);
        break;
      }
    }
    out[i] = a;
  });
  return out;
}

// Crop-level annotation: largest schedule index whose required window size
// k(sigma) still leaves the OOD field indistinguishable (expected crop
// Bayes-classifier probability on OOD windows > tau). nullopt when even the
// smallest window is distinguishable.
inline std::optional<int> annotate_tmax(const GaussianField& target, const GaussianField& ood,
                                        const std::vector<int>& window_map,
                                        const NoiseSchedule& schedule, double tau,
                                        std::uint64_t seed = 77, std::size_t n_draws = 20000) {
  if (window_map.size() != schedule.size())
    throw std::invalid_argument("annotate_tmax: window map size mismatch");
  auto expected_prob_at_k = [&](int k) {
    const Eigen::MatrixXd s1 = target.window_cov(k);
    const Eigen::MatrixXd s2 = ood.window_cov(k);
    if ((s1 - s2).cwiseAbs().maxCoeff() < 1e-14) return 0.5;  // identical marginals
    detail::WindowGaussian g1(s1), g2(s2);
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(k)));
    double sum = 0.0;
    for (std::size_t i = 0; i < n_draws; ++i) {
      const Eigen::VectorXd y = g2.sample(rng);
      const double lp = g1.log_density(y), lq = g2.log_density(y);
      sum += 1.0 / (1.0 + std::exp(lq - lp));
    }
    return sum / static_cast<double>(n_draws);
  };
  std::map<int, double> prob_by_k;  // the classifier depends only on k
  for (int t = schedule.top_index(); t >= 0; --t) {
    const int k = window_map[static_cast<std::size_t>(t)];
    auto it = prob_by_k.find(k);
    if (it == prob_by_k.end()) it = prob_by_k.emplace(k, expected_prob_at_k(k)).first;
    if (it->second > tau) return t;
  }
  return std::nullopt;
}

}  // namespace ambient
