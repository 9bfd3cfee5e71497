#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "ambient/common.hpp"
#include "ambient/density.hpp"

namespace ambient {

// Empirical diffusion model over a finite sample: a Gaussian KDE with one
// atom per training point. Atoms observed at noise level s contribute with
// effective bandwidth sqrt(sigma^2 - s^2), the unique mixture consistent
// with sampling x_t | x_s.
class KdeModel {
 public:
  KdeModel(std::vector<double> atoms, std::vector<double> sigma_min)
      : atoms_(std::move(atoms)), sigma_min_(std::move(sigma_min)) {
    if (atoms_.empty()) throw std::invalid_argument("KdeModel: atoms must be nonempty");
    if (sigma_min_.size() != atoms_.size())
      throw std::invalid_argument("KdeModel: sigma_min length mismatch");
    for (double s : sigma_min_)
      if (s < 0.0) throw std::invalid_argument("KdeModel: sigma_min entries must be >= 0");
    uniform_sigma_min_ =
        std::all_of(sigma_min_.begin(), sigma_min_.end(),
                    [&](double s) { return s == sigma_min_.front(); });
    if (uniform_sigma_min_) {
      sorted_atoms_ = atoms_;
      std::sort(sorted_atoms_.begin(), sorted_atoms_.end());
    }
  }

  static KdeModel from_samples(std::vector<double> samples) {
    std::vector<double> zeros(samples.size(), 0.0);
    return KdeModel(std::move(samples), std::move(zeros));
  }

  const std::vector<double>& atoms() const { return atoms_; }
  const std::vector<double>& sigma_min() const { return sigma_min_; }

  std::size_t eligible_count(double sigma) const {
    std::size_t n = 0;
    for (double s : sigma_min_)
      if (s < sigma) ++n;
    return n;
  }

  // KDE density at x with bandwidth sigma. Atoms with s >= sigma are
  // excluded; *excluded reports how many.
  double density_at(double x, double sigma, std::size_t* excluded = nullptr) const {
    if (!(sigma > 0.0)) throw std::invalid_argument("density_at: sigma must be positive");
    if (uniform_sigma_min_) {
      const double s = sigma_min_.front();
      if (excluded) *excluded = s >= sigma ? atoms_.size() : 0;
      if (s >= sigma) throw empty_model_error("density_at: all atoms ineligible at this sigma");
      const double eff = std::sqrt(sigma * sigma - s * s);
      return fast_uniform_density(x, eff);
    }
    double sum = 0.0;
    std::size_t n_eligible = 0, n_excluded = 0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      const double s = sigma_min_[i];
      if (s >= sigma) {
        ++n_excluded;
        continue;
      }
      ++n_eligible;
      const double eff = std::sqrt(sigma * sigma - s * s);
      sum += norm_pdf(x, atoms_[i], eff);
    }
    if (excluded) *excluded = n_excluded;
    if (n_eligible == 0)
      throw empty_model_error("density_at: all atoms ineligible at this sigma");
    return sum / static_cast<double>(n_eligible);
  }

  // Softmax-weighted atom average via a log-sum-exp reduction. For annotated
  // atoms the target is the atom itself (an x_{t_min} value), so the return
  // is a posterior mean over the observed targets.
  double posterior_mean(double x, double sigma) const {
    if (!(sigma > 0.0)) throw std::invalid_argument("posterior_mean: sigma must be positive");
    double max_log = -std::numeric_limits<double>::infinity();
    std::vector<double> logs(atoms_.size(), -std::numeric_limits<double>::infinity());
    std::size_t n_eligible = 0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      const double s = sigma_min_[i];
      if (s >= sigma) continue;
      ++n_eligible;
      const double eff = std::sqrt(sigma * sigma - s * s);
      logs[i] = log_norm_pdf(x, atoms_[i], eff);
      max_log = std::max(max_log, logs[i]);
    }
    if (n_eligible == 0)
      throw empty_model_error("posterior_mean: all atoms ineligible at this sigma");
    double wsum = 0.0, msum = 0.0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      if (logs[i] == -std::numeric_limits<double>::infinity()) continue;
      const double w = std::exp(logs[i] - max_log);
      wsum += w;
      msum += w * atoms_[i];
    }
    return msum / wsum;
  }

  // The smoothed model as an explicit mixture (one component per eligible atom).
  Density1D to_density(double sigma) const {
    std::vector<MixtureComponent> comps;
    std::size_t n_eligible = eligible_count(sigma);
    if (n_eligible == 0)
      throw empty_model_error("to_density: all atoms ineligible at this sigma");
    const double w = 1.0 / static_cast<double>(n_eligible);
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      const double s = sigma_min_[i];
      if (s >= sigma) continue;
      comps.push_back({w, atoms_[i], sigma * sigma - s * s});
    }
    return Density1D::mixture(std::move(comps));
  }

 private:
  // Homogeneous-bandwidth path: sorted atoms, kernel truncated at 9 effective
  // standard deviations (tail below 1e-17).
  double fast_uniform_density(double x, double eff) const {
    const double cut = 9.0 * eff;
    const auto lo = std::lower_bound(sorted_atoms_.begin(), sorted_atoms_.end(), x - cut);
    const auto hi = std::upper_bound(lo, sorted_atoms_.end(), x + cut);
    double sum = 0.0;
    const double inv = 1.0 / eff;
    for (auto it = lo; it != hi; ++it) {
      const double z = (x - *it) * inv;
      sum += std::exp(-0.5 * z * z);
    }
    return sum * kInvSqrt2Pi * inv / static_cast<double>(sorted_atoms_.size());
  }

  std::vector<double> atoms_;
  std::vector<double> sigma_min_;
  std::vector<double> sorted_atoms_;
  bool uniform_sigma_min_ = false;
};

// TV between the smoothed KDE and an analytic reference on a shared grid of
// supports, using the fast KDE evaluation path.
inline double tv_to_analytic(const KdeModel& m, const Density1D& reference, double sigma,
                             double abs_tol = 1e-8) {
  const auto [rlo, rhi] = reference.support();
  double alo = m.atoms().front(), ahi = m.atoms().front();
  for (double a : m.atoms()) {
    alo = std::min(alo, a);
    ahi = std::max(ahi, a);
  }
  const double lo = std::min(rlo, alo - 8.5 * sigma);
  const double hi = std::max(rhi, ahi + 8.5 * sigma);
  const auto result = integrate_adaptive(
      [&](double x) { return std::abs(m.density_at(x, sigma) - reference.pdf(x)); }, lo,
      hi, 2.0 * abs_tol, 40000, 32);
  return std::clamp(0.5 * result.value, 0.0, 1.0);
}

struct TvErrorStats {
  double mean;
  double p95;
  std::vector<double> per_trial;
};

// d_TV(p_sigma, p-hat_sigma) over repeated n-sample draws; trials run in
// parallel with per-trial seeds derived from a splittable counter.
inline TvErrorStats empirical_tv_error(const Density1D& d, std::size_t n, double sigma,
                                       std::size_t trials, std::uint64_t seed,
                                       double abs_tol = 1e-8) {
  if (n < 1 || trials < 1)
    throw std::invalid_argument("empirical_tv_error: n and trials must be >= 1");
  const Density1D smoothed = convolve(d, sigma);
  std::vector<double> errs(trials, 0.0);
  parallel_for(trials, [&](std::size_t t) {
    Rng rng(Rng::derive(seed, t));
    KdeModel model = KdeModel::from_samples(d.sample(n, rng));
    errs[t] = tv_to_analytic(model, smoothed, sigma, abs_tol);
  });
  std::vector<double> sorted = errs;
  std::sort(sorted.begin(), sorted.end());
  const double mean = std::accumulate(errs.begin(), errs.end(), 0.0) / trials;
  const std::size_t idx =
      std::min(trials - 1, static_cast<std::size_t>(std::ceil(0.95 * trials)) - 1);
  return {mean, sorted[idx], errs};
}

inline nlohmann::json to_json(const KdeModel& m) {
  return {{"atoms", m.atoms()}, {"sigma_min", m.sigma_min()}};
}

inline KdeModel kde_from_json(const nlohmann::json& j) {
  return KdeModel(j.at("atoms").get<std::vector<double>>(),
                  j.at("sigma_min").get<std::vector<double>>());
}

}  // namespace ambient
