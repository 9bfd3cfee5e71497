#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ambient/common.hpp"
#include "ambient/rng.hpp"
#include "ambient/schedule.hpp"

namespace ambient {

// Stationary zero-mean Gaussian process on a ring of L sites. The circulant
// covariance makes every site statistically identical, so one windowed solve
// covers all positions.
class GaussianField {
 public:
  explicit GaussianField(std::vector<double> covariance) : cov_(std::move(covariance)) {
    const int L = static_cast<int>(cov_.size());
    if (L < 2) throw std::invalid_argument("GaussianField: need length >= 2");
    if (!(cov_[0] > 0.0)) throw std::invalid_argument("GaussianField: C(0) must be positive");
    // positive semidefiniteness <=> nonnegative discrete spectrum
    for (int j = 0; j < L; ++j) {
      double s = 0.0;
      for (int d = 0; d < L; ++d) s += cov_[d] * std::cos(2.0 * M_PI * j * d / L);
      if (s < -1e-10)
        throw std::invalid_argument("GaussianField: covariance spectrum is negative (" +
                                    std::to_string(s) + " at frequency " + std::to_string(j) +
                                    ")");
    }
  }

  static GaussianField white(int length, double variance = 1.0) {
    std::vector<double> cov(length, 0.0);
    cov[0] = variance;
    return GaussianField(std::move(cov));
  }

  // C(d) = variance * rho^min(d, L-d): the periodization of an exponential
  // kernel, so the spectrum stays nonnegative.
  static GaussianField ar1(int length, double rho, double variance = 1.0) {
    std::vector<double> cov(length);
    for (int d = 0; d < length; ++d)
      cov[d] = variance * std::pow(rho, std::min(d, length - d));
    return GaussianField(std::move(cov));
  }

  int length() const { return static_cast<int>(cov_.size()); }
  const std::vector<double>& covariance() const { return cov_; }

  double cov(int lag) const {
    const int L = length();
    int d = ((lag % L) + L) % L;
    return cov_[d];
  }

  // k x k covariance of a contiguous window.
  Eigen::MatrixXd window_cov(int k) const {
    if (k < 1 || k > length()) throw std::invalid_argument("window_cov: bad window size");
    Eigen::MatrixXd sigma(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) sigma(i, j) = cov(i - j);
    return sigma;
  }

  // Covariance between the window center and each window entry.
  Eigen::VectorXd center_cross_cov(int k) const {
    Eigen::VectorXd c(k);
    const int center = k / 2;
    for (int j = 0; j < k; ++j) c(j) = cov(center - j);
    return c;
  }

 private:
  std::vector<double> cov_;
};

struct WindowDenoiser {
  int k;
  Eigen::VectorXd weights;
  double residual_loss;
};

// Optimal restricted-receptive-field linear denoiser: solves
// (Sigma_k + sigma^2 I) w = c_k; residual = C(0) - c_k' w.
inline WindowDenoiser optimal_window_denoiser(const GaussianField& f, double sigma, int k) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("optimal_window_denoiser: sigma must be positive");
  if (k < 1 || k > f.length())
    throw std::invalid_argument("optimal_window_denoiser: window must satisfy 1 <= k <= L");
  Eigen::MatrixXd a = f.window_cov(k);
  a.diagonal().array() += sigma * sigma;
  const Eigen::VectorXd c = f.center_cross_cov(k);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw numeric_failure("optimal_window_denoiser: window system is not PSD", 0.0);
  const Eigen::VectorXd w = ldlt.solve(c);
  return {k, w, f.cov(0) - c.dot(w)};
}

struct ContextCurve {
  std::vector<std::pair<int, double>> points;  // (k, residual_loss)
  double full_context_loss;                    // k = L
  int plateau_k;  // smallest k within eps (absolute) of the full-context loss
};

inline ContextCurve context_curve(const GaussianField& f, double sigma,
                                  const std::vector<int>& k_grid, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("context_curve: eps must be positive");
  ContextCurve curve;
  curve.full_context_loss = optimal_window_denoiser(f, sigma, f.length()).residual_loss;
  curve.plateau_k = f.length();
  for (int k : k_grid) {
    const double loss = optimal_window_denoiser(f, sigma, k).residual_loss;
    curve.points.emplace_back(k, loss);
    if (curve.plateau_k == f.length() && loss <= curve.full_context_loss + eps)
      curve.plateau_k = k;
  }
  return curve;
}

inline std::vector<int> default_odd_k_grid(int length) {
  std::vector<int> grid;
  for (int k = 1; k <= length; k += 2) grid.push_back(k);
  return grid;
}

struct CropDistance {
  double bhattacharyya;
  double tv_mc;
  double tv_se;
};

namespace detail {

struct WindowGaussian {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det;
  int k;

  explicit WindowGaussian(const Eigen::MatrixXd& sigma) : llt(sigma), k(int(sigma.rows())) {
    if (llt.info() != Eigen::Success)
      throw numeric_failure("crop_marginal_distance: singular window covariance", 0.0);
    log_det = 0.0;
    for (int i = 0; i < k; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  }

  double log_density(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd y = llt.matrixL().solve(x);
    return -0.5 * (y.squaredNorm() + log_det + k * std::log(2.0 * M_PI));
  }

  Eigen::VectorXd sample(Rng& rng) const {
    Eigen::VectorXd z(k);
    for (int i = 0; i < k; ++i) z(i) = rng.normal();
    return llt.matrixL() * z;
  }
};

}  // namespace detail

// Exact Bhattacharyya distance between the k-window marginals, plus a Monte
// Carlo TV estimate via the exact likelihood-ratio test.
inline CropDistance crop_marginal_distance(const GaussianField& f1, const GaussianField& f2,
                                           int k, std::uint64_t seed = 2024,
                                           std::size_t n_draws = 100000) {
  if (k > std::min(f1.length(), f2.length()))
    throw std::invalid_argument("crop_marginal_distance: window exceeds field length");
  const Eigen::MatrixXd s1 = f1.window_cov(k);
  const Eigen::MatrixXd s2 = f2.window_cov(k);

  auto log_det = [](const Eigen::MatrixXd& m) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
      throw numeric_failure("crop_marginal_distance: singular window covariance", 0.0);
    double ld = 0.0;
    for (int i = 0; i < m.rows(); ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
    return ld;
  };
  const double bc =
      0.5 * (log_det(0.5 * (s1 + s2)) - 0.5 * (log_det(s1) + log_det(s2)));

  // TV = P1(p1 > p2) - P2(p1 > p2), estimated from both marginals
  detail::WindowGaussian g1(s1), g2(s2);
  Rng rng(seed);
  std::size_t hits1 = 0, hits2 = 0;
  for (std::size_t i = 0; i < n_draws; ++i) {
    const Eigen::VectorXd x1 = g1.sample(rng);
    if (g1.log_density(x1) > g2.log_density(x1)) ++hits1;
    const Eigen::VectorXd x2 = g2.sample(rng);
    if (g1.log_density(x2) > g2.log_density(x2)) ++hits2;
  }
  const double p1 = static_cast<double>(hits1) / n_draws;
  const double p2 = static_cast<double>(hits2) / n_draws;
  const double tv = std::max(0.0, p1 - p2);
  const double se = std::sqrt((p1 * (1 - p1) + p2 * (1 - p2)) / n_draws);
  return {std::max(0.0, bc), tv, se};
}

// For each schedule level, plateau_k(sigma, eps). Nondecreasing in sigma on
// nonnegative-covariance fields; checked and reported by callers.
inline std::vector<int> window_to_sigma_map(const GaussianField& f,
                                            const NoiseSchedule& schedule, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("window_to_sigma_map: eps must be positive");
  const auto grid = default_odd_k_grid(f.length());
  std::vector<int> out(schedule.size(), 1);
  parallel_for(schedule.size(), [&](std::size_t i) {
    out[i] = context_curve(f, schedule.sigma(static_cast<int>(i)), grid, eps).plateau_k;
  });
  return out;
}

inline nlohmann::json to_json(const GaussianField& f) {
  return {{"covariance", f.covariance()}};
}

inline GaussianField field_from_json(const nlohmann::json& j) {
  return GaussianField(j.at("covariance").get<std::vector<double>>());
}

}  // namespace ambient
