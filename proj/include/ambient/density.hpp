#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ambient/common.hpp"
#include "ambient/quadrature.hpp"
#include "ambient/rng.hpp"

namespace ambient {

enum class DensityKind { gaussian_mixture, piecewise_linear };

struct MixtureComponent {
  double w;
  double mu;
  double var;
};

// Analytic 1-d density: either a Gaussian mixture or a nonnegative
// piecewise-linear density on a bounded interval. Immutable after
// construction; all queries are const and thread-safe.
class Density1D {
 public:
  static Density1D gaussian(double mu, double var) {
    return mixture({{1.0, mu, var}});
  }

  static Density1D mixture(std::vector<MixtureComponent> comps) {
    if (comps.empty()) throw std::invalid_argument("mixture: no components");
    double wsum = 0.0;
    for (const auto& c : comps) {
      if (!(c.var > 0.0)) throw std::invalid_argument("mixture: variance must be positive");
      if (c.w < 0.0) throw std::invalid_argument("mixture: negative weight");
      wsum += c.w;
    }
    if (std::abs(wsum - 1.0) > 1e-12)
      throw std::invalid_argument("mixture: weights sum to " + std::to_string(wsum));
    Density1D d;
    d.kind_ = DensityKind::gaussian_mixture;
    d.comps_ = std::move(comps);
    d.finish_init();
    return d;
  }

  // Knots (x_i, y_i), strictly increasing in x, y >= 0, trapezoid area 1.
  static Density1D piecewise_linear(std::vector<std::array<double, 2>> knots) {
    if (knots.size() < 2) throw std::invalid_argument("piecewise_linear: need >= 2 knots");
    double area = 0.0;
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (knots[i][1] < 0.0) throw std::invalid_argument("piecewise_linear: negative density value");
      if (i > 0) {
        if (!(knots[i][0] > knots[i - 1][0]))
          throw std::invalid_argument("piecewise_linear: knots must be strictly increasing");
        area += 0.5 * (knots[i][1] + knots[i - 1][1]) * (knots[i][0] - knots[i - 1][0]);
      }
    }
    if (std::abs(area - 1.0) > 1e-10)
      throw std::invalid_argument("piecewise_linear: integral is " + std::to_string(area));
    Density1D d;
    d.kind_ = DensityKind::piecewise_linear;
    d.knots_ = std::move(knots);
    d.finish_init();
    return d;
  }

  // Uniform density on [a, b] as a two-knot piecewise-linear.
  static Density1D uniform(double a, double b) {
    const double h = 1.0 / (b - a);
    return piecewise_linear({{a, h}, {b, h}});
  }

  // Symmetric tent on [a, b], peak at the midpoint.
  static Density1D tent(double a, double b) {
    const double h = 2.0 / (b - a);
    return piecewise_linear({{a, 0.0}, {0.5 * (a + b), h}, {b, 0.0}});
  }

  DensityKind kind() const { return kind_; }
  const std::vector<MixtureComponent>& components() const { return comps_; }
  const std::vector<std::array<double, 2>>& knots() const { return knots_; }

  double pdf(double x) const {
    if (kind_ == DensityKind::gaussian_mixture) {
      double v = 0.0;
      for (const auto& c : comps_) v += c.w * norm_pdf(x, c.mu, std::sqrt(c.var));
      return v;
    }
    if (x <= knots_.front()[0] || x >= knots_.back()[0]) {
      // boundary knots keep their value
      if (x == knots_.front()[0]) return knots_.front()[1];
      if (x == knots_.back()[0]) return knots_.back()[1];
      return 0.0;
    }
    const auto it = std::upper_bound(
        knots_.begin(), knots_.end(), x,
        [](double lhs, const std::array<double, 2>& k) { return lhs < k[0]; });
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    const double t = (x - lo[0]) / (hi[0] - lo[0]);
    return lo[1] + t * (hi[1] - lo[1]);
  }

  double cdf(double x) const {
    if (kind_ == DensityKind::gaussian_mixture) {
      double v = 0.0;
      for (const auto& c : comps_) v += c.w * norm_cdf(x, c.mu, std::sqrt(c.var));
      return v;
    }
    if (x <= knots_.front()[0]) return 0.0;
    if (x >= knots_.back()[0]) return 1.0;
    const auto it = std::upper_bound(
        knots_.begin(), knots_.end(), x,
        [](double lhs, const std::array<double, 2>& k) { return lhs < k[0]; });
    const std::size_t seg = static_cast<std::size_t>(it - knots_.begin()) - 1;
    const auto& lo = knots_[seg];
    const auto& hi = knots_[seg + 1];
    const double s = x - lo[0];
    const double slope = (hi[1] - lo[1]) / (hi[0] - lo[0]);
    return knot_cdf_[seg] + lo[1] * s + 0.5 * slope * s * s;
  }

  // Inverse CDF by bisection (exact per-segment quadratic for piecewise).
  double quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("quantile: u must be in (0,1)");
    double lo = support_lo_, hi = support_hi_;
    // widen until bracketed (mixture tails)
    while (cdf(lo) > u) lo -= (hi - lo);
    while (cdf(hi) < u) hi += (hi - lo);
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < u ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  // Interval on which the density is numerically supported (tail mass below
  // ~1e-15 for mixtures; exact knot span for piecewise).
  std::pair<double, double> support() const { return {support_lo_, support_hi_}; }

  // D: width of the central 99.9999%-mass interval (exact span for
  // piecewise-linear, where it coincides with the support).
  double support_diameter() const { return support_diameter_; }

  // Truncation diameter covering 1 - mass_eps of the mass.
  double diameter(double mass_eps) const {
    if (kind_ == DensityKind::piecewise_linear)
      return knots_.back()[0] - knots_.front()[0];
    return quantile(1.0 - 0.5 * mass_eps) - quantile(0.5 * mass_eps);
  }

  double mean() const {
    if (kind_ == DensityKind::gaussian_mixture) {
      double m = 0.0;
      for (const auto& c : comps_) m += c.w * c.mu;
      return m;
    }
    double m = 0.0;
    for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
      const double x0 = knots_[i][0], x1 = knots_[i + 1][0];
      const double y0 = knots_[i][1], y1 = knots_[i + 1][1];
      const double h = x1 - x0;
      // int x * (linear) over the segment
      m += h * (x0 * (2 * y0 + y1) + x1 * (y0 + 2 * y1)) / 6.0;
    }
    return m;
  }

  double variance() const {
    const double m = mean();
    if (kind_ == DensityKind::gaussian_mixture) {
      double v = 0.0;
      for (const auto& c : comps_) v += c.w * (c.var + (c.mu - m) * (c.mu - m));
      return v;
    }
    const double second = integrate_adaptive(
                              [&](double x) { return x * x * pdf(x); }, support_lo_,
                              support_hi_, 1e-12)
                              .value;
    return second - m * m;
  }

  std::vector<double> sample(std::size_t n, Rng& rng) const {
    std::vector<double> out;
    out.reserve(n);
    if (kind_ == DensityKind::gaussian_mixture) {
      std::vector<double> cum(comps_.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < comps_.size(); ++i) cum[i] = (acc += comps_[i].w);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform() * acc;
        const std::size_t j = static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        const auto& c = comps_[std::min(j, comps_.size() - 1)];
        out.push_back(rng.normal(c.mu, std::sqrt(c.var)));
      }
      return out;
    }
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_piecewise(rng.uniform()));
    return out;
  }

  std::vector<double> sample(std::size_t n, std::uint64_t seed) const {
    Rng rng(seed);
    return sample(n, rng);
  }

  // sup |p'|: exact max slope for piecewise; per-component grid search plus
  // golden-section refinement for mixtures.
  double lipschitz_constant() const {
    if (kind_ == DensityKind::piecewise_linear) {
      double m = 0.0;
      for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
        const double slope = (knots_[i + 1][1] - knots_[i][1]) / (knots_[i + 1][0] - knots_[i][0]);
        m = std::max(m, std::abs(slope));
      }
      return m;
    }
    auto dpdf = [&](double x) {
      double v = 0.0;
      for (const auto& c : comps_) {
        const double sd = std::sqrt(c.var);
        v += c.w * norm_pdf(x, c.mu, sd) * (c.mu - x) / c.var;
      }
      return std::abs(v);
    };
    // grid fine enough relative to the narrowest component
    double min_sd = std::numeric_limits<double>::infinity();
    for (const auto& c : comps_) min_sd = std::min(min_sd, std::sqrt(c.var));
    const double step = min_sd / 50.0;
    double best = 0.0, best_x = support_lo_;
    for (double x = support_lo_; x <= support_hi_; x += step) {
      const double v = dpdf(x);
      if (v > best) {
        best = v;
        best_x = x;
      }
    }
    // golden-section refinement around the best grid point
    double a = best_x - step, b = best_x + step;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = dpdf(c), fd = dpdf(d);
    for (int i = 0; i < 80; ++i) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - gr * (b - a);
        fc = dpdf(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + gr * (b - a);
        fd = dpdf(d);
      }
    }
    return std::max(best, std::max(fc, fd));
  }

 private:
  Density1D() = default;

  void finish_init() {
    if (kind_ == DensityKind::gaussian_mixture) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      for (const auto& c : comps_) {
        const double sd = std::sqrt(c.var);
        lo = std::min(lo, c.mu - 8.5 * sd);
        hi = std::max(hi, c.mu + 8.5 * sd);
      }
      support_lo_ = lo;
      support_hi_ = hi;
      support_diameter_ = quantile(1.0 - 5e-7) - quantile(5e-7);
    } else {
      knot_cdf_.assign(knots_.size(), 0.0);
      for (std::size_t i = 1; i < knots_.size(); ++i) {
        knot_cdf_[i] = knot_cdf_[i - 1] + 0.5 * (knots_[i][1] + knots_[i - 1][1]) *
                                              (knots_[i][0] - knots_[i - 1][0]);
      }
      support_lo_ = knots_.front()[0];
      support_hi_ = knots_.back()[0];
      support_diameter_ = support_hi_ - support_lo_;
    }
  }

  double sample_piecewise(double u) const {
    const auto it = std::upper_bound(knot_cdf_.begin(), knot_cdf_.end(), u);
    std::size_t seg = it == knot_cdf_.begin()
                          ? 0
                          : static_cast<std::size_t>(it - knot_cdf_.begin()) - 1;
    seg = std::min(seg, knots_.size() - 2);
    const auto& lo = knots_[seg];
    const auto& hi = knots_[seg + 1];
    const double rem = u - knot_cdf_[seg];
    const double slope = (hi[1] - lo[1]) / (hi[0] - lo[0]);
    // solve y0*s + slope*s^2/2 = rem for s in [0, h]
    double s;
    if (std::abs(slope) < 1e-14 * std::max(1.0, std::abs(lo[1]))) {
      s = lo[1] > 0.0 ? rem / lo[1] : 0.0;
    } else {
      const double disc = lo[1] * lo[1] + 2.0 * slope * rem;
      s = (-lo[1] + std::sqrt(std::max(0.0, disc))) / slope;
    }
    return std::clamp(lo[0] + s, lo[0], hi[0]);
  }

  DensityKind kind_ = DensityKind::gaussian_mixture;
  std::vector<MixtureComponent> comps_;
  std::vector<std::array<double, 2>> knots_;
  std::vector<double> knot_cdf_;
  double support_lo_ = 0.0, support_hi_ = 0.0, support_diameter_ = 0.0;
};

// p * N(0, sigma^2). Mixtures stay mixtures (variance shift). A
// piecewise-linear density becomes a Gaussian-mixture surrogate built by
// panel-wise Gauss-Legendre discretization; panel width << sigma keeps the
// pointwise error far below 1e-9.
inline Density1D convolve(const Density1D& d, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("convolve: sigma must be positive");
  const double s2 = sigma * sigma;
  if (d.kind() == DensityKind::gaussian_mixture) {
    std::vector<MixtureComponent> comps = d.components();
    for (auto& c : comps) c.var += s2;
    return Density1D::mixture(std::move(comps));
  }
  std::vector<double> n12, w12;
  detail::gauss_legendre(12, n12, w12);
  std::vector<MixtureComponent> comps;
  const auto& knots = d.knots();
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double x0 = knots[i][0], x1 = knots[i + 1][0];
    const double len = x1 - x0;
    if (len <= 0.0) continue;
    const int panels =
        std::min(4000, std::max(1, static_cast<int>(std::ceil(len / (0.5 * sigma)))));
    for (int p = 0; p < panels; ++p) {
      const double a = x0 + len * p / panels;
      const double b = x0 + len * (p + 1) / panels;
      const double c = 0.5 * (a + b), h = 0.5 * (b - a);
      for (int j = 0; j < 12; ++j) {
        const double u = c + h * n12[j];
        const double w = w12[j] * h * d.pdf(u);
        if (w > 0.0) comps.push_back({w, u, s2});
      }
    }
  }
  // quadrature integrates the linear segments exactly; normalize rounding
  double wsum = 0.0;
  for (const auto& c : comps) wsum += c.w;
  for (auto& c : comps) c.w /= wsum;
  return Density1D::mixture(std::move(comps));
}

// 0.5 * int |a - b| by adaptive quadrature over the union of supports.
inline double tv_distance(const Density1D& a, const Density1D& b, double abs_tol = 1e-8) {
  const auto [alo, ahi] = a.support();
  const auto [blo, bhi] = b.support();
  const double lo = std::min(alo, blo), hi = std::max(ahi, bhi);
  const auto result = integrate_adaptive(
      [&](double x) { return std::abs(a.pdf(x) - b.pdf(x)); }, lo, hi, 2.0 * abs_tol, 40000,
      32);
  return std::clamp(0.5 * result.value, 0.0, 1.0);
}

// Exact posterior mean E[X0 | X0 + sigma*Z = x] for a Gaussian mixture.
inline double posterior_mean(const Density1D& d, double x, double sigma) {
  if (d.kind() != DensityKind::gaussian_mixture)
    throw std::invalid_argument("posterior_mean: gaussian mixture required");
  const double s2 = sigma * sigma;
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  std::vector<double> means;
  logs.reserve(d.components().size());
  for (const auto& c : d.components()) {
    const double tot = c.var + s2;
    const double lw = std::log(c.w) + log_norm_pdf(x, c.mu, std::sqrt(tot));
    logs.push_back(lw);
    means.push_back((c.var * x + s2 * c.mu) / tot);
    max_log = std::max(max_log, lw);
  }
  double wsum = 0.0, msum = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const double w = std::exp(logs[i] - max_log);
    wsum += w;
    msum += w * means[i];
  }
  return msum / wsum;
}

struct MixtureSpec {
  Density1D clean;
  Density1D corrupt;
  std::size_t n1;
  std::size_t n2;

  // p~ = n1/(n1+n2) p0 + n2/(n1+n2) q0 with exact rational weights.
  Density1D materialize() const {
    if (n1 + n2 == 0) throw std::invalid_argument("materialize: empty mixture");
    const double w1 = static_cast<double>(n1) / static_cast<double>(n1 + n2);
    const double w2 = static_cast<double>(n2) / static_cast<double>(n1 + n2);
    if (clean.kind() == DensityKind::gaussian_mixture &&
        corrupt.kind() == DensityKind::gaussian_mixture) {
      std::vector<MixtureComponent> comps;
      for (const auto& c : clean.components()) comps.push_back({w1 * c.w, c.mu, c.var});
      for (const auto& c : corrupt.components()) comps.push_back({w2 * c.w, c.mu, c.var});
      return Density1D::mixture(std::move(comps));
    }
    if (clean.kind() == DensityKind::piecewise_linear &&
        corrupt.kind() == DensityKind::piecewise_linear) {
      std::vector<double> xs;
      for (const auto& k : clean.knots()) xs.push_back(k[0]);
      for (const auto& k : corrupt.knots()) xs.push_back(k[0]);
      std::sort(xs.begin(), xs.end());
      xs.erase(std::unique(xs.begin(), xs.end(),
                           [](double a, double b) { return std::abs(a - b) < 1e-15; }),
               xs.end());
      std::vector<std::array<double, 2>> knots;
      for (double x : xs) knots.push_back({x, w1 * clean.pdf(x) + w2 * corrupt.pdf(x)});
      return Density1D::piecewise_linear(std::move(knots));
    }
    throw std::invalid_argument("materialize: mixed density kinds are not supported");
  }
};

inline nlohmann::json to_json(const Density1D& d) {
  nlohmann::json j;
  if (d.kind() == DensityKind::gaussian_mixture) {
    j["kind"] = "gaussian-mixture";
    auto& comps = j["components"] = nlohmann::json::array();
    for (const auto& c : d.components())
      comps.push_back({{"w", c.w}, {"mu", c.mu}, {"var", c.var}});
  } else {
    j["kind"] = "piecewise-linear";
    auto& knots = j["knots"] = nlohmann::json::array();
    for (const auto& k : d.knots()) knots.push_back({k[0], k[1]});
  }
  return j;
}

inline Density1D density_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian-mixture") {
    std::vector<MixtureComponent> comps;
    for (const auto& c : j.at("components"))
      comps.push_back({c.at("w").get<double>(), c.at("mu").get<double>(),
                       c.at("var").get<double>()});
    return Density1D::mixture(std::move(comps));
  }
  if (kind == "piecewise-linear") {
    std::vector<std::array<double, 2>> knots;
    for (const auto& k : j.at("knots"))
      knots.push_back({k.at(0).get<double>(), k.at(1).get<double>()});
    return Density1D::piecewise_linear(std::move(knots));
  }
  throw std::invalid_argument("density_from_json: unknown kind '" + kind + "'");
}

}  // namespace ambient
