#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "ambient/common.hpp"

namespace ambient {

namespace detail {

// Gauss-Legendre nodes/weights on [-1, 1], computed once by Newton iteration
// on the Legendre polynomial.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

struct GlPair {
  std::vector<double> n7, w7, n15, w15;
  GlPair() {
    gauss_legendre(7, n7, w7);
    gauss_legendre(15, n15, w15);
  }
};

inline const GlPair& gl_pair() {
  static const GlPair p;
  return p;
}

}  // namespace detail

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t segments = 0;
};

// Adaptive integration with an embedded GL7/GL15 pair. Splits the segment
// with the largest error estimate until the total is below abs_tol.
template <class F>
QuadratureResult integrate_adaptive(F&& f, double a, double b, double abs_tol,
                                    std::size_t max_segments = 40000,
                                    int initial_panels = 16) {
  struct Segment {
    double a, b, value, error;
    bool operator<(const Segment& o) const { return error < o.error; }
  };
  const auto& gl = detail::gl_pair();
  auto eval = [&](double lo, double hi) {
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    double s15 = 0.0, s7 = 0.0;
    for (int i = 0; i < 15; ++i) s15 += gl.w15[i] * f(c + h * gl.n15[i]);
    for (int i = 0; i < 7; ++i) s7 += gl.w7[i] * f(c + h * gl.n7[i]);
    s15 *= h;
    s7 *= h;
    return Segment{lo, hi, s15, std::abs(s15 - s7)};
  };

  std::priority_queue<Segment> queue;
  double total = 0.0, total_err = 0.0;
  for (int p = 0; p < initial_panels; ++p) {
    const double lo = a + (b - a) * p / initial_panels;
    const double hi = a + (b - a) * (p + 1) / initial_panels;
    Segment s = eval(lo, hi);
    total += s.value;
    total_err += s.error;
    queue.push(s);
  }
  while (total_err > abs_tol && queue.size() < max_segments) {
    Segment worst = queue.top();
    queue.pop();
    total -= worst.value;
    total_err -= worst.error;
    const double mid = 0.5 * (worst.a + worst.b);
    for (Segment s : {eval(worst.a, mid), eval(mid, worst.b)}) {
      total += s.value;
      total_err += s.error;
      queue.push(s);
    }
  }
  if (total_err > abs_tol) {
    throw numeric_failure("adaptive quadrature did not converge (achieved " +
                              std::to_string(total_err) + ", requested " +
                              std::to_string(abs_tol) + ")",
                          total_err);
  }
  return {total, total_err, queue.size()};
}

}  // namespace ambient
