#pragma once

#include <cmath>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ambient {

// Raised when an adaptive numerical routine cannot reach its target
// accuracy; carries the error estimate it did achieve.
class numeric_failure : public std::runtime_error {
 public:
  numeric_failure(const std::string& what, double achieved)
      : std::runtime_error(what), achieved_error(achieved) {}
  double achieved_error;
};

class empty_model_error : public std::runtime_error {
 public:
  explicit empty_model_error(const std::string& what) : std::runtime_error(what) {}
};

// A caller fed a sample to a noise level outside its usable set.
// This is a scheduler bug, not a data problem.
class contract_violation : public std::logic_error {
 public:
  explicit contract_violation(const std::string& what) : std::logic_error(what) {}
};

class training_diverged : public std::runtime_error {
 public:
  training_diverged(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), loss_trace(std::move(trace)) {}
  std::vector<double> loss_trace;
};

class generation_failure : public std::runtime_error {
 public:
  generation_failure(const std::string& what, int step)
      : std::runtime_error(what), step_index(step) {}
  int step_index;
};

inline constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
inline constexpr double kSqrt2 = 1.4142135623730950488016887;

inline double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double norm_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return kInvSqrt2Pi / sigma * std::exp(-0.5 * z * z);
}

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

inline double norm_cdf(double x, double mu, double sigma) {
  return norm_cdf((x - mu) / sigma);
}

inline double log_norm_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) + std::log(kInvSqrt2Pi);
}

// Runs fn(i) for i in [0, n) across hardware threads. Work is assigned by
// index, so results keyed by i are deterministic regardless of thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw < 2 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  unsigned workers = static_cast<unsigned>(std::min<std::size_t>(hw, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ambient
