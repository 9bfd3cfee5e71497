#include <catch2/catch_amalgamated.hpp>

#include "ambient/kde.hpp"
#include "ambient/rng.hpp"
#include "oracle.hpp"

using namespace ambient;

TEST_CASE("kde density examples") {
  KdeModel single({0.0}, {0.0});
  CHECK(single.density_at(0.0, 1.0) == Catch::Approx(1.0 / std::sqrt(2 * M_PI)).margin(1e-12));

  KdeModel two({-1.0, 1.0}, {0.0, 0.0});
  CHECK(two.density_at(0.0, 1.0) == Catch::Approx(oracle::phi(1.0)).margin(1e-12));

  KdeModel annotated({0.0}, {1.0});
  CHECK(annotated.density_at(0.0, std::sqrt(2.0)) ==
        Catch::Approx(oracle::phi(0.0)).margin(1e-12));
}

TEST_CASE("kde density matches a direct mixture sum") {
  Rng rng(31);
  std::vector<double> atoms;
  for (int i = 0; i < 200; ++i) atoms.push_back(rng.normal());
  KdeModel m(atoms, std::vector<double>(atoms.size(), 0.0));  // uniform fast path
  const double sigma = 0.3;
  for (double x : {-2.5, -0.1, 0.0, 1.7}) {
    double direct = 0.0;
    for (double a : atoms) direct += oracle::phi((x - a) / sigma) / sigma;
    direct /= atoms.size();
    CHECK(m.density_at(x, sigma) == Catch::Approx(direct).margin(1e-12));
  }
}

TEST_CASE("eligibility and exclusion reporting") {
  KdeModel m({0.0, 1.0, 2.0}, {0.0, 0.5, 2.0});
  std::size_t excluded = 0;
  m.density_at(0.0, 1.0, &excluded);
  CHECK(excluded == 1);
  CHECK(m.eligible_count(1.0) == 2);
  CHECK(m.eligible_count(0.1) == 1);
  CHECK_THROWS_AS(m.density_at(0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(m.density_at(0.0, -1.0), std::invalid_argument);
  KdeModel all_high({0.0}, {1.0});
  CHECK_THROWS_AS(all_high.density_at(0.0, 0.5), empty_model_error);
  CHECK_THROWS_AS(all_high.posterior_mean(0.0, 0.5), empty_model_error);
  CHECK_THROWS_AS(all_high.to_density(0.5), empty_model_error);
}

TEST_CASE("kde invariants are enforced") {
  CHECK_THROWS_AS(KdeModel({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(KdeModel({0.0}, {0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(KdeModel({0.0}, {-0.1}), std::invalid_argument);
}

TEST_CASE("posterior mean examples") {
  KdeModel two({-1.0, 1.0}, {0.0, 0.0});
  CHECK(two.posterior_mean(0.0, 1.0) == Catch::Approx(0.0).margin(1e-15));

  KdeModel pair({0.0, 2.0}, {0.0, 0.0});
  // softmax weights w2/w0 = exp(-1); mean = 2 e^{-1} / (1 + e^{-1}) = 2/(e+1)
  CHECK(pair.posterior_mean(0.5, 1.0) ==
        Catch::Approx(2.0 / (std::exp(1.0) + 1.0)).margin(1e-12));

  KdeModel one({3.7}, {0.0});
  for (double x : {-100.0, 0.0, 55.0})
    CHECK(one.posterior_mean(x, 2.0) == Catch::Approx(3.7).margin(1e-15));
}

TEST_CASE("posterior mean far from atoms stays finite (log domain)") {
  KdeModel m({0.0, 0.1}, {0.0, 0.0});
  const double v = m.posterior_mean(500.0, 1.0);
  CHECK(std::isfinite(v));
  CHECK(v == Catch::Approx(0.1).margin(1e-9));  // nearest atom dominates
}

TEST_CASE("tweedie identity for the kde") {
  Rng rng(77);
  std::vector<double> atoms;
  for (int i = 0; i < 50; ++i) atoms.push_back(2.0 * rng.normal());
  KdeModel m(atoms, std::vector<double>(atoms.size(), 0.0));
  const double sigma = 0.7;
  for (double x : {-1.2, 0.4, 2.0}) {
    const double score =
        oracle::fd([&](double t) { return std::log(m.density_at(t, sigma)); }, x);
    CHECK(m.posterior_mean(x, sigma) ==
          Catch::Approx(x + sigma * sigma * score).margin(1e-6));
  }
}

TEST_CASE("kde integrates to one and respects the lipschitz bound") {
  Rng rng(12);
  std::vector<double> atoms;
  for (int i = 0; i < 100; ++i) atoms.push_back(rng.normal());
  KdeModel m(atoms, std::vector<double>(atoms.size(), 0.0));
  const double sigma = 0.4;
  const auto mass = integrate_adaptive([&](double x) { return m.density_at(x, sigma); },
                                       -12.0, 12.0, 1e-9);
  CHECK(mass.value == Catch::Approx(1.0).margin(1e-8));

  const double bound = 1.0 / (sigma * sigma * std::sqrt(2.0 * M_PI * std::exp(1.0)));
  double max_slope = 0.0;
  for (double x = -4.0; x <= 4.0; x += 0.01)
    max_slope = std::max(max_slope,
                         std::abs(oracle::fd([&](double t) { return m.density_at(t, sigma); }, x)));
  CHECK(max_slope <= bound + 1e-6);
}

TEST_CASE("to_density agrees with density_at") {
  KdeModel m({0.0, 1.0, 5.0}, {0.0, 0.3, 0.0});
  const double sigma = 0.8;
  auto d = m.to_density(sigma);
  for (double x : {-1.0, 0.7, 4.4}) CHECK(d.pdf(x) == Catch::Approx(m.density_at(x, sigma)).margin(1e-12));
}

TEST_CASE("empirical tv error statistics") {
  auto g = Density1D::gaussian(0.0, 1.0);
  // reproducible per seed
  auto a = empirical_tv_error(g, 64, 1.0, 8, 555, 1e-6);
  auto b = empirical_tv_error(g, 64, 1.0, 8, 555, 1e-6);
  CHECK(a.per_trial == b.per_trial);
  CHECK(a.p95 >= a.mean * 0.5);

  // single-atom case: TV between N(0,101) and N(W,100), W ~ N(0,1)
  auto c = empirical_tv_error(g, 1, 10.0, 4, 2024, 1e-6);
  for (double e : c.per_trial) {
    CHECK(e > 0.0);
    CHECK(e < 0.1);
  }

  // error shrinks with n on the same seed
  auto small = empirical_tv_error(g, 64, 1.0, 8, 99, 1e-6);
  auto large = empirical_tv_error(g, 4096, 1.0, 8, 99, 1e-6);
  CHECK(large.mean < small.mean);

  // degenerate density: atoms coincide with the distribution
  auto spike = Density1D::gaussian(0.0, 1e-12);
  auto z = empirical_tv_error(spike, 16, 1.0, 4, 31, 1e-6);
  CHECK(z.mean < 1e-3);
}

TEST_CASE("kde json round trip") {
  KdeModel m({0.5, -1.0}, {0.0, 0.25});
  auto back = kde_from_json(to_json(m));
  CHECK(back.atoms() == m.atoms());
  CHECK(back.sigma_min() == m.sigma_min());
}
