#include <catch2/catch_amalgamated.hpp>

#include "ambient/verify.hpp"
#include "oracle.hpp"

using namespace ambient;

TEST_CASE("contraction bound on identical densities") {
  auto g = Density1D::gaussian(0.0, 1.0);
  auto r = check_contraction(g, g, {0.5, 2.0});
  CHECK(r.pass);
  for (const auto& p : r.points) CHECK(p.measured == Catch::Approx(0.0).margin(1e-7));
}

TEST_CASE("contraction bound on near point masses matches the closed form") {
  // spikes at 0 and 1: base TV ~ 1, diameter ~ 1; after sigma = 1 smoothing the
  // TV is the mean-shift value 2 Phi(1/2) - 1 and the bound is ~ 1/2
  auto p = Density1D::gaussian(0.0, 1e-8);
  auto q = Density1D::gaussian(1.0, 1e-8);
  auto r = check_contraction(p, q, {1.0});
  CHECK(r.pass);
  REQUIRE(r.points.size() == 1);
  CHECK(r.points[0].measured ==
        Catch::Approx(oracle::gaussian_shift_tv(0.0, 1.0, 1.0)).margin(1e-4));
  CHECK(r.points[0].bound == Catch::Approx(0.5).margin(1e-3));
  CHECK(double(r.extra["base_tv"]) == Catch::Approx(1.0).margin(1e-6));

  CHECK_THROWS_AS(check_contraction(p, q, {}), std::invalid_argument);
  CHECK_THROWS_AS(check_contraction(p, q, {-1.0}), std::invalid_argument);
}

TEST_CASE("contraction sweep over random mixture pairs") {
  auto r = check_contraction_sweep(20, 4242);
  CHECK(r.pass);
  CHECK(r.points.size() == 20);
  CHECK(int(r.extra["passed"]) == 20);
}

TEST_CASE("rate bound formula and guards") {
  // n = 100, sigma = 1, lambda <= 1, delta = 0.05:
  // 1/100 + 1/100 + sqrt((log 100 + log 40)/100)
  const double expect =
      0.02 + std::sqrt((std::log(100.0) + std::log(40.0)) / 100.0);
  CHECK(kde_rate_bound(100, 1.0, 0.5, 0.05) == Catch::Approx(expect).margin(1e-12));
  auto g = Density1D::gaussian(0.0, 1.0);
  CHECK_THROWS_AS(check_kde_rate(g, {}, {1.0}, 100, 0.05, 1), std::invalid_argument);
  CHECK_THROWS_AS(check_kde_rate(g, {64}, {1.0}, 50, 0.05, 1), std::invalid_argument);
}

TEST_CASE("degenerate density skips the slope check with a reason") {
  auto spike = Density1D::gaussian(0.0, 1e-12);
  auto r = check_kde_rate(spike, {16, 64, 256}, {1.0}, 100, 0.05, 3);
  CHECK(r.pass);
  CHECK_FALSE(r.loglog_slope.has_value());
  CHECK(r.slope_note.find("skipped") != std::string::npos);
}

TEST_CASE("small rate study shows the expected decay") {
  auto tent = Density1D::piecewise_linear({{0.0, 0.0}, {0.5, 2.0}, {1.0, 0.0}});
  auto r = check_kde_rate(tent, {32, 128, 512}, {1.0}, 100, 0.05, 11);
  REQUIRE(r.cells.size() == 3);
  // mean error decreases in n and stays under fitted_constant * bound
  CHECK(r.cells[0].mean_error > r.cells[1].mean_error);
  CHECK(r.cells[1].mean_error > r.cells[2].mean_error);
  CHECK(r.fitted_constant > 0.0);
  for (const auto& c : r.cells)
    CHECK(c.quantile_error <= r.fitted_constant * c.bound * (1.0 + 1e-12));
  REQUIRE(r.loglog_slope.has_value());
  CHECK(*r.loglog_slope < -0.2);
  CHECK(*r.loglog_slope > -0.8);
}

TEST_CASE("larger sigma gives smaller error on paired seeds") {
  auto g = Density1D::gaussian(0.0, 1.0);
  auto lo = empirical_tv_error(g, 128, 1.0, 100, 77, 1e-6);
  auto hi = empirical_tv_error(g, 128, 2.0, 100, 77, 1e-6);
  CHECK(hi.mean < lo.mean);
}

TEST_CASE("algorithm comparison with no extra data never crosses") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto r = compare_algorithms(p0, p0, 32, 0, {0.25, 1.0, 4.0}, 30, 5);
  CHECK_FALSE(r.sigma_star.has_value());
  for (const auto& pt : r.curve) {
    CHECK(pt.alg1_mean == pt.alg2_mean);
    CHECK(pt.alg1_se == pt.alg2_se);
  }
}

TEST_CASE("unbiased extra data helps almost everywhere") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto r = compare_algorithms(p0, p0, 16, 512, {0.1, 0.4, 1.6, 6.4}, 40, 6);
  REQUIRE(r.sigma_star.has_value());
  CHECK(*r.sigma_star == 0.1);
  for (const auto& pt : r.curve) CHECK(pt.alg2_mean < pt.alg1_mean);
}

TEST_CASE("biased extra data wins only at high noise") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto q0 = Density1D::gaussian(0.0, 2.0);
  auto r = compare_algorithms(p0, q0, 32, 2048, {0.4, 0.8, 1.6, 3.2, 6.4, 12.8}, 40, 7);
  REQUIRE(r.sigma_star.has_value());
  CHECK(*r.sigma_star == 6.4);
  // clean-only wins below the crossing, mixed-data wins from it onward
  for (const auto& pt : r.curve) {
    if (pt.sigma < *r.sigma_star)
      CHECK(pt.alg1_mean < pt.alg2_mean);
    else
      CHECK(pt.alg2_mean < pt.alg1_mean);
  }
  CHECK_THROWS_AS(compare_algorithms(p0, q0, 4, 10, {1.0}, 5, 1), std::invalid_argument);
}

TEST_CASE("hoeffding oracle") {
  HoeffdingSampler unif{0.0, 1.0, [](Rng& r) { return r.uniform(); }};
  auto rep = hoeffding_oracle(unif, 0.5, 100, {0.0, 0.05, 0.1, 0.2}, 2000, 12);
  CHECK(rep.pass);
  REQUIRE(rep.points.size() == 4);
  // t = 0: every trial exceeds, bound saturates at 2
  CHECK(rep.points[0].measured == 1.0);
  CHECK(rep.points[0].bound == 2.0);
  CHECK(rep.points[2].bound == Catch::Approx(2.0 * std::exp(-2.0)).margin(1e-12));

  // a constant sampler never deviates
  HoeffdingSampler constant{0.0, 1.0, [](Rng&) { return 0.5; }};
  auto crep = hoeffding_oracle(constant, 0.5, 50, {0.01, 0.5}, 200, 1);
  CHECK(crep.pass);
  for (const auto& p : crep.points) CHECK(p.measured == 0.0);

  // samples escaping the declared range violate the contract
  HoeffdingSampler liar{0.0, 0.5, [](Rng& r) { return r.uniform(); }};
  CHECK_THROWS_AS(hoeffding_oracle(liar, 0.5, 100, {0.1}, 50, 2), contract_violation);
  CHECK_THROWS_AS(hoeffding_oracle(HoeffdingSampler{1.0, 0.0, {}}, 0.5, 10, {0.1}, 10, 3),
                  std::invalid_argument);
}

TEST_CASE("report serialization") {
  auto g = Density1D::gaussian(0.0, 1.0);
  auto r = check_contraction(g, Density1D::gaussian(0.5, 1.0), {1.0});
  auto j = r.to_json();
  CHECK(j["theorem"] == "smoothing-contraction");
  CHECK(j["points"].size() == 1);
  CHECK(j["points"][0].contains("bound"));
}
