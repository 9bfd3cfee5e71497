#include <catch2/catch_amalgamated.hpp>

#include "ambient/annotate.hpp"
#include "oracle.hpp"

using namespace ambient;

TEST_CASE("bayes-exact classifier closed forms") {
  auto c = NoiseClassifier::bayes_exact(Density1D::gaussian(0.0, 1.0),
                                        Density1D::gaussian(0.0, 2.0));
  // at x = 0, sigma = 0: p = phi(0), q = phi(0)/sqrt(2)
  CHECK(c.prob(0.0, 0.0) ==
        Catch::Approx(std::sqrt(2.0) / (1.0 + std::sqrt(2.0))).margin(1e-12));
  // far in the tail the wider class wins
  CHECK(c.prob(6.0, 0.0) < 0.01);
  // heavy smoothing washes the classes together
  CHECK(c.prob(0.0, 10.0) == Catch::Approx(0.5).margin(0.005));
}

TEST_CASE("identical classes give a coin flip everywhere") {
  auto g = Density1D::gaussian(0.0, 1.0);
  auto c = NoiseClassifier::bayes_exact(g, g);
  for (double x : {-3.0, 0.0, 1.5})
    for (double sigma : {0.0, 0.3, 2.0})
      CHECK(c.prob(x, sigma) == Catch::Approx(0.5).margin(1e-12));
  CHECK(expected_prob_on_bad(c, g, 1.0).value == Catch::Approx(0.5).margin(1e-6));
}

TEST_CASE("logistic classifier separates shifted gaussians") {
  Rng rng(8);
  std::vector<double> good, bad;
  for (int i = 0; i < 300; ++i) {
    good.push_back(rng.normal());
    bad.push_back(3.0 + rng.normal());
  }
  auto sch = NoiseSchedule::log_spaced(6, 0.1, 4.0);
  auto c = NoiseClassifier::fit_logistic(good, bad, sch, 17, 16);
  CHECK(c.prob(0.0, sch.sigma(0)) > 0.9);
  CHECK(c.prob(3.0, sch.sigma(0)) < 0.1);

  // identical training classes stay near 0.5
  auto flat = NoiseClassifier::fit_logistic(good, good, sch, 17, 16);
  for (double x : {-1.0, 0.0, 2.0}) CHECK(flat.prob(x, sch.sigma(2)) == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("expected prob rises toward 0.5 with noise") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto q0 = Density1D::gaussian(0.0, 1.5);
  auto c = NoiseClassifier::bayes_exact(p0, q0);
  double prev = 0.0;
  for (double sigma : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double e = expected_prob_on_bad(c, q0, sigma).value;
    CHECK(e <= 0.5 + 1e-9);
    CHECK(e >= prev - 1e-9);
    prev = e;
  }
  CHECK(prev == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("expected prob obeys the tv bound at every level") {
  auto p0 = Density1D::mixture({{0.5, -1.0, 0.5}, {0.5, 1.0, 0.5}});
  auto q0 = Density1D::gaussian(0.5, 1.2);
  auto c = NoiseClassifier::bayes_exact(p0, q0);
  auto sch = NoiseSchedule::log_spaced(8, 0.05, 6.0);
  for (int t = 0; t <= sch.top_index(); ++t) {
    const double sigma = sch.sigma(t);
    const double e = expected_prob_on_bad(c, q0, sigma).value;
    const double tv = tv_distance(convolve(p0, sigma), convolve(q0, sigma), 1e-8);
    CHECK(0.5 - e <= 0.5 * tv + 1e-6);
  }
}

TEST_CASE("dataset annotation") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto sch = NoiseSchedule::log_spaced(12, 0.05, 8.0);

  // identical distributions are usable immediately
  auto same = annotate_dataset(NoiseClassifier::bayes_exact(p0, p0), p0, sch, 0.45);
  CHECK(same.t_min_index == 0);
  CHECK(same.crossed);

  // mild variance inflation: result equals an independent threshold scan
  auto q0 = Density1D::gaussian(0.0, 1.5);
  auto c = NoiseClassifier::bayes_exact(p0, q0);
  auto ann = annotate_dataset(c, q0, sch, 0.45);
  int scan = sch.top_index();
  bool found = false;
  for (int t = 0; t <= sch.top_index() && !found; ++t) {
    if (expected_prob_on_bad(c, q0, sch.sigma(t)).value > 0.45) {
      scan = t;
      found = true;
    }
  }
  CHECK(ann.t_min_index == scan);
  CHECK(ann.crossed == found);
  CHECK(ann.prob_curve.size() == sch.size());

  // a distant spike needs noise of the order of the separation
  auto spike = Density1D::gaussian(10.0, 0.01);
  auto wide = NoiseSchedule::log_spaced(14, 0.05, 64.0);
  auto far = annotate_dataset(NoiseClassifier::bayes_exact(p0, spike), spike, wide, 0.45);
  CHECK(far.crossed);
  CHECK(wide.sigma(far.t_min_index) > 2.0);
  CHECK(far.prob_curve[0] < 1e-6);

  CHECK_THROWS_AS(annotate_dataset(c, q0, sch, 0.6), std::invalid_argument);
  CHECK_THROWS_AS(annotate_dataset(c, q0, sch, 0.0), std::invalid_argument);
}

TEST_CASE("monte carlo dataset annotation tracks the analytic one") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto q0 = Density1D::gaussian(4.0, 1.0);
  auto c = NoiseClassifier::bayes_exact(p0, q0);
  auto sch = NoiseSchedule::log_spaced(10, 0.1, 10.0);
  auto exact = annotate_dataset(c, q0, sch, 0.45);
  std::vector<double> bad = q0.sample(400, 91);
  auto mc = annotate_dataset(c, bad, sch, 0.45, 123, 128);
  CHECK(std::abs(mc.t_min_index - exact.t_min_index) <= 1);
  // a second run with the same seed is identical
  auto mc2 = annotate_dataset(c, bad, sch, 0.45, 123, 128);
  CHECK(mc.prob_curve == mc2.prob_curve);
}

TEST_CASE("per-sample annotation") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto same = NoiseClassifier::bayes_exact(p0, p0);
  auto sch = NoiseSchedule::log_spaced(8, 0.1, 5.0);
  auto anns = annotate_samples(same, {0.0, -2.0, 3.0}, sch, 0.45, 5, 64);
  for (const auto& a : anns) {
    CHECK(a.t_min_index == 0);
    CHECK(a.prob_at_tmin == Catch::Approx(0.5).margin(1e-12));
    CHECK(a.method == "bayes-exact");
  }

  // mixed population: corrupted samples need more noise on average
  auto q0 = Density1D::gaussian(5.0, 1.0);
  auto c = NoiseClassifier::bayes_exact(p0, q0);
  std::vector<double> good = p0.sample(60, 3);
  std::vector<double> bad = q0.sample(60, 4);
  auto ag = annotate_samples(c, good, sch, 0.45, 11, 128);
  auto ab = annotate_samples(c, bad, sch, 0.45, 11, 128);
  double mg = 0.0, mb = 0.0;
  for (const auto& a : ag) mg += a.t_min_index;
  for (const auto& a : ab) mb += a.t_min_index;
  CHECK(mb / ab.size() > mg / ag.size() + 1.0);
}

TEST_CASE("stronger corruption needs a larger t_min") {
  auto p0 = Density1D::gaussian(0.0, 1.0);
  auto sch = NoiseSchedule::log_spaced(16, 0.05, 8.0);
  const double tau = 0.492;
  std::vector<int> tmins;
  for (double c : {0.1, 0.5, 1.0}) {
    auto q0 = Density1D::gaussian(0.0, 1.0 + c);
    auto ann = annotate_dataset(NoiseClassifier::bayes_exact(p0, q0), q0, sch, tau);
    CHECK(ann.crossed);
    tmins.push_back(ann.t_min_index);
  }
  CHECK(tmins[0] < tmins[1]);
  CHECK(tmins[1] < tmins[2]);
}

TEST_CASE("crop t_max annotation") {
  auto sch = NoiseSchedule::log_spaced(8, 0.05, 5.0);
  auto f = GaussianField::ar1(64, 0.9);
  const auto map = window_to_sigma_map(f, sch, 1e-3);

  // identical fields are never distinguishable
  auto same = annotate_tmax(f, f, map, sch, 0.45);
  REQUIRE(same.has_value());
  CHECK(*same == sch.top_index());

  // ar1 vs white: any window wider than one pixel exposes the correlation,
  // so t_max is the largest level still mapped to k = 1
  auto white = GaussianField::white(64, 1.0);
  auto t1 = annotate_tmax(f, white, map, sch, 0.45);
  int expect = -1;
  for (int t = 0; t <= sch.top_index(); ++t)
    if (map[static_cast<std::size_t>(t)] == 1) expect = t;
  REQUIRE(t1.has_value());
  CHECK(*t1 == expect);

  // a field equal to white noise up to lag 3: windows k <= 4 look identical
  std::vector<double> cov(64, 0.0);
  cov[0] = 1.0;
  cov[4] = cov[60] = 0.45;
  GaussianField lagged(cov);
  const auto lmap = window_to_sigma_map(lagged, sch, 1e-3);
  auto t2 = annotate_tmax(lagged, white, lmap, sch, 0.45);
  int expect2 = -1;
  for (int t = 0; t <= sch.top_index(); ++t)
    if (lmap[static_cast<std::size_t>(t)] <= 4) expect2 = t;
  REQUIRE(t2.has_value());
  CHECK(*t2 == expect2);

  CHECK_THROWS_AS(annotate_tmax(f, white, std::vector<int>{1, 1}, sch, 0.45),
                  std::invalid_argument);
}

TEST_CASE("classifier parameter export") {
  auto c = NoiseClassifier::bayes_exact(Density1D::gaussian(0.0, 1.0),
                                        Density1D::gaussian(1.0, 1.0));
  auto j = c.params_json();
  CHECK(j["kind"] == "bayes-exact");
  CHECK(j.contains("p0"));

  Rng rng(2);
  std::vector<double> good, bad;
  for (int i = 0; i < 50; ++i) {
    good.push_back(rng.normal());
    bad.push_back(1.0 + rng.normal());
  }
  auto sch = NoiseSchedule::log_spaced(4, 0.1, 2.0);
  auto l = NoiseClassifier::fit_logistic(good, bad, sch, 1, 8);
  auto jl = l.params_json();
  CHECK(jl["kind"] == "learned-logistic");
  CHECK(jl["levels"].size() == 4);
}
