// ambient-lab: experiment runner. Subcommands: annotate | pipeline | verify |
// schedule | fields. All take --config <json> --out <dir> [--seed N].
// Exit codes: 0 ok, 1 verification failed, 2 config error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ambient/annotate.hpp"
#include "ambient/common.hpp"
#include "ambient/density.hpp"
#include "ambient/fields.hpp"
#include "ambient/io.hpp"
#include "ambient/kde.hpp"
#include "ambient/schedule.hpp"
#include "ambient/train.hpp"
#include "ambient/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ambient;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FieldType { number, integer, string, object, array, boolean };

struct FieldSpec {
  std::string name;
  FieldType type;
  bool required;
};

bool type_matches(const json& v, FieldType t) {
  switch (t) {
    case FieldType::number: return v.is_number();
    case FieldType::integer: return v.is_number_integer();
    case FieldType::string: return v.is_string();
    case FieldType::object: return v.is_object();
    case FieldType::array: return v.is_array();
    case FieldType::boolean: return v.is_boolean();
  }
  return false;
}

const char* type_name(FieldType t) {
  switch (t) {
    case FieldType::number: return "number";
    case FieldType::integer: return "integer";
    case FieldType::string: return "string";
    case FieldType::object: return "object";
    case FieldType::array: return "array";
    case FieldType::boolean: return "boolean";
  }
  return "?";
}

// Strict object validation: every listed field type-checked, required fields
// present, unknown keys rejected. Errors name the full field path.
void check_object(const json& j, const std::string& path, const std::vector<FieldSpec>& fields) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  std::set<std::string> known;
  for (const auto& f : fields) {
    known.insert(f.name);
    const auto it = j.find(f.name);
    if (it == j.end()) {
      if (f.required) throw ConfigError(path + "." + f.name + ": required field is missing");
      continue;
    }
    if (!type_matches(*it, f.type))
      throw ConfigError(path + "." + f.name + ": expected " + type_name(f.type));
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError(path + "." + key + ": unknown key");
  }
}

Density1D parse_density(const json& j, const std::string& path) {
  check_object(j, path,
               {{"kind", FieldType::string, true},
                {"components", FieldType::array, false},
                {"knots", FieldType::array, false}});
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian-mixture" && !j.contains("components"))
    throw ConfigError(path + ".components: required for gaussian-mixture");
  if (kind == "piecewise-linear" && !j.contains("knots"))
    throw ConfigError(path + ".knots: required for piecewise-linear");
  try {
    return density_from_json(j);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

NoiseSchedule parse_schedule(const json& j, const std::string& path) {
  check_object(j, path,
               {{"levels", FieldType::integer, false},
                {"sigma_lo", FieldType::number, false},
                {"sigma_hi", FieldType::number, false},
                {"sigmas", FieldType::array, false}});
  try {
    if (j.contains("sigmas")) return NoiseSchedule(j.at("sigmas").get<std::vector<double>>());
    return NoiseSchedule::log_spaced(j.value("levels", 64),
                                     j.value("sigma_lo", 0.02), j.value("sigma_hi", 80.0));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

LambdaRule parse_rule(const json& j, const std::string& path) {
  check_object(j, path,
               {{"kind", FieldType::string, true}, {"max", FieldType::number, false}});
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "none") return LambdaRule::none();
  const double max = j.value("max", 4.0);
  if (!(max > 1.0)) throw ConfigError(path + ".max: must be > 1");
  if (kind == "clip") return LambdaRule::clip(max);
  if (kind == "buffer") return LambdaRule::buffer(max);
  throw ConfigError(path + ".kind: expected none|clip|buffer");
}

GaussianField parse_field(const json& j, const std::string& path) {
  check_object(j, path,
               {{"kind", FieldType::string, true},
                {"length", FieldType::integer, false},
                {"rho", FieldType::number, false},
                {"var", FieldType::number, false},
                {"covariance", FieldType::array, false}});
  const std::string kind = j.at("kind").get<std::string>();
  try {
    if (kind == "white") return GaussianField::white(j.value("length", 64), j.value("var", 1.0));
    if (kind == "ar1") {
      if (!j.contains("rho")) throw ConfigError(path + ".rho: required for ar1");
      return GaussianField::ar1(j.value("length", 64), j.at("rho").get<double>(),
                                j.value("var", 1.0));
    }
    if (kind == "custom") {
      if (!j.contains("covariance"))
        throw ConfigError(path + ".covariance: required for custom");
      return GaussianField(j.at("covariance").get<std::vector<double>>());
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  throw ConfigError(path + ".kind: expected white|ar1|custom");
}

json load_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file: " + file);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

int run_annotate(const json& cfg, const fs::path& out, std::uint64_t seed) {
  check_object(cfg, "config",
               {{"seed", FieldType::integer, false},
                {"p0", FieldType::object, true},
                {"q0", FieldType::object, true},
                {"schedule", FieldType::object, true},
                {"tau", FieldType::number, true},
                {"classifier", FieldType::string, false},
                {"n_fit", FieldType::integer, false},
                {"n_samples", FieldType::integer, false},
                {"noise_draws", FieldType::integer, false}});
  const Density1D p0 = parse_density(cfg.at("p0"), "config.p0");
  const Density1D q0 = parse_density(cfg.at("q0"), "config.q0");
  const NoiseSchedule schedule = parse_schedule(cfg.at("schedule"), "config.schedule");
  const double tau = cfg.at("tau").get<double>();
  if (!(tau > 0.0 && tau < 0.5)) throw ConfigError("config.tau: must be in (0, 0.5)");
  const std::string classifier_kind = cfg.value("classifier", "bayes-exact");
  const int n_fit = cfg.value("n_fit", 512);
  const int n_samples = cfg.value("n_samples", 0);
  const int noise_draws = cfg.value("noise_draws", 256);
  if (n_fit < 1) throw ConfigError("config.n_fit: must be >= 1");
  if (n_samples < 0) throw ConfigError("config.n_samples: must be >= 0");
  if (noise_draws < 1) throw ConfigError("config.noise_draws: must be >= 1");

  NoiseClassifier classifier = [&] {
    if (classifier_kind == "bayes-exact") return NoiseClassifier::bayes_exact(p0, q0);
    if (classifier_kind == "learned-logistic") {
      Rng rng(Rng::derive(seed, 1));
      return NoiseClassifier::fit_logistic(p0.sample(n_fit, rng), q0.sample(n_fit, rng),
                                           schedule, Rng::derive(seed, 2));
    }
    throw ConfigError("config.classifier: expected bayes-exact|learned-logistic");
  }();

  const DatasetAnnotation ds =
      classifier.kind() == NoiseClassifier::Kind::bayes_exact
          ? annotate_dataset(classifier, q0, schedule, tau)
          : [&] {
              Rng rng(Rng::derive(seed, 3));
              return annotate_dataset(classifier, q0.sample(2048, rng), schedule, tau,
                                      Rng::derive(seed, 4), noise_draws);
            }();

  const std::uint64_t hash = config_hash(cfg);
  {
    CsvWriter csv(out / "curve.csv", hash, seed);
    csv.row({"index", "sigma", "expected_prob", "standard_error"});
    for (std::size_t t = 0; t < schedule.size(); ++t)
      csv.row({std::to_string(t), CsvWriter::num(schedule.sigma(int(t))),
               CsvWriter::num(ds.prob_curve[t]), CsvWriter::num(ds.se_curve[t])});
  }
  if (n_samples > 0) {
    Rng rng(Rng::derive(seed, 5));
    const auto annos = annotate_samples(classifier, q0.sample(n_samples, rng), schedule, tau,
                                        Rng::derive(seed, 6), noise_draws);
    CsvWriter csv(out / "annotations.csv", hash, seed);
    csv.row({"id", "value", "t_min_index", "sigma_min", "prob_at_tmin", "standard_error",
             "method"});
    for (const auto& a : annos)
      csv.row({std::to_string(a.id), CsvWriter::num(a.value), std::to_string(a.t_min_index),
               CsvWriter::num(a.sigma_min), CsvWriter::num(a.prob_at_tmin),
               CsvWriter::num(a.standard_error), a.method});
  }
  {
    SvgPlot plot("expected classifier probability vs noise level", "sigma", "E_q[c]", true,
                 false);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t t = 0; t < schedule.size(); ++t)
      pts.emplace_back(schedule.sigma(int(t)), ds.prob_curve[t]);
    plot.add_series("E_q[c]", std::move(pts));
    plot.add_hline(tau, "tau");
    plot.write(out / "curve.svg");
  }
  write_json_report(out / "summary.json",
                    {{"t_min_index", ds.t_min_index},
                     {"sigma_tmin", schedule.sigma(ds.t_min_index)},
                     {"crossed", ds.crossed},
                     {"tau", tau},
                     {"classifier", classifier_kind},
                     {"schedule", to_json(schedule)}},
                    hash, seed);
  return 0;
}

// ---------------------------------------------------------------------------

struct ArmResult {
  std::string name;
  EvalStats stats;
};

int run_pipeline(const json& cfg, const fs::path& out, std::uint64_t seed) {
  check_object(cfg, "config",
               {{"seed", FieldType::integer, false},
                {"p0", FieldType::object, true},
                {"corrupt_sigma", FieldType::number, true},
                {"n1", FieldType::integer, true},
                {"n2", FieldType::integer, true},
                {"schedule", FieldType::object, true},
                {"tau", FieldType::number, true},
                {"rule", FieldType::object, false},
                {"n_generate", FieldType::integer, false},
                {"draws_per_sample", FieldType::integer, false}});
  const Density1D p0 = parse_density(cfg.at("p0"), "config.p0");
  const double corrupt_sigma = cfg.at("corrupt_sigma").get<double>();
  if (!(corrupt_sigma > 0.0)) throw ConfigError("config.corrupt_sigma: must be positive");
  const std::size_t n1 = cfg.at("n1").get<std::size_t>();
  const std::size_t n2 = cfg.at("n2").get<std::size_t>();
  if (n1 == 0) throw ConfigError("config.n1: dataset must be nonempty");
  const NoiseSchedule schedule = parse_schedule(cfg.at("schedule"), "config.schedule");
  const double tau = cfg.at("tau").get<double>();
  if (!(tau > 0.0 && tau < 0.5)) throw ConfigError("config.tau: must be in (0, 0.5)");
  const LambdaRule rule = cfg.contains("rule") ? parse_rule(cfg.at("rule"), "config.rule")
                                               : LambdaRule::buffer(4.0);
  const std::size_t n_generate = cfg.value("n_generate", 4000);
  const int draws_per_sample = cfg.value("draws_per_sample", 4);
  if (n_generate < 100) throw ConfigError("config.n_generate: must be >= 100");
  if (draws_per_sample < 1) throw ConfigError("config.draws_per_sample: must be >= 1");

  const Density1D q0 = convolve(p0, corrupt_sigma);
  Rng data_rng(Rng::derive(seed, 10));
  const std::vector<double> clean = p0.sample(n1, data_rng);
  const std::vector<double> corrupt = q0.sample(n2, data_rng);

  // dataset-level t_min from the Bayes-exact classifier
  const NoiseClassifier classifier = NoiseClassifier::bayes_exact(p0, q0);
  const DatasetAnnotation ds = annotate_dataset(classifier, q0, schedule, tau);
  const double sigma_min = schedule.sigma(ds.t_min_index);

  auto run_arm = [&](const std::string& name, const std::vector<AnnotatedSample>& data,
                     Objective objective) {
    TrainConfig tc;
    tc.objective = objective;
    tc.rule = rule;
    tc.seed = Rng::derive(seed, 20);  // shared across arms: paired comparison
    tc.draws_per_sample = draws_per_sample;
    const auto fit = fit_affine(data, schedule, tc);
    const auto samples = generate(fit.model, schedule, n_generate, Rng::derive(seed, 30));
    return ArmResult{name, eval_generated(samples, p0)};
  };

  std::vector<AnnotatedSample> only_clean, naive, ambient_data;
  for (double x : clean) {
    only_clean.push_back(AnnotatedSample::clean(x));
    naive.push_back(AnnotatedSample::clean(x));
    ambient_data.push_back(AnnotatedSample::clean(x));
  }
  for (double y : corrupt) {
    naive.push_back(AnnotatedSample::clean(y));
    ambient_data.push_back(AnnotatedSample::annotated(y, ds.t_min_index, sigma_min));
  }

  std::vector<ArmResult> arms;
  arms.push_back(run_arm("only-clean", only_clean, Objective::clean));
  arms.push_back(run_arm("naive-all-data", naive, Objective::clean));
  arms.push_back(run_arm("ambient-o", ambient_data, Objective::ambient_o));

  const std::uint64_t hash = config_hash(cfg);
  {
    CsvWriter csv(out / "table.csv", hash, seed);
    csv.row({"arm", "w1", "tv", "mean", "var"});
    for (const auto& a : arms)
      csv.row({a.name, CsvWriter::num(a.stats.wasserstein1), CsvWriter::num(a.stats.tv_vs_truth),
               CsvWriter::num(a.stats.mean), CsvWriter::num(a.stats.var)});
  }
  json arms_json = json::array();
  for (const auto& a : arms)
    arms_json.push_back({{"arm", a.name},
                         {"w1", a.stats.wasserstein1},
                         {"tv", a.stats.tv_vs_truth},
                         {"mean", a.stats.mean},
                         {"var", a.stats.var}});
  write_json_report(out / "report.json",
                    {{"arms", arms_json},
                     {"t_min_index", ds.t_min_index},
                     {"sigma_min", sigma_min},
                     {"n1", n1},
                     {"n2", n2},
                     {"corrupt_sigma", corrupt_sigma}},
                    hash, seed);
  return 0;
}

// ---------------------------------------------------------------------------

void write_points_csv(const fs::path& path, const TheoremReport& r, std::uint64_t hash,
                      std::uint64_t seed) {
  CsvWriter csv(path, hash, seed);
  csv.row({"parameter", "measured", "bound", "ok"});
  for (const auto& p : r.points)
    csv.row({CsvWriter::num(p.parameter), CsvWriter::num(p.measured), CsvWriter::num(p.bound),
             p.ok ? "1" : "0"});
}

int run_verify(const json& cfg, const fs::path& out, std::uint64_t seed) {
  check_object(cfg, "config",
               {{"seed", FieldType::integer, false},
                {"which", FieldType::string, true},
                {"p0", FieldType::object, false},
                {"q0", FieldType::object, false},
                {"density", FieldType::object, false},
                {"sigma_grid", FieldType::array, false},
                {"n_grid", FieldType::array, false},
                {"t_grid", FieldType::array, false},
                {"n1", FieldType::integer, false},
                {"n2", FieldType::integer, false},
                {"n", FieldType::integer, false},
                {"trials", FieldType::integer, false},
                {"delta", FieldType::number, false},
                {"tau", FieldType::number, false},
                {"field", FieldType::object, false},
                {"schedule", FieldType::object, false},
                {"eps", FieldType::number, false}});
  const std::string which = cfg.at("which").get<std::string>();
  const std::uint64_t hash = config_hash(cfg);

  if (which == "theorem2") {
    TheoremReport report =
        cfg.contains("p0")
            ? check_contraction(parse_density(cfg.at("p0"), "config.p0"),
                                parse_density(cfg.at("q0"), "config.q0"),
                                cfg.contains("sigma_grid")
                                    ? cfg.at("sigma_grid").get<std::vector<double>>()
                                    : std::vector<double>{0.5, 1, 2, 4, 8})
            : check_contraction_sweep(cfg.value("trials", 100), seed);
    write_points_csv(out / "points.csv", report, hash, seed);
    write_json_report(out / "report.json", report.to_json(), hash, seed);
    return report.pass ? 0 : 1;
  }

  if (which == "theorem1") {
    const Density1D d = cfg.contains("density")
                            ? parse_density(cfg.at("density"), "config.density")
                            : Density1D::tent(0.0, 1.0);
    const auto n_grid = cfg.contains("n_grid")
                            ? cfg.at("n_grid").get<std::vector<std::size_t>>()
                            : std::vector<std::size_t>{64, 128, 256, 512, 1024, 2048, 4096, 8192};
    const auto sigma_grid = cfg.contains("sigma_grid")
                                ? cfg.at("sigma_grid").get<std::vector<double>>()
                                : std::vector<double>{0.5, 1.0, 2.0};
    const auto report = check_kde_rate(d, n_grid, sigma_grid, cfg.value("trials", 200),
                                       cfg.value("delta", 0.05), seed);
    {
      CsvWriter csv(out / "cells.csv", hash, seed);
      csv.row({"n", "sigma", "mean_error", "quantile_error", "bound"});
      for (const auto& c : report.cells)
        csv.row({std::to_string(c.n), CsvWriter::num(c.sigma), CsvWriter::num(c.mean_error),
                 CsvWriter::num(c.quantile_error), CsvWriter::num(c.bound)});
    }
    {
      SvgPlot plot("mean TV error vs n", "n", "mean TV error", true, true);
      for (double sigma : sigma_grid) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& c : report.cells)
          if (c.sigma == sigma) pts.emplace_back(double(c.n), c.mean_error);
        plot.add_series("sigma=" + CsvWriter::num(sigma), std::move(pts));
      }
      plot.write(out / "rate.svg");
    }
    write_json_report(out / "report.json", report.to_json(), hash, seed);
    return report.pass ? 0 : 1;
  }

  if (which == "compare") {
    const Density1D p0 = cfg.contains("p0") ? parse_density(cfg.at("p0"), "config.p0")
                                            : Density1D::gaussian(0.0, 1.0);
    const Density1D q0 = cfg.contains("q0") ? parse_density(cfg.at("q0"), "config.q0")
                                            : Density1D::gaussian(0.0, 2.0);
    const auto sigma_grid =
        cfg.contains("sigma_grid")
            ? cfg.at("sigma_grid").get<std::vector<double>>()
            : std::vector<double>{0.4, 0.8, 1.6, 3.2, 6.4, 12.8};
    auto report = compare_algorithms(p0, q0, cfg.value("n1", 32), cfg.value("n2", 2048),
                                     sigma_grid, cfg.value("trials", 200), seed);
    // correspondence with the annotation switching point (logged, not asserted)
    if (sigma_grid.size() >= 2) {
      const auto ds = annotate_dataset(NoiseClassifier::bayes_exact(p0, q0), q0,
                                       NoiseSchedule(sigma_grid), cfg.value("tau", 0.45));
      if (ds.crossed) report.sigma_tmin = sigma_grid[std::size_t(ds.t_min_index)];
    }
    {
      CsvWriter csv(out / "curve.csv", hash, seed);
      csv.row({"sigma", "alg1_mean", "alg2_mean", "alg1_se", "alg2_se"});
      for (const auto& p : report.curve)
        csv.row({CsvWriter::num(p.sigma), CsvWriter::num(p.alg1_mean),
                 CsvWriter::num(p.alg2_mean), CsvWriter::num(p.alg1_se),
                 CsvWriter::num(p.alg2_se)});
    }
    {
      SvgPlot plot("estimator error vs noise level", "sigma", "mean TV error", true, true);
      std::vector<std::pair<double, double>> a1, a2;
      for (const auto& p : report.curve) {
        a1.emplace_back(p.sigma, p.alg1_mean);
        a2.emplace_back(p.sigma, p.alg2_mean);
      }
      plot.add_series("clean-only", std::move(a1));
      plot.add_series("mixed-data", std::move(a2));
      plot.write(out / "curve.svg");
    }
    write_json_report(out / "report.json", report.to_json(), hash, seed);
    return 0;
  }

  if (which == "hoeffding") {
    HoeffdingSampler sampler{0.0, 1.0, [](Rng& rng) { return rng.uniform(); }};
    const auto t_grid = cfg.contains("t_grid") ? cfg.at("t_grid").get<std::vector<double>>()
                                               : std::vector<double>{0.02, 0.05, 0.1, 0.15, 0.2};
    const auto report = hoeffding_oracle(sampler, 0.5, cfg.value("n", 100), t_grid,
                                         cfg.value("trials", 10000), seed);
    write_points_csv(out / "points.csv", report, hash, seed);
    write_json_report(out / "report.json", report.to_json(), hash, seed);
    return report.pass ? 0 : 1;
  }

  if (which == "locality") {
    const GaussianField field = cfg.contains("field")
                                    ? parse_field(cfg.at("field"), "config.field")
                                    : GaussianField::ar1(64, 0.9);
    const NoiseSchedule schedule =
        cfg.contains("schedule") ? parse_schedule(cfg.at("schedule"), "config.schedule")
                                 : NoiseSchedule::log_spaced(8, 0.05, 5.0);
    const double eps = cfg.value("eps", 1e-3);
    const auto grid = default_odd_k_grid(field.length());
    const auto map = window_to_sigma_map(field, schedule, eps);
    bool pass = true;
    for (std::size_t t = 1; t < map.size(); ++t) pass = pass && map[t] >= map[t - 1];
    {
      CsvWriter csv(out / "map.csv", hash, seed);
      csv.row({"index", "sigma", "plateau_k"});
      for (std::size_t t = 0; t < map.size(); ++t)
        csv.row({std::to_string(t), CsvWriter::num(schedule.sigma(int(t))),
                 std::to_string(map[t])});
    }
    SvgPlot plot("denoising loss vs context size", "k", "residual loss", false, false);
    CsvWriter csv(out / "curves.csv", hash, seed);
    csv.row({"sigma", "k", "residual_loss"});
    for (std::size_t t = 0; t < schedule.size(); ++t) {
      const double sigma = schedule.sigma(int(t));
      const auto curve = context_curve(field, sigma, grid, eps);
      std::vector<std::pair<double, double>> pts;
      double prev = std::numeric_limits<double>::infinity();
      for (const auto& [k, loss] : curve.points) {
        csv.row({CsvWriter::num(sigma), std::to_string(k), CsvWriter::num(loss)});
        pts.emplace_back(double(k), loss);
        pass = pass && loss <= prev + 1e-10;
        prev = loss;
      }
      plot.add_series("sigma=" + CsvWriter::num(sigma), std::move(pts));
    }
    plot.write(out / "curves.svg");
    json map_json = json::array();
    for (std::size_t t = 0; t < map.size(); ++t)
      map_json.push_back({{"sigma", schedule.sigma(int(t))}, {"plateau_k", map[t]}});
    write_json_report(out / "report.json",
                      {{"pass", pass}, {"eps", eps}, {"window_map", map_json}}, hash, seed);
    return pass ? 0 : 1;
  }

  throw ConfigError("config.which: expected theorem1|theorem2|compare|hoeffding|locality");
}

// ---------------------------------------------------------------------------

int run_schedule(const json& cfg, const fs::path& out, std::uint64_t seed) {
  check_object(cfg, "config",
               {{"seed", FieldType::integer, false},
                {"schedule", FieldType::object, true},
                {"rule", FieldType::object, false},
                {"mask", FieldType::object, true},
                {"lambda_sigma_min", FieldType::number, false}});
  const NoiseSchedule schedule = parse_schedule(cfg.at("schedule"), "config.schedule");
  const LambdaRule rule = cfg.contains("rule") ? parse_rule(cfg.at("rule"), "config.rule")
                                               : LambdaRule::none();
  const json& mask_cfg = cfg.at("mask");
  check_object(mask_cfg, "config.mask",
               {{"n_clean", FieldType::integer, true},
                {"annotated", FieldType::array, false},
                {"ood", FieldType::array, false}});
  std::vector<MaskEntry> mask;
  const std::size_t n_clean = mask_cfg.at("n_clean").get<std::size_t>();
  for (std::size_t i = 0; i < n_clean; ++i) mask.push_back(MaskEntry::clean());
  std::size_t reference = n_clean;
  if (mask_cfg.contains("annotated")) {
    std::size_t gi = 0;
    for (const auto& g : mask_cfg.at("annotated")) {
      const std::string path = "config.mask.annotated[" + std::to_string(gi++) + "]";
      check_object(g, path,
                   {{"t_min", FieldType::integer, true}, {"count", FieldType::integer, true}});
      const int t_min = g.at("t_min").get<int>();
      if (t_min < 0 || t_min > schedule.top_index())
        throw ConfigError(path + ".t_min: outside schedule");
      const std::size_t count = g.at("count").get<std::size_t>();
      for (std::size_t i = 0; i < count; ++i) mask.push_back(MaskEntry::annotated(t_min));
      reference += count;
    }
  }
  if (mask_cfg.contains("ood")) {
    std::size_t gi = 0;
    for (const auto& g : mask_cfg.at("ood")) {
      const std::string path = "config.mask.ood[" + std::to_string(gi++) + "]";
      check_object(g, path,
                   {{"t_max", FieldType::integer, true},
                    {"t_min", FieldType::integer, false},
                    {"count", FieldType::integer, true}});
      const int t_max = g.at("t_max").get<int>();
      if (t_max < 0 || t_max > schedule.top_index())
        throw ConfigError(path + ".t_max: outside schedule");
      // OOD entries do not count toward the in-distribution reference size
      const int t_min = g.value("t_min", schedule.top_index() + 1);
      const std::size_t count = g.at("count").get<std::size_t>();
      for (std::size_t i = 0; i < count; ++i) {
        if (t_min > schedule.top_index())
          mask.push_back({t_min, t_max});  // high branch empty in practice
        else
          mask.push_back(MaskEntry::donut(t_min, t_max));
      }
    }
  }
  const auto curve = availability_curve(mask, schedule, reference, rule);
  const std::uint64_t hash = config_hash(cfg);
  {
    CsvWriter csv(out / "availability.csv", hash, seed);
    csv.row({"index", "sigma", "count", "percent"});
    for (const auto& p : curve)
      csv.row({std::to_string(p.index), CsvWriter::num(p.sigma), std::to_string(p.count),
               CsvWriter::num(p.percent)});
  }
  {
    SvgPlot plot("training-data availability vs noise level", "sigma", "% of dataset", true,
                 false);
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : curve) pts.emplace_back(p.sigma, p.percent);
    plot.add_series("available", std::move(pts));
    plot.add_hline(100.0, "100%");
    plot.write(out / "availability.svg");
  }
  if (cfg.contains("lambda_sigma_min")) {
    const double sm = cfg.at("lambda_sigma_min").get<double>();
    if (!(sm >= 0.0)) throw ConfigError("config.lambda_sigma_min: must be >= 0");
    CsvWriter csv(out / "lambda.csv", hash, seed);
    csv.row({"index", "sigma", "alpha", "lambda"});
    for (std::size_t t = 0; t < schedule.size(); ++t) {
      const double sigma = schedule.sigma(int(t));
      // the weight is only defined strictly above sigma_min
      if (!(sigma > sm)) continue;
      const auto lam = lambda_amb(sigma, sm, rule);
      csv.row({std::to_string(t), CsvWriter::num(sigma), CsvWriter::num(alpha(sigma, sm)),
               lam ? CsvWriter::num(*lam) : "excluded"});
    }
  }
  json curve_json = json::array();
  for (const auto& p : curve)
    curve_json.push_back({{"index", p.index},
                          {"sigma", p.sigma},
                          {"count", p.count},
                          {"percent", p.percent}});
  write_json_report(out / "report.json",
                    {{"availability", curve_json}, {"reference_size", reference}}, hash, seed);
  return 0;
}

// ---------------------------------------------------------------------------

int run_fields(const json& cfg, const fs::path& out, std::uint64_t seed) {
  check_object(cfg, "config",
               {{"seed", FieldType::integer, false},
                {"field", FieldType::object, true},
                {"field2", FieldType::object, false},
                {"schedule", FieldType::object, true},
                {"eps", FieldType::number, false},
                {"crop_k", FieldType::integer, false},
                {"tau", FieldType::number, false}});
  const GaussianField field = parse_field(cfg.at("field"), "config.field");
  const NoiseSchedule schedule = parse_schedule(cfg.at("schedule"), "config.schedule");
  const double eps = cfg.value("eps", 1e-3);
  if (!(eps > 0.0)) throw ConfigError("config.eps: must be positive");
  const auto map = window_to_sigma_map(field, schedule, eps);
  const std::uint64_t hash = config_hash(cfg);
  {
    CsvWriter csv(out / "map.csv", hash, seed);
    csv.row({"index", "sigma", "plateau_k"});
    for (std::size_t t = 0; t < map.size(); ++t)
      csv.row({std::to_string(t), CsvWriter::num(schedule.sigma(int(t))),
               std::to_string(map[t])});
  }
  const auto grid = default_odd_k_grid(field.length());
  {
    SvgPlot plot("denoising loss vs context size", "k", "residual loss", false, false);
    CsvWriter csv(out / "curves.csv", hash, seed);
    csv.row({"sigma", "k", "residual_loss"});
    for (std::size_t t = 0; t < schedule.size(); ++t) {
      const double sigma = schedule.sigma(int(t));
      const auto curve = context_curve(field, sigma, grid, eps);
      std::vector<std::pair<double, double>> pts;
      for (const auto& [k, loss] : curve.points) {
        csv.row({CsvWriter::num(sigma), std::to_string(k), CsvWriter::num(loss)});
        pts.emplace_back(double(k), loss);
      }
      plot.add_series("sigma=" + CsvWriter::num(sigma), std::move(pts));
    }
    plot.write(out / "curves.svg");
  }
  json report = {{"eps", eps}, {"window_map", map}};
  if (cfg.contains("field2")) {
    const GaussianField field2 = parse_field(cfg.at("field2"), "config.field2");
    const int k = cfg.value("crop_k", std::min(9, field.length()));
    if (k < 1 || k > std::min(field.length(), field2.length()))
      throw ConfigError("config.crop_k: outside valid window range");
    const auto dist = crop_marginal_distance(field, field2, k, Rng::derive(seed, 40));
    report["crop_distance"] = {{"k", k},
                               {"bhattacharyya", dist.bhattacharyya},
                               {"tv_mc", dist.tv_mc},
                               {"tv_se", dist.tv_se}};
    const auto tmax = annotate_tmax(field, field2, map, schedule, cfg.value("tau", 0.45),
                                    Rng::derive(seed, 41));
    if (tmax)
      report["t_max_index"] = *tmax;
    else
      report["t_max_index"] = nullptr;
  }
  write_json_report(out / "report.json", report, hash, seed);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale diffusion laboratory"};
  app.require_subcommand(1);
  std::string config_file, out_dir;
  std::optional<std::uint64_t> seed_override;

  std::map<std::string, int (*)(const json&, const fs::path&, std::uint64_t)> handlers = {
      {"annotate", run_annotate}, {"pipeline", run_pipeline}, {"verify", run_verify},
      {"schedule", run_schedule}, {"fields", run_fields}};

  for (auto& [name, fn] : handlers) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_file, "JSON config file")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed_override, "seed override");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const json cfg = load_config(config_file);
    if (!cfg.is_object()) throw ConfigError("config: expected a JSON object");
    std::uint64_t seed = 0;
    if (cfg.contains("seed")) {
      if (!cfg.at("seed").is_number_integer())
        throw ConfigError("config.seed: expected integer");
      seed = cfg.at("seed").get<std::uint64_t>();
    }
    if (seed_override) seed = *seed_override;
    fs::create_directories(out_dir);
    return handlers.at(sub->get_name())(cfg, out_dir, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_failure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
