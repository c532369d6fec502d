// cgbound: coarse-graining error bounds harness.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <cgbound/bench.hpp>

namespace fs = std::filesystem;
using namespace cgbound;

namespace {

enum Exit { kPass = 0, kViolation = 1, kConfig = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> jobs;
  std::optional<double> tolerance;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (INI)")->required();
  app->add_option("--seed", c.seed, "base RNG seed (overrides run.seed)");
  app->add_option("--out", c.out, "output directory")->capture_default_str();
  app->add_option("--jobs", c.jobs, "worker threads (overrides run.jobs)")->check(CLI::PositiveNumber);
  app->add_option("--tolerance", c.tolerance, "bound verdict tolerance (overrides theorems.tolerance)")
      ->check(CLI::NonNegativeNumber);
}

Config load(const Common& c) {
  Config cfg = Config::from_file(c.config);
  if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
  if (c.jobs) cfg.set("run.jobs", std::to_string(*c.jobs));
  if (c.tolerance) cfg.set("theorems.tolerance", fmt_num(*c.tolerance));
  return cfg;
}

void print_reports(const ScenarioResult& r) {
  for (const auto& rep : r.reports)
    std::printf("%-18s %s  min margin %.3e  (tolerance %.1e)\n", rep.theorem.c_str(), rep.pass() ? "pass" : "FAIL",
                rep.min_margin(), rep.tolerance);
  for (const auto& [k, v] : r.checks.items())
    if (v.contains("pass")) std::printf("%-18s %s\n", k.c_str(), v["pass"].get<bool>() ? "pass" : "FAIL");
}

int cmd_bounds(const Common& c) {
  const ScenarioSpec s = parse_scenario(load(c));
  const ScenarioResult r = run_scenario(s, fs::path(c.out));
  print_reports(r);
  std::printf("artifacts: %s\n", c.out.c_str());
  return r.pass() ? kPass : kViolation;
}

int cmd_sweep(const Common& c) {
  const Config cfg = load(c);
  const ScenarioSpec base = parse_scenario(cfg);
  const auto eps = cfg.list("sweep.eps");
  SweepResult r = sweep_epsilon(cfg, eps, fs::path(c.out), base.jobs);
  std::printf("%-8s %-12s %-12s %-12s %-12s %s\n", "eps", "sup_H", "sup_W2sq", "rhs_H", "rhs_W", "verdict");
  for (const auto& row : r.rows)
    std::printf("%-8g %-12.4e %-12.4e %-12.4e %-12.4e %s\n", row.eps, row.sup_H, row.sup_W2sq, row.rhs_H, row.rhs_W,
                row.pass ? "pass" : "FAIL");
  for (const auto& [k, v] : r.fits.items())
    if (!v["slope"].is_null())
      std::printf("slope %-12s %.4f  ci95 [%.4f, %.4f]\n", k.c_str(), v["slope"].get<double>(),
                  v["ci95"][0].get<double>(), v["ci95"][1].get<double>());
  if (r.error) {
    std::fprintf(stderr, "sweep aborted: %s (partial results in %s)\n", r.error->c_str(), c.out.c_str());
    return r.error_kind == ErrorKind::config ? kConfig : kNumerical;
  }
  return r.pass() ? kPass : kViolation;
}

int cmd_constants(const Common& c) {
  const ScenarioSpec s = parse_scenario(load(c));
  std::vector<ConstantReport> cs;
  if (s.regime == Regime::overdamped) {
    std::optional<Closure> closed;
    std::string src;
    const CoefficientField eff = effective_field(s, closed, src);
    cs = overdamped_constants(s, eff, closed);
  } else {
    if (!s.pot.quadratic || !s.map.affine)
      throw ConfigError("physics.potential", "Langevin constants need a quadratic potential and an affine map");
    Vec m0(2 * s.pot.dim), v0(2 * s.pot.dim);
    m0 << s.q_mean, s.p_mean;
    v0 << s.q_var, s.p_var;
    auto suite = langevin_reference_suite(s.pot, s.map, s.beta, s.gamma, m0, Mat(v0.asDiagonal()), {0.0});
    cs = langevin_constants(s, suite);
  }
  fs::create_directories(c.out);
  json j = json::array();
  for (const auto& k : cs) {
    j.push_back(k.to_json());
    std::printf("%-18s %-14.6g %s\n", k.name.c_str(), k.value, to_string(k.provenance));
  }
  write_json(fs::path(c.out) / "constants.json", {{"config_hash", s.config.hash()}, {"constants", j}});
  return kPass;
}

int cmd_closure(const Common& c) {
  const ScenarioSpec s = parse_scenario(load(c));
  if (s.regime != Regime::overdamped) throw ConfigError("physics.regime", "closure tabulation uses the overdamped grid");
  std::optional<Closure> closed;
  std::string src;
  CoefficientField eff = effective_field(s, closed, src);
  const long per_cell = s.config.integer("closure.samples", 0);
  if (per_cell > 0) {
    EffectiveOptions eo;
    eo.jobs = s.jobs;
    eo.cond.lineage = {s.seed, streams::conditional, 0};
    eff = effective_coefficients(GibbsMeasure(s.pot, s.beta), s.map, s.coarse, per_cell, eo);
    src = "conditional sampling, " + std::to_string(per_cell) + " samples per cell";
  }
  const GridDensity mu_hat = marginal_density(GibbsMeasure(s.pot, s.beta).on_grid(s.fine), s.map, s.coarse).marginal;
  const GridDensity rho0 = initial_density(s);
  const CoefficientField cg0 = cg_coefficients(rho0, s.pot, s.map, s.beta, s.coarse);
  fs::create_directories(c.out);
  write_coefficients_csv(fs::path(c.out) / "effective_coefficients.csv", eff);
  write_coefficients_csv(fs::path(c.out) / "cg_coefficients_t0.csv", cg0);
  const double res = gradient_flow_residual(eff, mu_hat, s.beta);
  write_json(fs::path(c.out) / "closure.json",
             {{"config_hash", s.config.hash()}, {"source", src}, {"gradient_flow_residual", res}});
  std::printf("effective closure: %s\ngradient-flow residual: %.3e\n", src.c_str(), res);
  return kPass;
}

int cmd_simulate(const Common& c) {
  const ScenarioSpec s = parse_scenario(load(c));
  const SimulationResult r = simulate_scenario(s);
  fs::create_directories(c.out);
  write_trajectory_csv(fs::path(c.out) / "full.csv", r.full);
  write_trajectory_csv(fs::path(c.out) / "effective.csv", r.effective);
  json j = {{"config_hash", s.config.hash()},
            {"n_traj", r.full.n_traj},
            {"aborted_full", r.full.aborted},
            {"aborted_effective", r.effective.aborted}};
  int code = kPass;
  if (r.coupled) {
    write_coupled_csv(fs::path(c.out) / "coupled.csv", r.coupled->pair);
    j["coupled_pair"] = r.coupled->to_json();
    std::printf("coupled pair: %s (worst gap %.3e)\n", r.coupled->pass ? "pass" : "FAIL", r.coupled->worst_gap);
    if (!r.coupled->pass) code = kViolation;
  }
  write_json(fs::path(c.out) / "simulate.json", j);
  std::printf("trajectories: %ld, aborted %ld / %ld\n", r.full.n_traj, r.full.aborted, r.effective.aborted);
  if (r.full.aborted > 0 || r.effective.aborted > 0) return kNumerical;
  return code;
}

int cmd_validate_map(const Common& c) {
  const Config cfg = load(c);
  const ScenarioSpec s = parse_scenario(cfg);
  const double radius = cfg.positive("validate.radius", 5.0);
  const auto radii = cfg.list("validate.radii", {10.0, 100.0, 1000.0});
  const auto mc = check_map(s.map, radius, cfg.positive("validate.C", 1e6), 64, s.seed);
  const auto pc = check_potential_derivatives(s.pot, radius, 64, s.seed);
  const auto ai = check_affine_at_infinity(s.map, radii, 256, s.seed);
  const double split = scale_split_residual(s.pot, s.map, radius, 64, s.seed);
  const bool split_ok = split <= 1e-8;
  json T = json::array();
  for (long j = 0; j < ai.T_est.cols(); ++j) T.push_back(ai.T_est(0, j));
  json j = {{"config_hash", s.config.hash()},
            {"map", {{"max_rel_error", mc.max_rel_error}, {"min_gram_eig", mc.min_gram_eig},
                     {"affine_exact", mc.affine_exact}, {"pass", mc.pass}}},
            {"potential", {{"max_rel_error", pc.max_rel_error}, {"pass", pc.pass}}},
            {"affine_at_infinity", {{"T_est", T}, {"C_est", ai.C_est}, {"residual", ai.residual},
                                    {"hess_decay_exponent", ai.hess_decay_exponent}, {"c3_on_box", ai.c3_on_box},
                                    {"pass", ai.pass}}},
            {"scale_split", {{"residual", split}, {"pass", split_ok}}}};
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "validate.json", j);
  std::printf("map derivatives %s, potential derivatives %s, affine at infinity %s, scale split %s\n",
              mc.pass ? "pass" : "FAIL", pc.pass ? "pass" : "FAIL", ai.pass ? "pass" : "FAIL",
              split_ok ? "pass" : "FAIL");
  return mc.pass && pc.pass && ai.pass && split_ok ? kPass : kViolation;
}

int cmd_oracle(const Common& c) {
  const ScenarioSpec s = parse_scenario(load(c));
  if (!s.pot.quadratic || !s.map.affine)
    throw ConfigError("physics.potential", "the Gaussian oracle needs a quadratic potential and an affine map");
  std::vector<double> tg;
  for (int i = 0; i <= s.n_out; ++i) tg.push_back(s.t_end * i / s.n_out);
  ReferenceSuite suite;
  if (s.regime == Regime::langevin) {
    Vec m0(2 * s.pot.dim), v0(2 * s.pot.dim);
    m0 << s.q_mean, s.p_mean;
    v0 << s.q_var, s.p_var;
    suite = langevin_reference_suite(s.pot, s.map, s.beta, s.gamma, m0, Mat(v0.asDiagonal()), tg);
  } else {
    suite = overdamped_reference_suite(s.pot, s.map, s.beta, s.q_mean, Mat(s.q_var.asDiagonal()), tg);
  }
  fs::create_directories(c.out);
  CsvWriter w(fs::path(c.out) / "oracle.csv");
  w.header({"t", "H", "W2sq", "mean_cg", "var_cg", "mean_eff", "var_eff"});
  for (const auto& p : suite.points) w.row({p.t, p.H, p.W2sq, p.coarse.m(0), p.coarse.S(0, 0), p.effective.m(0), p.effective.S(0, 0)});
  write_json(fs::path(c.out) / "oracle.json", {{"config_hash", s.config.hash()}, {"H0_full", suite.H0_full}});
  std::printf("oracle: %zu points, H(rho_0|mu) = %.6g\n", suite.points.size(), suite.H0_full);
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cgbound: error bounds for coarse-grained diffusions"};
  app.require_subcommand(1);
  Common c;
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const Common&);
  };
  const Sub subs[] = {
      {"simulate", "particle runs of the full and effective dynamics", cmd_simulate},
      {"closure", "tabulate effective and coarse-grained coefficients", cmd_closure},
      {"constants", "functional-inequality and interaction constants", cmd_constants},
      {"bounds", "run a scenario and verify the configured theorems", cmd_bounds},
      {"sweep", "epsilon sweep with log-log slope fits", cmd_sweep},
      {"validate-map", "check a potential / map pair against the structural assumptions", cmd_validate_map},
      {"oracle", "Gaussian moment-propagation reference", cmd_oracle},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> apps;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, c);
    apps.push_back({sub, &s});
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kConfig;
  }
  try {
    for (auto [sub, s] : apps)
      if (sub->parsed()) return s->fn(c);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error [%s]: %s\n", e.field().c_str(), e.what());
    return kConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == ErrorKind::config ? kConfig : kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumerical;
  }
  return kConfig;
}
