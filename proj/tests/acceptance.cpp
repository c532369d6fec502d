// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <cgbound/bench.hpp>

using namespace cgbound;
namespace fs = std::filesystem;

namespace {

const char* kOverdamped =
    "[run]\nname = acceptance\nseed = 0\n"
    "[physics]\nregime = overdamped\nbeta = 1\npotential = coupled_quadratic\neps = 0.1\nc = 0.25\n"
    "[map]\nkind = coordinate\n"
    "[grid]\nn = 128\n"
    "[time]\nt_end = 1\nn_out = 50\n"
    "[theorems]\nlist = relent-od wasser-od entropy-rate\ntau = 0.5\n";

const char* kLangevin =
    "[run]\nname = acceptance_langevin\nseed = 0\n"
    "[physics]\nregime = langevin\nbeta = 1\ngamma = 1\npotential = coupled_quadratic\n"
    "[map]\nkind = coordinate\n"
    "[time]\nt_end = 1\nn_out = 20\n"
    "[initial]\nmean = 1 0.5\nvar = 0.1 0.1\np_mean = 0 0\np_var = 0.1 0.1\n"
    "[simulate]\nn_traj = 10000\nh = 0.005\n";

int failures = 0;

void verdict(const char* id, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <class Fn>
void criterion(const char* id, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    verdict(id, false, std::string("error: ") + e.what());
  }
}

std::string num(double x) { return fmt_num(x); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool check_pass(const ScenarioResult& r, const char* key) { return r.checks.contains(key) && r.checks[key]["pass"].get<bool>(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const ConstantReport* find_constant(const std::vector<ConstantReport>& cs, const std::string& name) {
  for (const auto& c : cs)
    if (c.name == name) return &c;
  return nullptr;
}

GridDensity gaussian1(const Grid& g, double m, double v) {
  return GridDensity::from_log(g, [&](const Vec& z) { return -0.5 * (z(0) - m) * (z(0) - m) / v; });
}

}  // namespace

int main() {
  const Config base = Config::from_text(kOverdamped);
  OverdampedRun run;
  ScenarioResult main_res;
  ScenarioSpec main_spec;
  bool have_main = false;

  criterion("A1", [&] {
    main_spec = parse_scenario(base);
    const auto t0 = std::chrono::steady_clock::now();
    main_res = scenario_overdamped(main_spec, &run);
    const double secs = seconds_since(t0);
    have_main = true;
    const double l1 = main_res.checks["gyongy_consistency"]["l1_sup"].get<double>();
    verdict("A1", l1 <= 5e-3 && secs < 60.0,
            "sup_t L1(push-forward, coarse replay) = " + num(l1) + " (<= 5e-3), runtime " + num(secs) + " s (< 60)");
  });

  criterion("A2", [&] {
    if (!have_main) throw std::runtime_error("A1 run unavailable");
    const double slack = run.max_entropy_increase, rel = run.ledger.max_rel_error;
    verdict("A2", slack <= 1e-8 && rel <= 1e-2,
            "max per-step entropy increase " + num(slack) + " (<= 1e-8), ledger rel error " + num(rel) + " (<= 1e-2)");
  });

  criterion("A3", [&] {
    auto map = catalog::coordinate(2, 0);
    const Grid coarse(Axis{-2.5, 2.5, 400});
    auto cq = catalog::coupled_quadratic(0.1, 0.25);
    const Grid fine(coarse.axes[0], Axis{-3, 3, 128});
    auto mu_cq = marginal_density(GibbsMeasure(cq, 1.0).on_grid(fine), map, coarse).marginal;
    const double r1 = gradient_flow_residual(analytic_effective_closure(cq, map)->tabulate(coarse), mu_cq, 1.0);
    auto dw = catalog::double_well(0.1, 0.25);
    const Grid box(coarse.axes[0], Axis{-3, 3, 64});
    auto eff = effective_coefficients_quadrature(GibbsMeasure(dw, 1.0), map, coarse, box);
    auto mu_dw = marginal_density([&](const Vec& q) { return std::exp(-dw.eval(q)); }, map, coarse, box).marginal;
    const double r2 = gradient_flow_residual(eff, mu_dw, 1.0);
    verdict("A3", r1 <= 1e-2 && r2 <= 1e-2,
            "gradient-flow residual coupled_quadratic " + num(r1) + ", double_well " + num(r2) + " (<= 1e-2)");
  });

  criterion("A4", [&] {
    const Mat S = (Mat(2, 2) << 1.0, 0.3, 0.3, 0.5).finished();
    const Mat P = S.inverse();
    const Vec m = (Vec(2) << 0.4, -0.2).finished();
    auto psi = [&](const Vec& q) { return std::exp(-0.5 * (q - m).dot(P * (q - m))); };
    auto grad = [&](const Vec& q) { return Vec(-psi(q) * (P * (q - m))); };
    const Grid box(Axis{-8, 8, 256}, Axis{-8, 8, 256});
    const Grid coarse(Axis{-5, 5, 256});
    auto a = levelset_gradient_check(psi, grad, catalog::coordinate(2, 0), coarse, box);
    auto b = levelset_gradient_check(psi, grad, catalog::rotated(0.7), coarse, box);
    verdict("A4", a.max_rel_error <= 1e-2 && b.max_rel_error <= 1e-2,
            "level-set gradient error coordinate " + num(a.max_rel_error) + ", rotated " + num(b.max_rel_error) +
                " (<= 1e-2, 256^2)");
  });

  SweepResult sweep;
  bool have_sweep = false;
  try {
    sweep = sweep_epsilon(base, {0.2, 0.1, 0.05});
    have_sweep = !sweep.error;
    if (sweep.error) std::printf("sweep error: %s\n", sweep.error->c_str());
  } catch (const std::exception& e) {
    std::printf("sweep error: %s\n", e.what());
  }

  criterion("A5", [&] {
    if (!have_sweep) throw std::runtime_error("sweep unavailable");
    bool ok = true;
    std::string detail;
    for (const auto& s : sweep.scenarios) {
      if (s.eps < 0.1 - 1e-12) continue;  // criterion covers eps in {0.2, 0.1}
      const auto* plain = s.report("entropy-rate");
      const auto* strong = s.report("entropy-rate-tau");
      const double I_eff = s.checks["effective_rate_functional"]["value"].get<double>();
      ok &= plain && strong && plain->min_margin() >= -1e-3 && strong->min_margin() >= -1e-3 && std::abs(I_eff) <= 1e-6;
      detail += "eps=" + num(s.eps) + " margin " + (plain ? num(plain->min_margin()) : "missing") + ", tau=1/2 margin " +
                (strong ? num(strong->min_margin()) : "missing") + ", I(eff) " + num(I_eff) + "; ";
    }
    verdict("A5", ok, detail + "(margins >= -1e-3, I(eff) <= 1e-6)");
  });

  criterion("A6", [&] {
    if (!have_sweep) throw std::runtime_error("sweep unavailable");
    bool ok = true;
    std::string detail;
    for (const auto& s : sweep.scenarios) {
      const auto* r = s.report("relent-od");
      const double ati = find_constant(s.constants, "alpha_TI")->value, alsi = find_constant(s.constants, "alpha_LSI")->value;
      const bool consts = std::abs(find_constant(s.constants, "kappa_H")->value - 0.25) <= 1e-12 &&
                          find_constant(s.constants, "lambda_H")->value == 0.0 && std::abs(ati - 1.0 / s.eps) <= 1e-9 &&
                          std::abs(alsi - 1.0 / s.eps) <= 1e-9;
      ok &= r && r->pass() && consts;
      detail += "eps=" + num(s.eps) + " " + (r && r->pass() ? "pass" : "fail") + " margin " + (r ? num(r->min_margin()) : "-") +
                (consts ? "" : " (constants differ from analytic)") + "; ";
    }
    Config sep = base;
    sep.set("physics.c", "0");
    sep.set("theorems.list", "relent-od");
    sep.set("grid.n", "64");
    auto r0 = scenario_overdamped(parse_scenario(sep));
    const double supH = r0.summary["sup_H"].get<double>();
    ok &= supH <= 1e-6 && r0.pass();
    verdict("A6", ok, detail + "separable sup H = " + num(supH) + " (<= 1e-6)");
  });

  criterion("A7", [&] {
    if (!have_sweep) throw std::runtime_error("sweep unavailable");
    bool all_pass = true;
    for (const auto& s : sweep.scenarios) {
      const auto* r = s.report("wasser-od");
      all_pass &= r && r->pass() && r->metadata.value("w2_estimator", "") == "exact 1D quantile transport";
    }
    const double slope = sweep.fits["prefactor_W"]["slope"].get<double>();
    const bool ok = all_pass && std::abs(slope - 2.0) <= 0.01 && sweep.lhs_W_decreasing;
    verdict("A7", ok,
            std::string("verdicts ") + (all_pass ? "pass" : "fail") + ", RHS prefactor log-log slope " + num(slope) +
                " (2 +- 0.01), full RHS slope " + num(sweep.fits["rhs_W"]["slope"].get<double>()) +
                ", LHS W2^2 strictly decreasing " + (sweep.lhs_W_decreasing ? "yes" : "no"));
  });

  criterion("A8", [&] {
    Config g = Config::from_text(std::string(kOverdamped) +
                                 "[initial]\nkind = gaussian\nmean = 1 0.5\nvar = 0.25 0.05\n"
                                 "[simulate]\nn_traj = 4000\nh = 0.005\n");
    auto s = parse_scenario(g);
    s.n_out = 20;
    auto c = coupled_pair_check(s);
    double ident = 0.0;
    for (double x : c.identical.msd) ident = std::max(ident, x);
    verdict("A8", c.pass,
            "min_t (separation + 3 se - W2^2) = " + num(c.worst_gap) + " (>= 0), identical-closure separation " + num(ident));
  });

  criterion("A9", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (double c : {0.25, 0.5})
      for (double eps : {0.2, 0.1}) {
        Config cfg = Config::from_text(kLangevin);
        cfg.set("physics.c", num(c));
        cfg.set("physics.eps", num(eps));
        auto r = scenario_langevin(parse_scenario(cfg));
        const auto& pm = r.checks["particle_moments"];
        const bool rep = r.report("relent-lan")->pass() && r.report("wasser-lan")->pass();
        ok &= r.pass();
        detail += "c=" + num(c) + " eps=" + num(eps) + (rep ? " bounds pass" : " bounds FAIL") + " moments " +
                  num(std::max(pm["max_mean_rel_error"].get<double>(), pm["max_var_rel_error"].get<double>())) + "; ";
      }
    const double secs = seconds_since(t0);
    ok &= secs < 120.0;
    verdict("A9", ok, detail + "runtime " + num(secs) + " s (< 120)");
  });

  criterion("A10", [&] {
    // grids against closed forms
    const Grid g(Axis{-8, 9, 1700});
    const double w_grid = wasserstein2(gaussian1(g, 0, 1), gaussian1(g, 1, 0.5)).squared();
    const double w_ref = 1.0 + std::pow(1.0 - std::sqrt(0.5), 2);
    const double h_grid = relative_entropy(gaussian1(g, 0.5, 0.8), gaussian1(g, 0, 1)).value;
    const double h_ref =
        gaussian_divergences(Vec::Constant(1, 0.5), Mat::Constant(1, 1, 0.8), Vec::Zero(1), Mat::Identity(1, 1)).H;
    const bool grid_ok = std::abs(w_grid - w_ref) <= 1e-3 && std::abs(h_grid - h_ref) <= 1e-3;
    // ensembles, N = 1e5
    RandomStream ra(10, streams::initial, 0), rb(10, streams::initial, 1);
    Mat a(100000, 1), b(100000, 1);
    for (long i = 0; i < a.rows(); ++i) a(i, 0) = 0.5 + ra.normal(), b(i, 0) = 1.5 * rb.normal();
    const double w_ens = wasserstein2(a, b).value, w_ens_ref = std::sqrt(0.25 + 0.25);
    const Grid hg(Axis{-6, 6, 60});
    const double h_ens = relative_entropy(a, gaussian1(hg, 0, 1)).value;
    const double h_ens_ref = 0.125;
    const bool ens_ok = std::abs(w_ens - w_ens_ref) <= 0.02 * w_ens_ref && std::abs(h_ens - h_ens_ref) <= 0.02 * h_ens_ref;
    // Talagrand and LSI witnesses with alpha = 1 / lambda_max of the reference covariance
    RandomStream rs(11, streams::constants, 0);
    int held = 0;
    for (int trial = 0; trial < 100; ++trial) {
      auto spd = [&] {
        Mat B(2, 2);
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) B(i, j) = rs.normal();
        return Mat(B * B.transpose() + 0.2 * Mat::Identity(2, 2));
      };
      const Mat S1 = spd(), S2 = spd();
      const Vec m1 = rs.normal_vec(2), m2 = rs.normal_vec(2);
      const double alpha = 1.0 / max_eig(S2);
      auto d = gaussian_divergences(m1, S1, m2, S2);
      const bool tal = d.W2sq <= 2.0 / alpha * d.H * (1 + 1e-10) + 1e-12;
      const bool lsi = d.H <= gaussian_fisher(m1, S1, m2, S2) / (2 * alpha) * (1 + 1e-10) + 1e-12;
      held += tal && lsi;
    }
    verdict("A10", grid_ok && ens_ok && held == 100,
            "grid |dW2^2| " + num(std::abs(w_grid - w_ref)) + ", |dH| " + num(std::abs(h_grid - h_ref)) +
                " (<= 1e-3); ensemble W2 rel " + num(std::abs(w_ens - w_ens_ref) / w_ens_ref) + ", H rel " +
                num(std::abs(h_ens - h_ens_ref) / h_ens_ref) + " (<= 2%); inequality witnesses " +
                std::to_string(held) + "/100");
  });

  criterion("A11", [&] {
    Config small = base;
    small.set("grid.n", "48");
    small.set("time.t_end", "0.3");
    small.set("time.n_out", "10");
    const fs::path root = fs::temp_directory_path() / "cgbound_acceptance_a11";
    fs::remove_all(root);
    const auto s = parse_scenario(small);
    run_scenario(s, root / "a");
    run_scenario(s, root / "b");
    int compared = 0, same = 0;
    for (const auto& e : fs::directory_iterator(root / "a"))
      if (e.path().extension() == ".csv") {
        ++compared;
        same += slurp(e.path()) == slurp(root / "b" / e.path().filename());
      }
    auto sim = s;
    sim.n_traj = 500;
    sim.t_end = 0.2;
    auto x = simulate_scenario(sim);
    sim.jobs = 3;
    auto y = simulate_scenario(sim);
    write_trajectory_csv(root / "sim_a.csv", x.full);
    write_trajectory_csv(root / "sim_b.csv", y.full);
    ++compared;
    same += slurp(root / "sim_a.csv") == slurp(root / "sim_b.csv");
    fs::remove_all(root);
    verdict("A11", compared > 1 && same == compared,
            std::to_string(same) + "/" + std::to_string(compared) + " CSV files byte-identical across reruns");
  });

  criterion("A12", [&] {
    if (!have_main) throw std::runtime_error("A1 run unavailable");
    std::vector<double> drop(run.t.size());
    for (std::size_t i = 0; i < drop.size(); ++i) drop[i] = run.entropy.front() - run.entropy[i];
    BoundInputs in;
    in.times = run.t;
    in.lhs = run.H_hat;
    in.initial_gap = run.H_hat.front();
    in.entropy_drop = drop;
    in.beta = main_spec.beta;
    in.tolerance = main_spec.tolerance;
    for (const char* n : {"kappa_H", "lambda_H", "alpha_TI", "alpha_LSI"}) in.constants.push_back(*find_constant(main_res.constants, n));
    auto scaled = [&](double factor) {
      BoundInputs x = in;
      for (auto& c : x.constants)
        if (c.name == "alpha_TI") c.value *= factor;
      return assemble_bound(Theorem::relent_od, x);
    };
    const auto base_rep = scaled(1.0), halved = scaled(0.5);
    const bool keeps = base_rep.pass() && halved.pass() && halved.rhs.back() > base_rep.rhs.back();
    double factor = 1.0;
    bool flipped = false;
    while (factor < 1e12 && !flipped) {
      factor *= 2.0;
      flipped = !scaled(factor).pass();
    }
    verdict("A12", keeps && flipped,
            std::string("halved alpha_TI ") + (halved.pass() ? "pass" : "fail") + " with larger RHS " +
                (keeps ? "yes" : "no") + "; alpha_TI*alpha_LSI scaled by " + num(factor) + " flips verdict " +
                (flipped ? "yes" : "no"));
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
