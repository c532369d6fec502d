#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace cgbound {

/// N particles in configuration (or phase) space; one row per particle.
struct Ensemble {
  Mat points;
  std::optional<Mat> momenta;
  double time = 0.0;
  SeedLineage lineage;
  json diagnostics = json::object();

  long size() const { return points.rows(); }
  int dim() const { return int(points.cols()); }

  void validate() const {
    require(points.rows() >= 1, ErrorKind::numerical, "ensemble is empty");
    require(points.allFinite(), ErrorKind::numerical, "ensemble has non-finite entries");
    if (momenta)
      require(momenta->rows() == points.rows() && momenta->cols() == points.cols() && momenta->allFinite(),
              ErrorKind::numerical, "momenta do not match positions");
  }
};

struct ChainConfig {
  double step = 0.1;  // initial MALA step h: y = x + h grad log pi + sqrt(2h) N(0, I)
  long burn_in = 10000;
  long thin = 1;
  int chains = 1;
  bool adapt = true;
  double target_accept = 0.57;
  int jobs = 1;
  Vec x0;  // start point; zero when empty
};

struct ChainResult {
  Mat samples;
  double acceptance = 0.0;
  double step = 0.0;
};

/// One Metropolis-adjusted Langevin chain with dual-averaging step adaptation during burn-in.
inline ChainResult mala_chain(const std::function<double(const Vec&)>& logp,
                              const std::function<Vec(const Vec&)>& grad_logp, Vec x, long n_keep,
                              const ChainConfig& cfg, RandomStream& rs) {
  const long dim = x.size();
  double h = cfg.step;
  // dual averaging (Hoffman & Gelman 2014)
  const double mu = std::log(10.0 * h), gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double hbar_stat = 0.0, log_h_avg = 0.0;
  double lp = logp(x);
  Vec g = grad_logp(x);
  auto step = [&](double hh) {
    Vec y = x + hh * g + std::sqrt(2.0 * hh) * rs.normal_vec(dim);
    double lpy = logp(y);
    Vec gy = grad_logp(y);
    // log q(x|y) - log q(y|x)
    double fwd = (y - x - hh * g).squaredNorm(), bwd = (x - y - hh * gy).squaredNorm();
    double log_a = lpy - lp + (fwd - bwd) / (4.0 * hh);
    double a = std::isfinite(log_a) ? std::min(1.0, std::exp(log_a)) : 0.0;
    if (rs.uniform() < a) {
      x = y;
      lp = lpy;
      g = gy;
    }
    return a;
  };
  for (long t = 1; t <= cfg.burn_in; ++t) {
    double a = step(h);
    if (cfg.adapt) {
      hbar_stat = (1.0 - 1.0 / (t + t0)) * hbar_stat + (cfg.target_accept - a) / (t + t0);
      double log_h = mu - std::sqrt(double(t)) / gamma * hbar_stat;
      double w = std::pow(double(t), -kappa);
      log_h_avg = w * log_h + (1.0 - w) * log_h_avg;
      h = std::exp(log_h);
    }
  }
  if (cfg.adapt && cfg.burn_in > 0) h = std::exp(log_h_avg);
  ChainResult out;
  out.samples.resize(n_keep, dim);
  double acc = 0.0;
  long n_steps = 0;
  for (long i = 0; i < n_keep; ++i) {
    for (long k = 0; k < cfg.thin; ++k, ++n_steps) acc += step(h);
    out.samples.row(i) = x.transpose();
  }
  out.acceptance = n_steps ? acc / n_steps : 0.0;
  out.step = h;
  if (out.acceptance < 0.1 || out.acceptance > 0.9)
    throw Error(ErrorKind::tuning, "MALA acceptance " + std::to_string(out.acceptance) + " outside [0.1, 0.9]");
  return out;
}

/// Runs cfg.chains independent chains (substreams 0..chains-1) and stacks their samples in order.
inline Ensemble run_chains(const std::function<double(const Vec&)>& logp, const std::function<Vec(const Vec&)>& glogp,
                           long dim, long n, const ChainConfig& cfg, SeedLineage lin) {
  require(n >= 1, ErrorKind::config, "sample count must be positive");
  const int nc = std::max(1, cfg.chains);
  std::vector<ChainResult> res(nc);
  parallel_for(std::size_t(nc), cfg.jobs, [&](std::size_t c) {
    long share = n / nc + (long(c) < n % nc ? 1 : 0);
    RandomStream rs(lin.seed, lin.stream, lin.substream * 1024u + std::uint32_t(c));
    Vec x0 = cfg.x0.size() == dim ? cfg.x0 : Vec::Zero(dim);
    res[c] = mala_chain(logp, glogp, x0, share, cfg, rs);
  });
  Ensemble e;
  e.points.resize(n, dim);
  long row = 0;
  json acc = json::array(), steps = json::array();
  for (auto& r : res) {
    e.points.middleRows(row, r.samples.rows()) = r.samples;
    row += r.samples.rows();
    acc.push_back(r.acceptance);
    steps.push_back(r.step);
  }
  e.lineage = lin;
  e.diagnostics = {{"sampler", "mala"}, {"acceptance", acc}, {"step", steps}, {"burn_in", cfg.burn_in},
                   {"thin", cfg.thin}};
  return e;
}

/// Samples from mu proportional to exp(-beta V).
inline Ensemble sample_gibbs(const GibbsMeasure& m, long n, const ChainConfig& cfg, SeedLineage lin = {0, streams::gibbs, 0}) {
  const double beta = m.beta;
  const Potential& p = m.pot;
  return run_chains([&](const Vec& q) { return -beta * p.eval(q); }, [&](const Vec& q) { return Vec(-beta * p.grad(q)); },
                    p.dim, n, cfg, lin);
}

enum class ConditionalMethod { exact_fiber, binned };

struct ConditionalSample {
  Vec z;  // coarse point (z, or (z, v) in phase space)
  Mat points;
  std::optional<Mat> momenta;
  ConditionalMethod method = ConditionalMethod::exact_fiber;
  std::optional<double> bin_width;
  double acceptance = 0.0;
};

struct ConditionalOptions {
  ChainConfig chain;
  double bin_width = 0.0;   // binned mode; 0 means 0.05 * coarse_range
  double coarse_range = 1.0;
  long gibbs_pool = 200000;  // size of the Gibbs pool filtered in binned mode
  SeedLineage lineage{0, streams::conditional, 0};
};

/// Exact-fiber chain for affine maps: runs in an orthonormal basis of ker T anchored at the
/// minimum-norm solution of T q + tau = z. A custom basis may be supplied (columns).
inline ConditionalSample sample_conditional_affine(const GibbsMeasure& m, const CoarseMap& map, const Vec& z, long n,
                                                   const ConditionalOptions& opt, std::optional<Mat> basis = {}) {
  const auto& A = *map.affine;
  const Vec qstar = A.T.transpose() * (A.T * A.T.transpose()).ldlt().solve(z - A.tau);
  const Mat B = basis ? *basis : kernel_basis(A.T);
  const double beta = m.beta;
  const Potential& p = m.pot;
  auto logp = [&](const Vec& s) { return -beta * p.eval(Vec(qstar + B * s)); };
  auto glogp = [&](const Vec& s) { return Vec(-beta * (B.transpose() * p.grad(Vec(qstar + B * s)))); };
  ChainConfig cfg = opt.chain;
  // start at the fiber minimizer of the quadratic model when available
  if (p.quadratic) {
    Mat K = *p.quadratic;
    cfg.x0 = -(B.transpose() * K * B).ldlt().solve(B.transpose() * K * qstar);
  }
  Ensemble e = run_chains(logp, glogp, B.cols(), n, cfg, opt.lineage);
  ConditionalSample cs;
  cs.z = z;
  cs.points.resize(n, map.d);
  for (long i = 0; i < n; ++i) cs.points.row(i) = (qstar + B * e.points.row(i).transpose()).transpose();
  cs.method = ConditionalMethod::exact_fiber;
  cs.acceptance = e.diagnostics["acceptance"][0].get<double>();
  return cs;
}

/// Filters a Gibbs pool by |xi(q) - z|_inf <= bin_width / 2.
inline ConditionalSample sample_conditional_binned(const Ensemble& pool, const CoarseMap& map, const Vec& z, long n,
                                                   double bin_width) {
  ConditionalSample cs;
  cs.z = z;
  cs.method = ConditionalMethod::binned;
  cs.bin_width = bin_width;
  std::vector<long> keep;
  for (long i = 0; i < pool.size() && long(keep.size()) < n; ++i)
    if ((map.xi(pool.points.row(i).transpose()) - z).cwiseAbs().maxCoeff() <= bin_width / 2) keep.push_back(i);
  if (keep.size() < 100)
    throw Error(ErrorKind::occupancy, "binned conditional sample has " + std::to_string(keep.size()) +
                                          " points (< 100) at bin width " + std::to_string(bin_width));
  cs.points.resize(long(keep.size()), map.d);
  for (std::size_t i = 0; i < keep.size(); ++i) cs.points.row(long(i)) = pool.points.row(keep[i]);
  return cs;
}

/// Samples the conditional measure on the level set {xi = z}.
inline ConditionalSample sample_conditional(const GibbsMeasure& m, const CoarseMap& map, const Vec& z, long n,
                                            const ConditionalOptions& opt) {
  if (map.affine) return sample_conditional_affine(m, map, z, n, opt);
  double w = opt.bin_width > 0.0 ? opt.bin_width : 0.05 * opt.coarse_range;
  ChainConfig cfg = opt.chain;
  Ensemble pool = sample_gibbs(m, opt.gibbs_pool, cfg, opt.lineage);
  return sample_conditional_binned(pool, map, z, n, w);
}

/// Phase-space conditional on {xi(q) = z, T p = v}: positions from the fiber chain, momenta
/// exact (Gaussian factor exp(-beta |p|^2 / 2) restricted to T p = v).
inline ConditionalSample sample_conditional_phase(const GibbsMeasure& m, const CoarseMap& map, const Vec& z,
                                                  const Vec& v, long n, const ConditionalOptions& opt) {
  PhaseMap pm(map);
  ConditionalSample cs = sample_conditional_affine(m, map, z, n, opt);
  const auto& A = *map.affine;
  const Vec pstar = A.T.transpose() * (A.T * A.T.transpose()).ldlt().solve(v);
  const Mat B = kernel_basis(A.T);
  RandomStream rs(opt.lineage.seed, opt.lineage.stream, opt.lineage.substream * 1024u + 777u);
  Mat P(n, map.d);
  for (long i = 0; i < n; ++i) P.row(i) = (pstar + B * rs.normal_vec(B.cols()) / std::sqrt(m.beta)).transpose();
  cs.momenta = P;
  cs.z.resize(2 * map.k);
  cs.z << z, v;
  return cs;
}

/// Ensemble as CSV (q1..qd[, p1..pd]) plus a JSON sidecar (path + ".json").
inline void write_ensemble(const std::filesystem::path& path, const Ensemble& e) {
  CsvWriter w(path);
  std::vector<std::string> cols;
  for (int i = 0; i < e.dim(); ++i) cols.push_back("q" + std::to_string(i + 1));
  if (e.momenta)
    for (int i = 0; i < e.dim(); ++i) cols.push_back("p" + std::to_string(i + 1));
  w.header(cols);
  std::vector<double> row;
  for (long r = 0; r < e.size(); ++r) {
    row.clear();
    for (int i = 0; i < e.dim(); ++i) row.push_back(e.points(r, i));
    if (e.momenta)
      for (int i = 0; i < e.dim(); ++i) row.push_back((*e.momenta)(r, i));
    w.row(row);
  }
  json side = {{"n", e.size()},
               {"dim", e.dim()},
               {"time", e.time},
               {"phase_space", bool(e.momenta)},
               {"seed_lineage", {{"seed", e.lineage.seed}, {"stream", e.lineage.stream}, {"substream", e.lineage.substream}}},
               {"diagnostics", e.diagnostics}};
  write_json(path.string() + ".json", side);
}

}  // namespace cgbound
