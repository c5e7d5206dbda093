#pragma once

// Monte Carlo harness: Gaussian AR(1)-correlated covariates, a linear mean in
// all p covariates of which only the first q are observed, noisy-oracle
// pseudo-labels, and out-of-sample MSE against the true mean.
//
// Seed schedule: replication r runs on splitmix64(splitmix64(seed) ^ r); the
// inner hash keeps nearby base seeds from sharing replications. Every data block
// inside a replication draws from its own derived substream, so replications
// can be computed in any order or in parallel.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "puma/baselines.hpp"
#include "puma/predictors.hpp"

namespace puma {

enum class NoiseCase { I, II };

// How the R^2 target is met.
enum class R2Mode { ScaleTheta, ScaleSigma, SignalFree };

struct OracleNoise {
  std::string id;
  double mu_eps = 0.0;
  double sigma_eps = 0.0;
};

inline std::vector<OracleNoise> case_oracles(NoiseCase c) {
  if (c == NoiseCase::I) return {{"ML1", 1.0, 0.75}, {"ML2", -0.5, 0.5}};
  return {{"ML1", 0.5, 0.25}, {"ML2", -0.5, 0.5}};
}

struct DgpConfig {
  int p = 6;
  double rho = 0.5;
  double alpha = 0.1;
  std::vector<double> theta_base;  // empty: (1, -1.1, 0.2, -0.025, 0, alpha)
  double sigma_eps = 1.0;          // label noise standard deviation
  int n = 50;
  int N = 500;
  int n_test = 0;  // 0: same as n
  int q = 0;       // 0: p - 1
  double r2 = 0.5;
  R2Mode r2_mode = R2Mode::ScaleTheta;
  NoiseCase noise_case = NoiseCase::I;
  std::uint64_t seed = 20240601;

  std::vector<int> sizes;  // empty: 1..q
  std::vector<double> lambdas = default_lambda_grid();
  PValueOptions pvalues{};
  SolverOptions solver{};
  std::vector<std::string> methods;  // empty: full panel
  int ppi_lambda_steps = 100;

  int observed() const { return q > 0 ? q : p - 1; }
  int test_rows() const { return n_test > 0 ? n_test : n; }

  Vector base_theta() const {
    if (!theta_base.empty())
      return Eigen::Map<const Vector>(theta_base.data(), static_cast<Eigen::Index>(theta_base.size()));
    Vector t(6);
    t << 1.0, -1.1, 0.2, -0.025, 0.0, alpha;
    return t;
  }

  std::vector<int> resolved_sizes() const {
    if (!sizes.empty()) return sizes;
    std::vector<int> out;
    for (int k = 1; k <= observed(); ++k) out.push_back(k);
    return out;
  }
};

inline void validate(const DgpConfig& cfg) {
  if (cfg.p < 1) throw ConfigError("dgp.p must be >= 1");
  if (!(std::fabs(cfg.rho) < 1.0)) throw ConfigError("dgp.rho must satisfy |rho| < 1");
  if (cfg.base_theta().size() != cfg.p)
    throw ConfigError("dgp.theta must have length p=" + std::to_string(cfg.p));
  if (cfg.observed() < 1 || cfg.observed() > cfg.p) throw ConfigError("dgp.q must lie in [1, p]");
  if (!(cfg.r2 > 0.0 && cfg.r2 < 1.0)) throw ConfigError("dgp.r2 must lie in (0, 1)");
  if (!(cfg.sigma_eps > 0.0)) throw ConfigError("dgp.sigma_eps must be positive");
  if (cfg.n < 2 || cfg.N < 1 || cfg.test_rows() < 1) throw ConfigError("dgp sample sizes too small");
  for (double l : cfg.lambdas)
    if (!(l >= 0.0 && l <= 1.0))
      throw ConfigError("grid.lambdas: value " + format_double(l) + " outside [0, 1]");
  if (!(cfg.solver.tol > 0.0)) throw ConfigError("solver.tol must be positive");
  if (cfg.solver.max_iter < 1) throw ConfigError("solver.max_iter must be >= 1");
}

inline Matrix ar1_covariance(int p, double rho) {
  Matrix S(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) S(i, j) = std::pow(rho, std::abs(i - j));
  return S;
}

// rows x p draws of N(0, Sigma) as standard normals times the Cholesky factor.
inline Matrix gen_design(const DgpConfig& cfg, Eigen::Index rows, std::uint64_t stream_seed) {
  if (rows < 1) throw Error("gen_design: rows must be >= 1");
  const Matrix Sigma = ar1_covariance(cfg.p, cfg.rho);
  Eigen::LLT<Matrix> llt(Sigma);
  if (llt.info() != Eigen::Success) throw Error("gen_design: covariance is not positive definite");
  CounterRng rng(stream_seed);
  Matrix Z(rows, cfg.p);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cfg.p; ++j) Z(i, j) = rng.normal();
  return Z * Matrix(llt.matrixL()).transpose();
}

inline Vector gen_normals(Eigen::Index count, std::uint64_t stream_seed) {
  CounterRng rng(stream_seed);
  Vector v(count);
  for (Eigen::Index i = 0; i < count; ++i) v(i) = rng.normal();
  return v;
}

// c * theta with Var(x'c theta) / (Var(x'c theta) + sigma2) = r2.
inline Vector scale_theta_for_r2(const Vector& theta, const Matrix& Sigma, double r2, double sigma2) {
  if (!(r2 > 0.0 && r2 < 1.0)) throw Error("scale_theta_for_r2: r2 must lie in (0, 1)");
  const double signal = theta.dot(Sigma * theta);
  if (!(signal > 0.0)) throw Error("scale_theta_for_r2: theta carries no signal");
  return std::sqrt(r2 * sigma2 / ((1.0 - r2) * signal)) * theta;
}

// True coefficients and label noise variance implied by the R^2 mode.
inline std::pair<Vector, double> resolve_signal(const DgpConfig& cfg) {
  const Matrix Sigma = ar1_covariance(cfg.p, cfg.rho);
  const double s2 = cfg.sigma_eps * cfg.sigma_eps;
  switch (cfg.r2_mode) {
    case R2Mode::ScaleTheta: return {scale_theta_for_r2(cfg.base_theta(), Sigma, cfg.r2, s2), s2};
    case R2Mode::ScaleSigma: {
      const Vector t = cfg.base_theta();
      const double signal = t.dot(Sigma * t);
      if (!(signal > 0.0)) throw Error("scale_sigma: theta carries no signal");
      return {t, signal * (1.0 - cfg.r2) / cfg.r2};
    }
    case R2Mode::SignalFree: return {Vector::Zero(cfg.p), s2};
  }
  return {cfg.base_theta(), s2};
}

struct MethodScore {
  std::string method;
  double omse = 0.0;
  double in_sample_mse = 0.0;
};

struct ReplicationResult {
  int rep_index = 0;
  std::vector<MethodScore> scores;  // panel order
  Vector weights_puma;
  Vector theta_puma;
  double theta_error_puma = 0.0;  // |theta_hat - theta| over the observed coordinates
  std::uint64_t seed_used = 0;

  double omse(const std::string& method) const {
    for (const auto& s : scores)
      if (s.method == method) return s.omse;
    throw Error("replication " + std::to_string(rep_index) + " has no method '" + method + "'");
  }
};

// Everything one replication draws, exposed for inspection and testing.
struct ReplicationData {
  LabeledData labeled;
  UnlabeledData unlabeled;
  Matrix X_test;       // observed columns only
  Vector mu_labeled;   // true mean on labeled rows
  Vector mu_test;      // true mean on test rows
  Vector theta_true;   // length p
  PseudoLabelSet pseudo;
  std::uint64_t seed = 0;
};

inline std::uint64_t replication_seed(std::uint64_t base_seed, int rep) {
  return splitmix64(splitmix64(base_seed) ^ static_cast<std::uint64_t>(rep));
}

namespace stream {
inline constexpr std::uint64_t kLabeledX = 1, kLabeledNoise = 2, kUnlabeledX = 3, kTestX = 4,
                               kOracleBase = 16;
}

inline ReplicationData draw_replication(const DgpConfig& cfg, int rep) {
  validate(cfg);
  ReplicationData d;
  d.seed = replication_seed(cfg.seed, rep);
  const auto [theta, sigma2] = resolve_signal(cfg);
  d.theta_true = theta;
  const int q = cfg.observed();

  const Matrix Xs = gen_design(cfg, cfg.n, derive_seed(d.seed, stream::kLabeledX));
  const Matrix Xts = gen_design(cfg, cfg.N, derive_seed(d.seed, stream::kUnlabeledX));
  const Matrix Xtest = gen_design(cfg, cfg.test_rows(), derive_seed(d.seed, stream::kTestX));
  const Vector eps = std::sqrt(sigma2) * gen_normals(cfg.n, derive_seed(d.seed, stream::kLabeledNoise));

  std::vector<std::string> names;
  for (int j = 0; j < q; ++j) names.push_back("x" + std::to_string(j + 1));
  d.mu_labeled = Xs * theta;
  d.mu_test = Xtest * theta;
  d.labeled = LabeledData{Xs.leftCols(q), d.mu_labeled + eps, names};
  d.unlabeled = UnlabeledData{Xts.leftCols(q), names};
  d.X_test = Xtest.leftCols(q);

  const auto oracles = case_oracles(cfg.noise_case);
  for (std::size_t k = 0; k < oracles.size(); ++k) {
    const auto& o = oracles[k];
    const auto pred = make_noisy_oracle(
        o.id, NoisyOracleParams{theta, o.mu_eps, o.sigma_eps,
                                derive_seed(d.seed, stream::kOracleBase + k)});
    d.pseudo[o.id] = PseudoLabels{predict_batch(pred, Xs), predict_batch(pred, Xts)};
  }
  return d;
}

inline StrategyGrid simulation_grid(const DgpConfig& cfg, const LabeledData& L) {
  const auto pv = coefficient_pvalues(L, cfg.pvalues);
  std::vector<std::string> ids;
  for (const auto& o : case_oracles(cfg.noise_case)) ids.push_back(o.id);
  return enumerate_strategies(build_nested_models(pv, cfg.resolved_sizes()), cfg.lambdas, ids);
}

inline std::vector<MethodId> resolve_methods(const std::vector<std::string>& names,
                                             const StrategyGrid& grid) {
  if (names.empty()) return default_methods(grid);
  const auto ids = grid_predictors(grid);
  std::vector<MethodId> out;
  bool has_puma = false;
  for (const auto& name : names)
    for (auto& m : parse_method(name, ids)) {
      has_puma = has_puma || m.kind == MethodKind::PUMA;
      out.push_back(std::move(m));
    }
  if (!has_puma) out.insert(out.begin(), MethodId{MethodKind::PUMA, ""});
  return out;
}

inline ReplicationResult run_replication(const DgpConfig& cfg, int rep) {
  try {
    const auto d = draw_replication(cfg, rep);
    const auto grid = simulation_grid(cfg, d.labeled);
    const auto fits = fit_grid(grid, d.labeled, d.unlabeled, d.pseudo);
    const double sigma2 = estimate_sigma2(d.labeled, grid.largest_model());
    const PanelInputs in{grid, fits, d.labeled, d.unlabeled, d.pseudo, sigma2, cfg.solver,
                         dense_lambda_grid(cfg.ppi_lambda_steps)};
    const auto results = run_method_panel(in, resolve_methods(cfg.methods, grid), &d.X_test);

    ReplicationResult out;
    out.rep_index = rep;
    out.seed_used = d.seed;
    const Vector theta_obs = d.theta_true.head(cfg.observed());
    for (const auto& r : results) {
      const double omse = (r.predictions - d.mu_test).squaredNorm() / static_cast<double>(d.mu_test.size());
      const double ins = (d.labeled.X * r.theta - d.mu_labeled).squaredNorm() /
                         static_cast<double>(d.mu_labeled.size());
      out.scores.push_back({r.id.name(), omse, ins});
      if (r.id.kind == MethodKind::PUMA) {
        out.weights_puma = r.weights;
        out.theta_puma = r.theta;
        out.theta_error_puma = (r.theta - theta_obs).norm();
      }
    }
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("replication " + std::to_string(rep) + ": " + e.what());
  }
}

// Runs fn(i) for i in [0, count) on `threads` workers; the first exception is rethrown.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::vector<ReplicationResult> run_replications(const DgpConfig& cfg, int reps, int threads = 1) {
  std::vector<ReplicationResult> out(static_cast<std::size_t>(reps));
  parallel_for(reps, threads, [&](int r) { out[static_cast<std::size_t>(r)] = run_replication(cfg, r); });
  return out;
}

struct SummaryRow {
  std::string method;
  double mean_omse = 0.0;
  double se_omse = 0.0;
  double relative_omse = 0.0;        // ratio of means
  double mean_relative_per_rep = 0.0;  // mean of per-replication ratios
};

inline std::vector<SummaryRow> aggregate(const std::vector<ReplicationResult>& results,
                                         const std::string& reference = "PUMA") {
  if (results.empty()) throw Error("aggregate: no replications");
  const double reps = static_cast<double>(results.size());

  auto mean_of = [&](const std::string& method) {
    double s = 0.0;
    for (const auto& r : results) s += r.omse(method);
    return s / reps;
  };
  const double ref_mean = mean_of(reference);
  if (!(ref_mean > 0.0)) throw Error("aggregate: reference method '" + reference + "' has zero mean OMSE");

  std::vector<SummaryRow> rows;
  for (const auto& score : results.front().scores) {
    SummaryRow row;
    row.method = score.method;
    row.mean_omse = mean_of(score.method);
    double ss = 0.0;
    double ratio_sum = 0.0;
    for (const auto& r : results) {
      const double v = r.omse(score.method);
      ss += (v - row.mean_omse) * (v - row.mean_omse);
      const double ref = r.omse(reference);
      ratio_sum += ref > 0.0 ? v / ref : std::numeric_limits<double>::quiet_NaN();
    }
    row.se_omse = results.size() > 1 ? std::sqrt(ss / (reps - 1.0) / reps) : 0.0;
    row.relative_omse = row.mean_omse / ref_mean;
    row.mean_relative_per_rep = ratio_sum / reps;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace puma
