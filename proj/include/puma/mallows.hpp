#pragma once

// Mallows-type weight choice over the unit simplex.
//
//   C(w) = |Y - D w|^2 + 2 sigma2 t'w
//
// where column m of D is the in-sample fit of strategy m and t holds the hat
// traces. C is a convex quadratic in w; the minimizer is found by accelerated
// projected gradient with exact Euclidean projection onto the simplex.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "puma/ppi_fit.hpp"

namespace puma {

struct CriterionData {
  Matrix D;  // n x M
  Vector t;  // M hat traces
  Vector Y;  // n
  double sigma2 = 1.0;

  Eigen::Index M() const { return D.cols(); }
};

struct WeightVector {
  Vector w;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct AveragedModel {
  WeightVector weights;
  Vector theta_avg;      // length q
  StrategyGrid grid;
  double sigma2 = 0.0;
  std::vector<StrategyFit> fits;
  Vector in_sample_fit;  // D w
};

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 100000;
};

inline void validate(const CriterionData& c) {
  if (c.D.cols() < 1) throw Error("criterion: no strategies");
  if (c.D.rows() != c.Y.size()) throw Error("criterion: D rows do not match Y length");
  if (c.t.size() != c.D.cols()) throw Error("criterion: t length does not match D columns");
  if (!c.D.allFinite()) throw Error("criterion: D has non-finite entries");
  if (!c.Y.allFinite() || !c.t.allFinite()) throw Error("criterion: non-finite Y or t");
  if ((c.t.array() < 0.0).any()) throw Error("criterion: negative hat trace");
  if (!(c.sigma2 >= 0.0) || !std::isfinite(c.sigma2))
    throw Error("criterion: sigma2 must be finite and non-negative");
}

inline CriterionData build_criterion(const std::vector<StrategyFit>& fits, const Vector& Y,
                                     double sigma2) {
  if (fits.empty()) throw Error("build_criterion: no fits");
  CriterionData c;
  c.D.resize(Y.size(), static_cast<Eigen::Index>(fits.size()));
  c.t.resize(static_cast<Eigen::Index>(fits.size()));
  for (std::size_t m = 0; m < fits.size(); ++m) {
    if (fits[m].mu_hat.size() != Y.size()) throw Error("build_criterion: fit length mismatch");
    c.D.col(static_cast<Eigen::Index>(m)) = fits[m].mu_hat;
    c.t(static_cast<Eigen::Index>(m)) = fits[m].hat_trace;
  }
  c.Y = Y;
  c.sigma2 = sigma2;
  validate(c);
  return c;
}

// Unbiased residual variance of the OLS fit on `largest_model` (lambda = 0).
inline double estimate_sigma2(const LabeledData& L, const CandidateModel& largest_model) {
  const auto n = L.rows();
  const auto k = largest_model.k();
  if (n <= k)
    throw Error("estimate_sigma2: need n > k (n=" + std::to_string(n) + ", k=" +
                std::to_string(k) + ")");
  const Matrix Xm = select_columns(L.X, largest_model);
  Eigen::LLT<Matrix> llt(Xm.transpose() * Xm);
  if (llt.info() != Eigen::Success || !(llt.rcond() >= 1e-12))
    throw Error("estimate_sigma2: Gram matrix of the largest model is singular");
  const Vector beta = llt.solve(Xm.transpose() * L.Y);
  return (L.Y - Xm * beta).squaredNorm() / static_cast<double>(n - k);
}

inline bool on_simplex(const Vector& w, double tol) {
  return w.size() > 0 && (w.array() >= -tol).all() && std::fabs(w.sum() - 1.0) <= tol;
}

inline double criterion_value(const CriterionData& c, const Vector& w) {
  if (w.size() != c.M()) throw Error("criterion_value: weight length mismatch");
  if (!on_simplex(w, 1e-9)) throw Error("criterion_value: weights are not on the simplex");
  return (c.Y - c.D * w).squaredNorm() + 2.0 * c.sigma2 * c.t.dot(w);
}

// Sort-and-threshold Euclidean projection onto {w >= 0, sum w = 1}.
inline Vector project_simplex(const Vector& v) {
  if (v.size() == 0) throw Error("project_simplex: empty vector");
  if (!v.allFinite()) throw Error("project_simplex: non-finite input");
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double cand = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - cand > 0.0) tau = cand;
  }
  return (v.array() - tau).max(0.0).matrix();
}

inline WeightVector solve_weights(const CriterionData& c, const SolverOptions& opt = {}) {
  validate(c);
  if (!(opt.tol > 0.0)) throw Error("solve_weights: tol must be positive");
  if (opt.max_iter < 0) throw Error("solve_weights: max_iter must be non-negative");

  const auto M = c.M();
  WeightVector out;
  if (M == 1) {
    out.w = Vector::Ones(1);
    out.objective = criterion_value(c, out.w);
    out.converged = true;
    return out;
  }

  // Quadratic in Gram form: f(w) = Y'Y - 2 b'w + w'Hw + 2 sigma2 t'w.
  const Matrix H = c.D.transpose() * c.D;
  const Vector b = c.D.transpose() * c.Y;
  const Vector lin = c.sigma2 * c.t - b;
  const double yy = c.Y.squaredNorm();
  auto objective = [&](const Vector& w) { return yy + 2.0 * lin.dot(w) + w.dot(H * w); };
  auto gradient = [&](const Vector& w) -> Vector { return 2.0 * (H * w + lin); };
  // Frank-Wolfe gap: an upper bound on f(w) - min f.
  auto gap = [](const Vector& w, const Vector& g) { return g.dot(w) - g.minCoeff(); };

  Eigen::SelfAdjointEigenSolver<Matrix> eig(H, Eigen::EigenvaluesOnly);
  double lip = 2.0 * std::max(eig.eigenvalues().maxCoeff(), 0.0);
  if (!(lip > 0.0)) lip = 1.0;

  Vector w = Vector::Constant(M, 1.0 / static_cast<double>(M));
  Vector y = w;
  double tk = 1.0;
  Vector best = w;
  double f_best = objective(w);

  Vector g = gradient(w);
  if (gap(w, g) <= opt.tol * std::max(1.0, std::fabs(f_best))) {
    out.converged = true;
  }

  int it = 0;
  while (!out.converged && it < opt.max_iter) {
    ++it;
    const Vector w_new = project_simplex(y - gradient(y) / lip);
    const double f_new = objective(w_new);
    if (f_new < f_best) {
      f_best = f_new;
      best = w_new;
    }
    g = gradient(w_new);
    if (gap(w_new, g) <= opt.tol * std::max(1.0, std::fabs(f_new))) {
      best = w_new;
      out.converged = true;
      break;
    }
    // Adaptive restart when momentum points uphill.
    if ((y - w_new).dot(w_new - w) > 0.0) {
      tk = 1.0;
      y = w_new;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      y = w_new + ((tk - 1.0) / t_next) * (w_new - w);
      tk = t_next;
    }
    w = w_new;
  }

  out.w = best;
  out.iterations = it;
  out.objective = criterion_value(c, out.w);
  return out;
}

inline AveragedModel average(const StrategyGrid& grid, const std::vector<StrategyFit>& fits,
                             const WeightVector& w, double sigma2) {
  if (fits.empty()) throw Error("average: no fits");
  if (static_cast<Eigen::Index>(fits.size()) != w.w.size())
    throw Error("average: " + std::to_string(fits.size()) + " fits but " +
                std::to_string(w.w.size()) + " weights");
  if (grid.M() != static_cast<int>(fits.size())) throw Error("average: grid size mismatch");
  AveragedModel out;
  out.weights = w;
  out.grid = grid;
  out.sigma2 = sigma2;
  out.fits = fits;
  out.theta_avg = Vector::Zero(fits.front().theta_full.size());
  out.in_sample_fit = Vector::Zero(fits.front().mu_hat.size());
  for (std::size_t m = 0; m < fits.size(); ++m) {
    const double wm = w.w(static_cast<Eigen::Index>(m));
    out.theta_avg += wm * fits[m].theta_full;
    out.in_sample_fit += wm * fits[m].mu_hat;
  }
  return out;
}

// Weights by minimizing the feasible criterion, then the averaged model.
inline AveragedModel fit_averaged_model(const StrategyGrid& grid,
                                        const std::vector<StrategyFit>& fits, const Vector& Y,
                                        double sigma2, const SolverOptions& opt = {}) {
  const auto c = build_criterion(fits, Y, sigma2);
  return average(grid, fits, solve_weights(c, opt), sigma2);
}

}  // namespace puma
