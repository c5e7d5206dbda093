#pragma once

// Per-strategy prediction-powered least squares.
//
// For strategy m with columns X_m (labeled) and Xt_m (unlabeled), power
// tuning lambda, pseudo-labels f(X) and f(Xt), and r = n / N:
//
//   loss(theta) = |X_m theta - Y|^2 / 2n
//               + lambda * (|Xt_m theta - f(Xt)|^2 / 2N - |X_m theta - f(X)|^2 / 2n)
//
//   Psi   = (1 - lambda) X_m'X_m + r lambda Xt_m'Xt_m
//   theta = Psi^{-1} (X_m'Y + r lambda Xt_m'f(Xt) - lambda X_m'f(X))
//
// In-sample fitted values split as P Y + phi - psi with P = X_m Psi^{-1} X_m'.

#include <map>
#include <string>
#include <vector>

#include "puma/dataset.hpp"
#include "puma/strategies.hpp"

namespace puma {

struct StrategyFit {
  Vector theta_full;  // length q, zero off the model's columns
  Vector mu_hat;      // length n
  double hat_trace = 0.0;
  int strategy_index = 0;
  double sigma2_m = 0.0;  // |Y - X theta|^2 / n
};

struct PsiMatrix {
  Matrix psi;
  Eigen::LLT<Matrix> cholesky;

  double min_pivot() const { return Matrix(cholesky.matrixL()).diagonal().minCoeff(); }
};

// Pseudo-labels of one predictor on the labeled and unlabeled rows.
struct PseudoLabels {
  Vector labeled;
  Vector unlabeled;
};

using PseudoLabelSet = std::map<std::string, PseudoLabels>;

namespace detail {

inline std::string describe(const Strategy& s) {
  std::string cols;
  for (auto c : s.model.columns) cols += (cols.empty() ? "" : ",") + std::to_string(c);
  return "strategy " + std::to_string(s.m) + " (columns {" + cols + "}, lambda=" +
         format_double(s.lambda) + ", predictor '" + s.predictor_id + "')";
}

inline void check_inputs(const Strategy& s, const LabeledData& L, const UnlabeledData& U,
                         const Vector& f_lab, const Vector& f_unlab) {
  if (f_lab.size() != L.rows())
    throw Error(describe(s) + ": labeled pseudo-labels have length " +
                std::to_string(f_lab.size()) + ", expected " + std::to_string(L.rows()));
  if (f_unlab.size() != U.rows())
    throw Error(describe(s) + ": unlabeled pseudo-labels have length " +
                std::to_string(f_unlab.size()) + ", expected " + std::to_string(U.rows()));
  if (L.cols() != U.cols()) throw Error(describe(s) + ": labeled/unlabeled column mismatch");
  if (!(s.lambda >= 0.0 && s.lambda <= 1.0)) throw Error(describe(s) + ": lambda outside [0, 1]");
  for (auto c : s.model.columns)
    if (c < 0 || c >= L.cols()) throw Error(describe(s) + ": column index out of range");
}

inline double ratio(const LabeledData& L, const UnlabeledData& U) {
  return static_cast<double>(L.rows()) / static_cast<double>(U.rows());
}

}  // namespace detail

inline PsiMatrix build_psi(const Strategy& s, const Matrix& Xm, const Matrix& Xtm, double r) {
  const double lambda = s.lambda;
  Matrix psi = (1.0 - lambda) * (Xm.transpose() * Xm);
  if (lambda != 0.0) psi.noalias() += (r * lambda) * (Xtm.transpose() * Xtm);
  PsiMatrix out{psi, Eigen::LLT<Matrix>(psi)};
  if (out.cholesky.info() != Eigen::Success || !(out.cholesky.rcond() >= 1e-12) ||
      !(out.min_pivot() > 0.0))
    throw Error(detail::describe(s) + ": Psi is singular or not positive definite");
  return out;
}

inline double rectified_loss(const Strategy& s, const LabeledData& L, const UnlabeledData& U,
                             const Vector& f_lab, const Vector& f_unlab, const Vector& theta) {
  detail::check_inputs(s, L, U, f_lab, f_unlab);
  if (theta.size() != s.model.k())
    throw Error(detail::describe(s) + ": theta has length " + std::to_string(theta.size()) +
                ", expected " + std::to_string(s.model.k()));
  const double n = static_cast<double>(L.rows());
  const double N = static_cast<double>(U.rows());
  const Vector lab = select_columns(L.X, s.model) * theta;
  double loss = (lab - L.Y).squaredNorm() / (2.0 * n);
  if (s.lambda != 0.0) {
    const Vector unlab = select_columns(U.Xtilde, s.model) * theta;
    loss += s.lambda *
            ((unlab - f_unlab).squaredNorm() / (2.0 * N) - (lab - f_lab).squaredNorm() / (2.0 * n));
  }
  return loss;
}

// Right-hand side of the normal equations Psi theta = rhs.
inline Vector normal_rhs(const Strategy& s, const Matrix& Xm, const Matrix& Xtm, const Vector& Y,
                         const Vector& f_lab, const Vector& f_unlab, double r) {
  Vector rhs = Xm.transpose() * Y;
  if (s.lambda != 0.0) {
    rhs.noalias() += (r * s.lambda) * (Xtm.transpose() * f_unlab);
    rhs.noalias() -= s.lambda * (Xm.transpose() * f_lab);
  }
  return rhs;
}

inline StrategyFit fit_strategy(const Strategy& s, const LabeledData& L, const UnlabeledData& U,
                                const Vector& f_lab, const Vector& f_unlab) {
  detail::check_inputs(s, L, U, f_lab, f_unlab);
  const double r = detail::ratio(L, U);
  const Matrix Xm = select_columns(L.X, s.model);
  const Matrix Xtm = select_columns(U.Xtilde, s.model);
  const auto psi = build_psi(s, Xm, Xtm, r);

  const Vector theta = psi.cholesky.solve(normal_rhs(s, Xm, Xtm, L.Y, f_lab, f_unlab, r));

  StrategyFit fit;
  fit.strategy_index = s.m;
  fit.theta_full = Vector::Zero(L.cols());
  for (Eigen::Index j = 0; j < s.model.k(); ++j)
    fit.theta_full(s.model.columns[static_cast<std::size_t>(j)]) = theta(j);
  fit.mu_hat = Xm * theta;
  // trace(X_m Psi^{-1} X_m') = trace(Psi^{-1} X_m'X_m), k_m solves.
  fit.hat_trace = psi.cholesky.solve(Xm.transpose() * Xm).trace();
  fit.sigma2_m = (L.Y - fit.mu_hat).squaredNorm() / static_cast<double>(L.rows());
  if (!fit.mu_hat.allFinite() || !std::isfinite(fit.hat_trace))
    throw Error(detail::describe(s) + ": non-finite fit");
  return fit;
}

// The three pieces P Y, phi, psi of the in-sample fit (each length n).
struct FittedComponents {
  Vector PY;
  Vector phi;
  Vector psi;
};

inline FittedComponents fitted_components(const Strategy& s, const LabeledData& L,
                                          const UnlabeledData& U, const Vector& f_lab,
                                          const Vector& f_unlab) {
  detail::check_inputs(s, L, U, f_lab, f_unlab);
  const double r = detail::ratio(L, U);
  const Matrix Xm = select_columns(L.X, s.model);
  const Matrix Xtm = select_columns(U.Xtilde, s.model);
  const auto psi = build_psi(s, Xm, Xtm, r);
  FittedComponents out;
  out.PY = Xm * psi.cholesky.solve(Xm.transpose() * L.Y);
  out.phi = Xm * psi.cholesky.solve((r * s.lambda) * (Xtm.transpose() * f_unlab));
  out.psi = Xm * psi.cholesky.solve(s.lambda * (Xm.transpose() * f_lab));
  return out;
}

inline Vector predict(const Vector& theta_full, const Matrix& X_new) {
  if (X_new.cols() != theta_full.size())
    throw Error("predict: X has " + std::to_string(X_new.cols()) + " columns, theta has length " +
                std::to_string(theta_full.size()));
  return X_new * theta_full;
}

inline const PseudoLabels& lookup(const PseudoLabelSet& set, const std::string& id) {
  const auto it = set.find(id);
  if (it == set.end()) throw Error("no pseudo-labels for predictor '" + id + "'");
  return it->second;
}

inline std::vector<StrategyFit> fit_grid(const StrategyGrid& grid, const LabeledData& L,
                                         const UnlabeledData& U, const PseudoLabelSet& pseudo) {
  std::vector<StrategyFit> fits;
  fits.reserve(grid.strategies.size());
  for (const auto& s : grid.strategies) {
    const auto& f = lookup(pseudo, s.predictor_id);
    fits.push_back(fit_strategy(s, L, U, f.labeled, f.unlabeled));
  }
  return fits;
}

}  // namespace puma
