#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "puma/dataset.hpp"

namespace puma {

// Ordered column indices into the q observed covariates.
struct CandidateModel {
  std::vector<Eigen::Index> columns;

  Eigen::Index k() const { return static_cast<Eigen::Index>(columns.size()); }
  bool operator==(const CandidateModel&) const = default;
};

struct Strategy {
  CandidateModel model;
  double lambda = 0.0;
  std::string predictor_id;
  int m = 0;  // 0-based position in the grid
};

// Enumeration is model-major, then lambda, then predictor:
//   m = (model * S2 + lambda) * S3 + predictor.
struct StrategyGrid {
  std::vector<Strategy> strategies;
  int S1 = 0;
  int S2 = 0;
  int S3 = 0;

  int M() const { return static_cast<int>(strategies.size()); }
  const Strategy& operator[](int m) const { return strategies[static_cast<std::size_t>(m)]; }

  Eigen::Index max_k() const {
    Eigen::Index k = 0;
    for (const auto& s : strategies) k = std::max(k, s.model.k());
    return k;
  }

  // First strategy model with the largest k (ties: earliest in the grid).
  const CandidateModel& largest_model() const {
    const Strategy* best = &strategies.front();
    for (const auto& s : strategies)
      if (s.model.k() > best->model.k()) best = &s;
    return best->model;
  }
};

enum class PValueMode { Joint, Univariate };

struct PValueOptions {
  PValueMode mode = PValueMode::Joint;
  bool intercept = false;  // fit includes an intercept that is not itself ranked
};

// Columns of X restricted to `model`.
inline Matrix select_columns(const Matrix& X, const CandidateModel& model) {
  Matrix out(X.rows(), model.k());
  for (Eigen::Index j = 0; j < model.k(); ++j) out.col(j) = X.col(model.columns[static_cast<std::size_t>(j)]);
  return out;
}

namespace detail {

inline double two_sided_t_pvalue(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

// t statistics of every coefficient in an OLS fit of y on Z.
inline Vector ols_t_statistics(const Matrix& Z, const Vector& y, double& df) {
  const auto n = Z.rows();
  const auto k = Z.cols();
  if (n <= k)
    throw Error("coefficient_pvalues: need n > number of coefficients (n=" + std::to_string(n) +
                ", k=" + std::to_string(k) + ")");
  const Matrix gram = Z.transpose() * Z;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success || !(llt.rcond() >= 1e-12))
    throw Error("coefficient_pvalues: singular design (Gram matrix not positive definite)");
  const Vector beta = llt.solve(Z.transpose() * y);
  df = static_cast<double>(n - k);
  const double s2 = (y - Z * beta).squaredNorm() / df;
  const Matrix inv = llt.solve(Matrix::Identity(k, k));
  Vector t(k);
  for (Eigen::Index j = 0; j < k; ++j) t(j) = beta(j) / std::sqrt(s2 * inv(j, j));
  return t;
}

}  // namespace detail

// Two-sided t-test p-value for each of the q observed covariates.
inline Vector coefficient_pvalues(const LabeledData& train, const PValueOptions& opt = {}) {
  validate(train);
  const auto n = train.rows();
  const auto q = train.cols();
  Vector p(q);

  auto design = [&](const Matrix& cols) {
    if (!opt.intercept) return Matrix(cols);
    Matrix Z(n, cols.cols() + 1);
    Z.col(0).setOnes();
    Z.rightCols(cols.cols()) = cols;
    return Z;
  };
  const Eigen::Index offset = opt.intercept ? 1 : 0;

  if (opt.mode == PValueMode::Joint) {
    double df = 0.0;
    const Vector t = detail::ols_t_statistics(design(train.X), train.Y, df);
    for (Eigen::Index j = 0; j < q; ++j) p(j) = detail::two_sided_t_pvalue(t(j + offset), df);
  } else {
    for (Eigen::Index j = 0; j < q; ++j) {
      double df = 0.0;
      const Vector t = detail::ols_t_statistics(design(train.X.col(j)), train.Y, df);
      p(j) = detail::two_sided_t_pvalue(t(offset), df);
    }
  }
  return p;
}

// Model j holds the sizes[j] covariates with the smallest p-values, listed in
// ascending p-value order (ties: lower index first).
inline std::vector<CandidateModel> build_nested_models(const Vector& pvalues,
                                                       const std::vector<int>& sizes) {
  if (sizes.empty()) throw Error("build_nested_models: sizes must not be empty");
  const auto q = pvalues.size();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw Error("build_nested_models: sizes must be >= 1");
    if (sizes[i] > q)
      throw Error("build_nested_models: size " + std::to_string(sizes[i]) + " exceeds q=" +
                  std::to_string(q));
    if (i > 0 && sizes[i] <= sizes[i - 1])
      throw Error("build_nested_models: sizes must be strictly increasing");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(q));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return pvalues(a) < pvalues(b); });

  std::vector<CandidateModel> models;
  for (int s : sizes) models.push_back(CandidateModel{{order.begin(), order.begin() + s}});
  return models;
}

// Shifts every index by one and prepends column 0 (the intercept column).
inline std::vector<CandidateModel> with_intercept_column(std::vector<CandidateModel> models) {
  for (auto& m : models) {
    for (auto& c : m.columns) ++c;
    m.columns.insert(m.columns.begin(), 0);
  }
  return models;
}

inline std::vector<double> default_lambda_grid() { return {0.0, 0.25, 0.5, 0.75, 1.0}; }

inline StrategyGrid enumerate_strategies(const std::vector<CandidateModel>& models,
                                         const std::vector<double>& lambdas,
                                         const std::vector<std::string>& predictor_ids) {
  if (models.empty()) throw Error("enumerate_strategies: no candidate models");
  if (lambdas.empty()) throw Error("enumerate_strategies: empty lambda grid");
  if (predictor_ids.empty()) throw Error("enumerate_strategies: no predictors");
  for (double l : lambdas)
    if (!(l >= 0.0 && l <= 1.0))
      throw Error("enumerate_strategies: lambda " + format_double(l) + " outside [0, 1]");
  if (std::set<double>(lambdas.begin(), lambdas.end()).size() != lambdas.size())
    throw Error("enumerate_strategies: lambda values must be distinct");
  if (std::set<std::string>(predictor_ids.begin(), predictor_ids.end()).size() !=
      predictor_ids.size())
    throw Error("enumerate_strategies: predictor ids must be distinct");
  for (const auto& m : models) {
    if (m.columns.empty()) throw Error("enumerate_strategies: empty candidate model");
    if (std::set<Eigen::Index>(m.columns.begin(), m.columns.end()).size() != m.columns.size())
      throw Error("enumerate_strategies: duplicate column in candidate model");
  }

  StrategyGrid grid;
  grid.S1 = static_cast<int>(models.size());
  grid.S2 = static_cast<int>(lambdas.size());
  grid.S3 = static_cast<int>(predictor_ids.size());
  int m = 0;
  for (const auto& model : models)
    for (double l : lambdas)
      for (const auto& id : predictor_ids) grid.strategies.push_back(Strategy{model, l, id, m++});
  return grid;
}

inline void check_model_columns(const StrategyGrid& grid, Eigen::Index q) {
  for (const auto& s : grid.strategies)
    for (auto c : s.model.columns)
      if (c < 0 || c >= q)
        throw Error("strategy " + std::to_string(s.m) + ": column index " + std::to_string(c) +
                    " outside [0, " + std::to_string(q) + ")");
}

}  // namespace puma
