#pragma once

// Pseudo-label generators. All predictors are immutable once built and
// predict_batch is a pure function of (predictor, X).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "puma/dataset.hpp"
#include "puma/rng.hpp"

namespace puma {

enum class PredictorKind { NoisyOracle, KNN, BoostedStumps };

// f(x) = x'theta + e(x), e(x) ~ N(mu_eps, sigma_eps^2) drawn from hash(seed, x).
struct NoisyOracleParams {
  Vector theta;
  double mu_eps = 0.0;
  double sigma_eps = 0.0;
  std::uint64_t seed = 0;
};

struct KnnParams {
  int k = 1;
  Matrix X;
  Vector Y;
};

struct Stump {
  Eigen::Index feature = 0;
  double threshold = 0.0;
  double left = 0.0;   // x[feature] <= threshold
  double right = 0.0;
};

struct BoostedStumpsParams {
  int rounds = 0;
  double learn_rate = 1.0;
  double base = 0.0;
  std::vector<Stump> stumps;  // already scaled by learn_rate
  bool degenerate = false;    // stopped early because no split exists
};

struct Predictor {
  PredictorKind kind = PredictorKind::NoisyOracle;
  std::variant<NoisyOracleParams, KnnParams, BoostedStumpsParams> params;
  std::string id;
  Eigen::Index input_dim = 0;

  bool warning() const {
    const auto* b = std::get_if<BoostedStumpsParams>(&params);
    return b && b->degenerate;
  }
};

inline Predictor make_noisy_oracle(std::string id, NoisyOracleParams p) {
  if (!(p.sigma_eps >= 0.0) || !std::isfinite(p.sigma_eps))
    throw Error("noisy oracle '" + id + "': sigma_eps must be finite and >= 0");
  if (!std::isfinite(p.mu_eps)) throw Error("noisy oracle '" + id + "': mu_eps must be finite");
  if (p.theta.size() < 1 || !p.theta.allFinite())
    throw Error("noisy oracle '" + id + "': theta must be a finite non-empty vector");
  const auto dim = p.theta.size();
  return Predictor{PredictorKind::NoisyOracle, std::move(p), std::move(id), dim};
}

inline Predictor train_knn(const LabeledData& train, int k, std::string id = "knn") {
  validate(train);
  if (k < 1 || k > train.rows())
    throw Error("train_knn: k=" + std::to_string(k) + " outside [1, " +
                std::to_string(train.rows()) + "]");
  const auto dim = train.cols();
  return Predictor{PredictorKind::KNN, KnnParams{k, train.X, train.Y}, std::move(id), dim};
}

namespace detail {

struct SplitChoice {
  double gain = 0.0;
  Stump stump;
  bool found = false;
};

// Best squared-error stump for residuals r, using per-feature presorted order.
inline SplitChoice best_stump(const Matrix& X, const Vector& r,
                              const std::vector<std::vector<Eigen::Index>>& order) {
  SplitChoice best;
  const auto n = X.rows();
  const double total = r.sum();
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const auto& ord = order[static_cast<std::size_t>(j)];
    double left_sum = 0.0;
    for (Eigen::Index pos = 0; pos + 1 < n; ++pos) {
      const auto i = ord[static_cast<std::size_t>(pos)];
      left_sum += r(i);
      const double xv = X(i, j);
      const double xnext = X(ord[static_cast<std::size_t>(pos + 1)], j);
      if (!(xnext > xv)) continue;
      const double nl = static_cast<double>(pos + 1);
      const double nr = static_cast<double>(n - pos - 1);
      const double right_sum = total - left_sum;
      // SSE reduction relative to a single mean.
      const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr -
                          total * total / static_cast<double>(n);
      if (!best.found || gain > best.gain) {
        best.found = true;
        best.gain = gain;
        best.stump = Stump{j, 0.5 * (xv + xnext), left_sum / nl, right_sum / nr};
      }
    }
  }
  return best;
}

inline double eval_stump(const Stump& s, const auto& row) {
  return row(s.feature) <= s.threshold ? s.left : s.right;
}

}  // namespace detail

inline Predictor train_boosted_stumps(const LabeledData& train, int rounds, double learn_rate,
                                      std::string id = "boosted_stumps") {
  validate(train);
  if (train.rows() < 2) throw Error("train_boosted_stumps: need at least 2 rows");
  if (rounds < 0) throw Error("train_boosted_stumps: rounds must be >= 0");
  if (!(learn_rate > 0.0 && learn_rate <= 1.0))
    throw Error("train_boosted_stumps: learn_rate must lie in (0, 1]");

  const auto& X = train.X;
  const auto n = X.rows();
  std::vector<std::vector<Eigen::Index>> order(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    auto& ord = order[static_cast<std::size_t>(j)];
    ord.resize(static_cast<std::size_t>(n));
    std::iota(ord.begin(), ord.end(), Eigen::Index{0});
    std::stable_sort(ord.begin(), ord.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return X(a, j) < X(b, j); });
  }

  BoostedStumpsParams p;
  p.rounds = rounds;
  p.learn_rate = learn_rate;
  p.base = train.Y.mean();
  Vector fitted = Vector::Constant(n, p.base);
  for (int round = 0; round < rounds; ++round) {
    const Vector resid = train.Y - fitted;
    const auto choice = detail::best_stump(X, resid, order);
    if (!choice.found) {
      p.degenerate = true;
      break;
    }
    Stump s = choice.stump;
    s.left *= learn_rate;
    s.right *= learn_rate;
    for (Eigen::Index i = 0; i < n; ++i) fitted(i) += detail::eval_stump(s, X.row(i));
    p.stumps.push_back(s);
  }
  const auto dim = train.cols();
  return Predictor{PredictorKind::BoostedStumps, std::move(p), std::move(id), dim};
}

inline Vector predict_batch(const Predictor& pred, const Matrix& X) {
  if (X.cols() != pred.input_dim)
    throw Error("predictor '" + pred.id + "': expected " + std::to_string(pred.input_dim) +
                " columns, got " + std::to_string(X.cols()));
  const auto rows = X.rows();
  Vector out(rows);

  if (const auto* o = std::get_if<NoisyOracleParams>(&pred.params)) {
    std::vector<double> row(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(i, j);
      const double mean = X.row(i).dot(o->theta);
      if (o->sigma_eps == 0.0) {
        out(i) = mean + o->mu_eps;
        continue;
      }
      const std::uint64_t h = hash_values(o->seed, row);
      const double z = normal_from_bits(splitmix64(h), splitmix64(h + kGoldenGamma));
      out(i) = mean + o->mu_eps + o->sigma_eps * z;
    }
  } else if (const auto* kp = std::get_if<KnnParams>(&pred.params)) {
    const auto n = kp->X.rows();
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    const auto k = static_cast<std::size_t>(kp->k);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index t = 0; t < n; ++t)
        dist[static_cast<std::size_t>(t)] = {(kp->X.row(t) - X.row(i)).squaredNorm(), t};
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += kp->Y(dist[t].second);
      out(i) = s / static_cast<double>(k);
    }
  } else {
    const auto& b = std::get<BoostedStumpsParams>(pred.params);
    for (Eigen::Index i = 0; i < rows; ++i) {
      double v = b.base;
      for (const auto& s : b.stumps) v += detail::eval_stump(s, X.row(i));
      out(i) = v;
    }
  }
  return out;
}

}  // namespace puma
