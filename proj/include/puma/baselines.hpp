#pragma once

// Comparison methods. Restricted baselines (PLARM, PML, PLAM1, PLAM0) are the
// same averaging pipeline run on a filtered strategy grid.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "puma/mallows.hpp"

namespace puma {

enum class MethodKind { PUMA, PEMA, PAIC, PBIC, PLARM, PML, PLAM1, PLAM0, PPIPP, LARM };

struct MethodId {
  MethodKind kind = MethodKind::PUMA;
  std::string predictor;  // PML and PPIPP only

  bool operator==(const MethodId&) const = default;

  std::string name() const {
    switch (kind) {
      case MethodKind::PUMA: return "PUMA";
      case MethodKind::PEMA: return "PEMA";
      case MethodKind::PAIC: return "PAIC";
      case MethodKind::PBIC: return "PBIC";
      case MethodKind::PLARM: return "PLARM";
      case MethodKind::PML: return "PML:" + predictor;
      case MethodKind::PLAM1: return "PLAM1";
      case MethodKind::PLAM0: return "PLAM0";
      case MethodKind::PPIPP: return "PPI++(surrogate):" + predictor;
      case MethodKind::LARM: return "LARM";
    }
    return "?";
  }
};

// Accepts the names produced by MethodId::name(). "PML" and "PPI++" (without a
// predictor) expand to one method per predictor.
inline std::vector<MethodId> parse_method(const std::string& text,
                                          const std::vector<std::string>& predictor_ids) {
  static const std::pair<const char*, MethodKind> plain[] = {
      {"PUMA", MethodKind::PUMA},   {"PEMA", MethodKind::PEMA},   {"PAIC", MethodKind::PAIC},
      {"PBIC", MethodKind::PBIC},   {"PLARM", MethodKind::PLARM}, {"PLAM1", MethodKind::PLAM1},
      {"PLAM0", MethodKind::PLAM0}, {"LARM", MethodKind::LARM}};
  for (const auto& [name, kind] : plain)
    if (text == name) return {MethodId{kind, ""}};

  auto per_predictor = [&](MethodKind kind, const std::string& prefix) -> std::vector<MethodId> {
    if (text == prefix || text == prefix + ":") {
      std::vector<MethodId> out;
      for (const auto& id : predictor_ids) out.push_back({kind, id});
      return out;
    }
    const auto id = text.substr(prefix.size() + 1);
    if (std::find(predictor_ids.begin(), predictor_ids.end(), id) == predictor_ids.end())
      throw ConfigError("method '" + text + "' names unknown predictor '" + id + "'");
    return {MethodId{kind, id}};
  };
  if (text.rfind("PML", 0) == 0 && (text.size() == 3 || text[3] == ':'))
    return per_predictor(MethodKind::PML, "PML");
  if (text.rfind("PPI++(surrogate)", 0) == 0 &&
      (text.size() == 16 || text[16] == ':'))
    return per_predictor(MethodKind::PPIPP, "PPI++(surrogate)");
  if (text.rfind("PPI++", 0) == 0 && (text.size() == 5 || text[5] == ':'))
    return per_predictor(MethodKind::PPIPP, "PPI++");
  throw ConfigError("unknown method '" + text + "'");
}

inline bool grid_has_lambda(const StrategyGrid& grid, double lambda) {
  return std::any_of(grid.strategies.begin(), grid.strategies.end(),
                     [&](const Strategy& s) { return s.lambda == lambda; });
}

inline std::vector<std::string> grid_predictors(const StrategyGrid& grid) {
  std::vector<std::string> ids;
  for (const auto& s : grid.strategies)
    if (std::find(ids.begin(), ids.end(), s.predictor_id) == ids.end()) ids.push_back(s.predictor_id);
  return ids;
}

// PUMA followed by every comparison method the grid supports, in reporting order.
inline std::vector<MethodId> default_methods(const StrategyGrid& grid) {
  const auto ids = grid_predictors(grid);
  std::vector<MethodId> out{{MethodKind::PUMA, ""},
                            {MethodKind::PEMA, ""},
                            {MethodKind::PAIC, ""},
                            {MethodKind::PBIC, ""},
                            {MethodKind::PLARM, ""}};
  for (const auto& id : ids) out.push_back({MethodKind::PML, id});
  if (grid_has_lambda(grid, 1.0)) out.push_back({MethodKind::PLAM1, ""});
  if (grid_has_lambda(grid, 0.0)) out.push_back({MethodKind::PLAM0, ""});
  for (const auto& id : ids) out.push_back({MethodKind::PPIPP, id});
  out.push_back({MethodKind::LARM, ""});
  return out;
}

inline double kahan_sum(const Vector& v) {
  double sum = 0.0;
  double comp = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double y = v(i) - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum;
}

inline WeightVector equal_weights(int M) {
  if (M < 1) throw Error("equal_weights: M must be >= 1");
  WeightVector out;
  out.w = Vector::Constant(M, 1.0 / static_cast<double>(M));
  out.converged = true;
  return out;
}

enum class InformationCriterion { AIC, BIC };

inline double information_criterion_value(const StrategyFit& f, InformationCriterion kind, int n) {
  const double nn = static_cast<double>(n);
  const double fit = nn * std::log(std::max(f.sigma2_m, 1e-12));
  return fit + (kind == InformationCriterion::AIC ? 2.0 * f.hat_trace : f.hat_trace * std::log(nn));
}

inline int information_criterion_select(const std::vector<StrategyFit>& fits,
                                        InformationCriterion kind, int n) {
  if (fits.empty()) throw Error("information_criterion_select: no fits");
  if (n < 1) throw Error("information_criterion_select: n must be >= 1");
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < fits.size(); ++m) {
    if (!(fits[m].sigma2_m >= 0.0)) throw Error("information_criterion_select: negative sigma2");
    const double v = information_criterion_value(fits[m], kind, n);
    if (v < best_val) {
      best_val = v;
      best = static_cast<int>(m);
    }
  }
  return best;
}

using StrategyPredicate = std::function<bool(const Strategy&)>;

inline std::vector<int> filter_indices(const StrategyGrid& grid, const StrategyPredicate& keep) {
  std::vector<int> idx;
  for (const auto& s : grid.strategies)
    if (keep(s)) idx.push_back(s.m);
  return idx;
}

inline StrategyGrid subgrid(const StrategyGrid& grid, const std::vector<int>& idx) {
  if (idx.empty()) throw Error("filter_strategies: predicate keeps no strategy");
  StrategyGrid out;
  std::vector<CandidateModel> models;
  std::set<double> lambdas;
  std::set<std::string> preds;
  int m = 0;
  for (int i : idx) {
    Strategy s = grid[i];
    s.m = m++;
    if (std::find(models.begin(), models.end(), s.model) == models.end()) models.push_back(s.model);
    lambdas.insert(s.lambda);
    preds.insert(s.predictor_id);
    out.strategies.push_back(std::move(s));
  }
  out.S1 = static_cast<int>(models.size());
  out.S2 = static_cast<int>(lambdas.size());
  out.S3 = static_cast<int>(preds.size());
  return out;
}

// Re-indexed subgrid of the strategies satisfying `keep`.
inline StrategyGrid filter_strategies(const StrategyGrid& grid, const StrategyPredicate& keep) {
  return subgrid(grid, filter_indices(grid, keep));
}

// Predicate realizing each restricted baseline; empty for the others.
inline std::optional<StrategyPredicate> restriction(const MethodId& id, const StrategyGrid& grid) {
  switch (id.kind) {
    case MethodKind::PLARM: {
      const auto largest = grid.largest_model();
      return [largest](const Strategy& s) { return s.model == largest; };
    }
    case MethodKind::PML: {
      const auto pid = id.predictor;
      return [pid](const Strategy& s) { return s.predictor_id == pid; };
    }
    case MethodKind::PLAM1: return [](const Strategy& s) { return s.lambda == 1.0; };
    case MethodKind::PLAM0: return [](const Strategy& s) { return s.lambda == 0.0; };
    default: return std::nullopt;
  }
}

namespace detail {

inline AveragedModel single_strategy_model(const Strategy& s, StrategyFit fit) {
  StrategyGrid g;
  g.S1 = g.S2 = g.S3 = 1;
  Strategy one = s;
  one.m = 0;
  fit.strategy_index = 0;
  g.strategies.push_back(one);
  WeightVector w;
  w.w = Vector::Ones(1);
  w.converged = true;
  AveragedModel out;
  out.weights = w;
  out.theta_avg = fit.theta_full;
  out.in_sample_fit = fit.mu_hat;
  out.grid = std::move(g);
  out.fits.push_back(std::move(fit));
  return out;
}

}  // namespace detail

// OLS of Y on the full model using only the labeled rows.
inline AveragedModel larm_fit(const LabeledData& L, const CandidateModel& full_model) {
  validate(L);
  const Strategy s{full_model, 0.0, "", 0};
  const Matrix Xm = select_columns(L.X, full_model);
  Eigen::LLT<Matrix> llt(Xm.transpose() * Xm);
  if (llt.info() != Eigen::Success || !(llt.rcond() >= 1e-12))
    throw Error("larm_fit: Gram matrix of the full model is singular");
  const Vector theta = llt.solve(Xm.transpose() * L.Y);
  StrategyFit fit;
  fit.theta_full = Vector::Zero(L.cols());
  for (Eigen::Index j = 0; j < full_model.k(); ++j)
    fit.theta_full(full_model.columns[static_cast<std::size_t>(j)]) = theta(j);
  fit.mu_hat = Xm * theta;
  fit.hat_trace = static_cast<double>(full_model.k());
  fit.sigma2_m = (L.Y - fit.mu_hat).squaredNorm() / static_cast<double>(L.rows());
  auto out = detail::single_strategy_model(s, std::move(fit));
  if (L.rows() > full_model.k()) out.sigma2 = estimate_sigma2(L, full_model);
  return out;
}

inline std::vector<double> dense_lambda_grid(int steps = 100) {
  std::vector<double> out;
  for (int i = 0; i <= steps; ++i) out.push_back(static_cast<double>(i) / steps);
  return out;
}

struct PpiPlusPlusResult {
  AveragedModel model;
  double lambda_hat = 0.0;
  std::vector<double> lambdas;   // grid points that were fitted
  std::vector<double> criterion; // feasible criterion at each of them
};

// Power tuning by minimizing the feasible criterion over the one-model,
// one-predictor family; ties go to the smaller lambda. This is a surrogate for
// the plug-in tuning rule of the original PPI++ method.
inline PpiPlusPlusResult ppi_plus_plus_baseline(const LabeledData& L, const UnlabeledData& U,
                                                const Vector& f_lab, const Vector& f_unlab,
                                                const CandidateModel& full_model,
                                                const std::string& predictor_id = "",
                                                const std::vector<double>& lambda_grid =
                                                    dense_lambda_grid()) {
  if (lambda_grid.empty()) throw Error("ppi_plus_plus_baseline: empty lambda grid");
  const double sigma2 = estimate_sigma2(L, full_model);
  PpiPlusPlusResult res;
  std::optional<StrategyFit> best;
  double best_val = std::numeric_limits<double>::infinity();
  for (double lambda : lambda_grid) {
    const Strategy s{full_model, lambda, predictor_id, 0};
    StrategyFit fit;
    try {
      fit = fit_strategy(s, L, U, f_lab, f_unlab);
    } catch (const Error&) {
      continue;
    }
    const double val = (L.Y - fit.mu_hat).squaredNorm() + 2.0 * sigma2 * fit.hat_trace;
    res.lambdas.push_back(lambda);
    res.criterion.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = std::move(fit);
      res.lambda_hat = lambda;
    }
  }
  if (!best) throw Error("ppi_plus_plus_baseline: Psi singular at every lambda");
  res.model = detail::single_strategy_model(Strategy{full_model, res.lambda_hat, predictor_id, 0},
                                            std::move(*best));
  res.model.sigma2 = sigma2;
  res.model.weights.objective = best_val;
  return res;
}

struct MethodResult {
  MethodId id;
  Vector weights;     // over the full grid; empty for PPI++ and LARM
  int selected = -1;  // PAIC / PBIC
  double lambda_hat = std::numeric_limits<double>::quiet_NaN();  // PPI++
  double criterion = std::numeric_limits<double>::quiet_NaN();   // full-grid criterion at weights
  Vector theta;       // length q
  Vector predictions; // X_eval * theta when X_eval was supplied
};

struct PanelInputs {
  const StrategyGrid& grid;
  const std::vector<StrategyFit>& fits;
  const LabeledData& labeled;
  const UnlabeledData& unlabeled;
  const PseudoLabelSet& pseudo;
  double sigma2;
  SolverOptions solver{};
  std::vector<double> ppi_lambdas = dense_lambda_grid();
};

inline std::vector<MethodResult> run_method_panel(const PanelInputs& in,
                                                  const std::vector<MethodId>& methods,
                                                  const Matrix* X_eval = nullptr) {
  const auto M = in.grid.M();
  if (static_cast<int>(in.fits.size()) != M) throw Error("run_method_panel: fits/grid mismatch");
  const auto crit = build_criterion(in.fits, in.labeled.Y, in.sigma2);
  const int n = static_cast<int>(in.labeled.rows());

  std::optional<AveragedModel> puma;
  auto finish_grid_method = [&](MethodResult& r, const Vector& w) {
    r.weights = w;
    r.criterion = criterion_value(crit, w);
    r.theta = Vector::Zero(in.labeled.cols());
    for (int m = 0; m < M; ++m) r.theta += w(m) * in.fits[static_cast<std::size_t>(m)].theta_full;
  };

  std::vector<MethodResult> out;
  for (const auto& id : methods) {
    MethodResult r;
    r.id = id;
    switch (id.kind) {
      case MethodKind::PUMA: {
        if (!puma) puma = average(in.grid, in.fits, solve_weights(crit, in.solver), in.sigma2);
        r.weights = puma->weights.w;
        r.criterion = puma->weights.objective;
        r.theta = puma->theta_avg;
        break;
      }
      case MethodKind::PEMA: finish_grid_method(r, equal_weights(M).w); break;
      case MethodKind::PAIC:
      case MethodKind::PBIC: {
        r.selected = information_criterion_select(
            in.fits, id.kind == MethodKind::PAIC ? InformationCriterion::AIC : InformationCriterion::BIC,
            n);
        finish_grid_method(r, Vector::Unit(M, r.selected));
        break;
      }
      case MethodKind::PLARM:
      case MethodKind::PML:
      case MethodKind::PLAM1:
      case MethodKind::PLAM0: {
        const auto idx = filter_indices(in.grid, *restriction(id, in.grid));
        if (idx.empty()) throw Error("method " + id.name() + ": no strategy in the grid qualifies");
        const auto sub = subgrid(in.grid, idx);
        std::vector<StrategyFit> sub_fits;
        for (int i : idx) sub_fits.push_back(in.fits[static_cast<std::size_t>(i)]);
        const double s2 = estimate_sigma2(in.labeled, sub.largest_model());
        const auto model = fit_averaged_model(sub, sub_fits, in.labeled.Y, s2, in.solver);
        Vector w = Vector::Zero(M);
        for (std::size_t j = 0; j < idx.size(); ++j)
          w(idx[j]) = model.weights.w(static_cast<Eigen::Index>(j));
        r.weights = w;
        r.criterion = criterion_value(crit, w);
        r.theta = model.theta_avg;
        break;
      }
      case MethodKind::PPIPP: {
        const auto& f = lookup(in.pseudo, id.predictor);
        const auto res = ppi_plus_plus_baseline(in.labeled, in.unlabeled, f.labeled, f.unlabeled,
                                                in.grid.largest_model(), id.predictor,
                                                in.ppi_lambdas);
        r.lambda_hat = res.lambda_hat;
        r.theta = res.model.theta_avg;
        break;
      }
      case MethodKind::LARM:
        r.theta = larm_fit(in.labeled, in.grid.largest_model()).theta_avg;
        break;
    }
    if (X_eval) r.predictions = predict(r.theta, *X_eval);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace puma
