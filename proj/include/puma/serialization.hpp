#pragma once

// JSON forms of grids, fits, averaged models, and method results.

#include <string>
#include <vector>

#include <json.hpp>

#include "puma/baselines.hpp"

namespace puma {

using json = nlohmann::ordered_json;

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw Error(what + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(what + ": element " + std::to_string(i) + " is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline json to_json(const StrategyGrid& grid) {
  json strategies = json::array();
  for (const auto& s : grid.strategies)
    strategies.push_back({{"m", s.m},
                          {"columns", s.model.columns},
                          {"lambda", s.lambda},
                          {"predictor", s.predictor_id}});
  return {{"S1", grid.S1}, {"S2", grid.S2}, {"S3", grid.S3}, {"M", grid.M()},
          {"order", "model, lambda, predictor"}, {"strategies", std::move(strategies)}};
}

inline StrategyGrid grid_from_json(const json& j) {
  StrategyGrid g;
  try {
    g.S1 = j.at("S1").get<int>();
    g.S2 = j.at("S2").get<int>();
    g.S3 = j.at("S3").get<int>();
    for (const auto& s : j.at("strategies"))
      g.strategies.push_back(Strategy{CandidateModel{s.at("columns").get<std::vector<Eigen::Index>>()},
                                      s.at("lambda").get<double>(),
                                      s.at("predictor").get<std::string>(), s.at("m").get<int>()});
  } catch (const json::exception& e) {
    throw Error(std::string("invalid grid JSON: ") + e.what());
  }
  return g;
}

inline json to_json(const StrategyFit& f) {
  return {{"m", f.strategy_index},
          {"theta", to_json(f.theta_full)},
          {"hat_trace", f.hat_trace},
          {"sigma2_m", f.sigma2_m}};
}

inline json to_json(const WeightVector& w) {
  return {{"weights", to_json(w.w)},
          {"objective", w.objective},
          {"iterations", w.iterations},
          {"converged", w.converged}};
}

struct ModelFile {
  std::vector<std::string> columns;  // observed covariates, without the intercept
  bool intercept = false;
  std::string outcome;
  AveragedModel model;
  Vector pvalues;
};

inline constexpr const char* kModelFormat = "puma-model/1";

inline json to_json(const ModelFile& mf) {
  json strategies = json::array();
  for (const auto& f : mf.model.fits) strategies.push_back(to_json(f));
  return {{"format", kModelFormat},
          {"outcome", mf.outcome},
          {"columns", mf.columns},
          {"intercept", mf.intercept},
          {"theta", to_json(mf.model.theta_avg)},
          {"sigma2", mf.model.sigma2},
          {"solver", to_json(mf.model.weights)},
          {"pvalues", to_json(mf.pvalues)},
          {"grid", to_json(mf.model.grid)},
          {"strategies", std::move(strategies)},
          {"in_sample_fit", to_json(mf.model.in_sample_fit)}};
}

inline ModelFile model_from_json(const json& j) {
  ModelFile mf;
  try {
    if (j.at("format").get<std::string>() != kModelFormat)
      throw Error("unsupported model format '" + j.at("format").get<std::string>() + "'");
    mf.outcome = j.at("outcome").get<std::string>();
    mf.columns = j.at("columns").get<std::vector<std::string>>();
    mf.intercept = j.at("intercept").get<bool>();
    mf.model.theta_avg = vector_from_json(j.at("theta"), "model theta");
    mf.model.sigma2 = j.at("sigma2").get<double>();
    const auto& solver = j.at("solver");
    mf.model.weights.w = vector_from_json(solver.at("weights"), "model weights");
    mf.model.weights.objective = solver.at("objective").get<double>();
    mf.model.weights.iterations = solver.at("iterations").get<int>();
    mf.model.weights.converged = solver.at("converged").get<bool>();
    mf.pvalues = vector_from_json(j.at("pvalues"), "model pvalues");
    mf.model.grid = grid_from_json(j.at("grid"));
    for (const auto& s : j.at("strategies")) {
      StrategyFit f;
      f.strategy_index = s.at("m").get<int>();
      f.theta_full = vector_from_json(s.at("theta"), "strategy theta");
      f.hat_trace = s.at("hat_trace").get<double>();
      f.sigma2_m = s.at("sigma2_m").get<double>();
      mf.model.fits.push_back(std::move(f));
    }
    mf.model.in_sample_fit = vector_from_json(j.at("in_sample_fit"), "in_sample_fit");
  } catch (const json::exception& e) {
    throw Error(std::string("invalid model JSON: ") + e.what());
  }
  const auto width = static_cast<Eigen::Index>(mf.columns.size()) + (mf.intercept ? 1 : 0);
  if (mf.model.theta_avg.size() != width)
    throw Error("invalid model JSON: theta length does not match columns");
  return mf;
}

inline json to_json(const MethodResult& r) {
  json j{{"method", r.id.name()}, {"theta", to_json(r.theta)}};
  if (r.weights.size() > 0) j["weights"] = to_json(r.weights);
  if (r.selected >= 0) j["selected"] = r.selected;
  if (r.id.kind == MethodKind::PPIPP) {
    j["lambda_hat"] = r.lambda_hat;
    j["note"] = "PPI++ (surrogate tuning): lambda minimizes the feasible Mallows criterion";
  }
  if (r.weights.size() > 0) j["criterion"] = r.criterion;
  if (r.predictions.size() > 0) j["predictions"] = to_json(r.predictions);
  return j;
}

}  // namespace puma
