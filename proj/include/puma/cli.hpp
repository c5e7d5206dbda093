#pragma once

// Command implementations behind the `puma` executable. Each command returns a
// process exit code: 0 success, 1 runtime failure, 2 invalid configuration.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "puma/serialization.hpp"
#include "puma/simulation.hpp"

namespace puma::cli {

namespace fs = std::filesystem;
using puma::to_json;

enum class Mode { Simulate, Fit, Predict, Evaluate };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Simulate: return "simulate";
    case Mode::Fit: return "fit";
    case Mode::Predict: return "predict";
    case Mode::Evaluate: return "evaluate";
  }
  return "?";
}

struct PredictorSpec {
  std::string id;
  std::string kind;  // noisy_oracle | knn | boosted_stumps | external
  int k = 5;
  int rounds = 100;
  double learn_rate = 0.1;
  std::string column;  // external: column name, defaults to id
  std::vector<double> theta;
  double mu_eps = 0.0;
  double sigma_eps = 0.0;
  std::uint64_t seed = 0;
};

struct GridOptions {
  std::vector<int> sizes;  // empty: 1..q
  std::vector<double> lambdas = default_lambda_grid();
  bool intercept = false;
  PValueMode pvalue_mode = PValueMode::Joint;
};

struct DataOptions {
  fs::path labeled;
  fs::path unlabeled;
  fs::path predictions_labeled;
  fs::path predictions_unlabeled;
  fs::path predictor_training;
  std::string outcome = "y";
  std::vector<std::string> covariates;  // empty: every non-outcome column of the labeled file
};

struct SplitOptions {
  std::vector<double> ratios{0.5, 0.6, 0.7, 0.8, 0.9};
  int repeats = 100;
  std::uint64_t seed = 1;
};

struct SimulationOptions {
  int reps = 100;
  std::vector<double> r2_values;  // empty: [dgp.r2]
  std::vector<int> n_values;      // empty: [dgp.n]
  bool in_sample = false;
};

struct RunConfig {
  Mode mode = Mode::Simulate;
  DgpConfig dgp;
  SimulationOptions simulation;
  GridOptions grid;
  SolverOptions solver;
  DataOptions data;
  std::vector<PredictorSpec> predictors;
  SplitOptions split;
  std::vector<std::string> methods;
  int ppi_lambda_steps = 100;
  fs::path model;   // fit: output model file; predict: input model file
  fs::path input;   // predict: covariate CSV
  fs::path output;  // predict: predictions CSV
  fs::path out_dir = ".";
  int threads = 1;
};

// Command-line overrides; unset fields leave the config value in place.
struct CliOptions {
  std::optional<fs::path> config;
  std::optional<fs::path> out_dir;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> methods;
  std::optional<fs::path> model;
  std::optional<fs::path> input;
  std::optional<fs::path> output;
};

// ---------------------------------------------------------------------------
// Config parsing

class Section {
public:
  Section(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + "must be an object");
  }

  bool has(const std::string& key) const { return j_->contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!j_->contains(key)) return fallback;
    used_.insert(key);
    return convert<T>(j_->at(key), field(key));
  }

  Section section(const std::string& key) {
    used_.insert(key);
    return Section(j_->at(key), field(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_->at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  // Unknown keys are errors.
  void finish() const {
    for (const auto& [key, value] : j_->items())
      if (!used_.count(key)) throw ConfigError("unknown config key '" + field(key) + "'");
  }

private:
  std::string where() const { return path_.empty() ? "config " : "'" + path_ + "' "; }

  template <typename T>
  static T convert(const json& v, const std::string& name) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("'" + name + "' must be a number");
      } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_integer()) throw ConfigError("'" + name + "' must be an integer");
        if constexpr (std::is_same_v<T, std::uint64_t>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
            throw ConfigError("'" + name + "' must be non-negative");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("'" + name + "' must be true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("'" + name + "' must be a string");
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!v.is_array()) throw ConfigError("'" + name + "' must be an array of numbers");
        for (std::size_t i = 0; i < v.size(); ++i)
          if (!v[i].is_number())
            throw ConfigError("'" + name + "[" + std::to_string(i) + "]' must be a number");
      } else if constexpr (std::is_same_v<T, std::vector<int>>) {
        if (!v.is_array()) throw ConfigError("'" + name + "' must be an array of integers");
        for (std::size_t i = 0; i < v.size(); ++i)
          if (!v[i].is_number_integer())
            throw ConfigError("'" + name + "[" + std::to_string(i) + "]' must be an integer");
      } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
        if (!v.is_array()) throw ConfigError("'" + name + "' must be an array of strings");
        for (std::size_t i = 0; i < v.size(); ++i)
          if (!v[i].is_string())
            throw ConfigError("'" + name + "[" + std::to_string(i) + "]' must be a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("'" + name + "': " + e.what());
    }
  }

  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

inline void check_lambdas(const std::vector<double>& lambdas, const std::string& name) {
  if (lambdas.empty()) throw ConfigError("'" + name + "' must not be empty");
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    if (!(lambdas[i] >= 0.0 && lambdas[i] <= 1.0))
      throw ConfigError("'" + name + "[" + std::to_string(i) + "]' = " + format_double(lambdas[i]) +
                        " is outside [0, 1]");
  if (std::set<double>(lambdas.begin(), lambdas.end()).size() != lambdas.size())
    throw ConfigError("'" + name + "' values must be distinct");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace detail

inline RunConfig parse_config(const json& root, Mode mode, const fs::path& base_dir = {}) {
  RunConfig cfg;
  cfg.mode = mode;
  Section top(root, "");

  if (top.has("mode")) {
    const auto m = top.get<std::string>("mode", "");
    if (m != mode_name(mode))
      throw ConfigError("'mode' is '" + m + "' but the command is '" + mode_name(mode) + "'");
  }
  cfg.threads = top.get<int>("threads", 1);
  if (cfg.threads < 1) throw ConfigError("'threads' must be >= 1");
  cfg.out_dir = detail::resolve(base_dir, top.get<std::string>("out_dir", "."));
  cfg.methods = top.get<std::vector<std::string>>("methods", {});
  cfg.model = detail::resolve(base_dir, top.get<std::string>("model", ""));
  cfg.input = detail::resolve(base_dir, top.get<std::string>("input", ""));
  cfg.output = detail::resolve(base_dir, top.get<std::string>("output", ""));

  if (top.has("dgp")) {
    auto s = top.section("dgp");
    auto& d = cfg.dgp;
    d.p = s.get<int>("p", d.p);
    d.rho = s.get<double>("rho", d.rho);
    d.alpha = s.get<double>("alpha", d.alpha);
    d.theta_base = s.get<std::vector<double>>("theta", {});
    d.sigma_eps = s.get<double>("sigma_eps", d.sigma_eps);
    d.n = s.get<int>("n", d.n);
    d.N = s.get<int>("N", d.N);
    d.n_test = s.get<int>("n_test", d.n_test);
    d.q = s.get<int>("q", d.q);
    d.r2 = s.get<double>("r2", d.r2);
    const auto r2_mode = s.get<std::string>("r2_mode", "scale_theta");
    if (r2_mode == "scale_theta") d.r2_mode = R2Mode::ScaleTheta;
    else if (r2_mode == "scale_sigma") d.r2_mode = R2Mode::ScaleSigma;
    else if (r2_mode == "signal_free") d.r2_mode = R2Mode::SignalFree;
    else throw ConfigError("'dgp.r2_mode' must be scale_theta, scale_sigma or signal_free");
    const auto c = s.get<std::string>("case", "I");
    if (c == "I") d.noise_case = NoiseCase::I;
    else if (c == "II") d.noise_case = NoiseCase::II;
    else throw ConfigError("'dgp.case' must be \"I\" or \"II\"");
    d.seed = s.get<std::uint64_t>("seed", d.seed);
    s.finish();
  }

  if (top.has("simulation")) {
    auto s = top.section("simulation");
    cfg.simulation.reps = s.get<int>("reps", cfg.simulation.reps);
    cfg.simulation.r2_values = s.get<std::vector<double>>("r2_values", {});
    cfg.simulation.n_values = s.get<std::vector<int>>("n_values", {});
    cfg.simulation.in_sample = s.get<bool>("in_sample", false);
    s.finish();
    if (cfg.simulation.reps < 1) throw ConfigError("'simulation.reps' must be >= 1");
    for (double r2 : cfg.simulation.r2_values)
      if (!(r2 > 0.0 && r2 < 1.0)) throw ConfigError("'simulation.r2_values' entries must lie in (0, 1)");
    for (int n : cfg.simulation.n_values)
      if (n < 2) throw ConfigError("'simulation.n_values' entries must be >= 2");
  }

  if (top.has("grid")) {
    auto s = top.section("grid");
    cfg.grid.sizes = s.get<std::vector<int>>("sizes", {});
    cfg.grid.lambdas = s.get<std::vector<double>>("lambdas", cfg.grid.lambdas);
    cfg.grid.intercept = s.get<bool>("intercept", false);
    const auto pm = s.get<std::string>("pvalue_mode", "joint");
    if (pm == "joint") cfg.grid.pvalue_mode = PValueMode::Joint;
    else if (pm == "univariate") cfg.grid.pvalue_mode = PValueMode::Univariate;
    else throw ConfigError("'grid.pvalue_mode' must be joint or univariate");
    s.finish();
  }
  detail::check_lambdas(cfg.grid.lambdas, "grid.lambdas");
  for (std::size_t i = 0; i < cfg.grid.sizes.size(); ++i) {
    if (cfg.grid.sizes[i] < 1) throw ConfigError("'grid.sizes' entries must be >= 1");
    if (i > 0 && cfg.grid.sizes[i] <= cfg.grid.sizes[i - 1])
      throw ConfigError("'grid.sizes' must be strictly increasing");
  }

  if (top.has("solver")) {
    auto s = top.section("solver");
    cfg.solver.tol = s.get<double>("tol", cfg.solver.tol);
    cfg.solver.max_iter = s.get<int>("max_iter", cfg.solver.max_iter);
    s.finish();
    if (!(cfg.solver.tol > 0.0)) throw ConfigError("'solver.tol' must be positive");
    if (cfg.solver.max_iter < 1) throw ConfigError("'solver.max_iter' must be >= 1");
  }

  if (top.has("ppi")) {
    auto s = top.section("ppi");
    cfg.ppi_lambda_steps = s.get<int>("lambda_steps", cfg.ppi_lambda_steps);
    s.finish();
    if (cfg.ppi_lambda_steps < 1) throw ConfigError("'ppi.lambda_steps' must be >= 1");
  }

  if (top.has("data")) {
    auto s = top.section("data");
    auto& d = cfg.data;
    d.labeled = detail::resolve(base_dir, s.get<std::string>("labeled", ""));
    d.unlabeled = detail::resolve(base_dir, s.get<std::string>("unlabeled", ""));
    d.predictions_labeled = detail::resolve(base_dir, s.get<std::string>("predictions_labeled", ""));
    d.predictions_unlabeled = detail::resolve(base_dir, s.get<std::string>("predictions_unlabeled", ""));
    d.predictor_training = detail::resolve(base_dir, s.get<std::string>("predictor_training", ""));
    d.outcome = s.get<std::string>("outcome", d.outcome);
    d.covariates = s.get<std::vector<std::string>>("covariates", {});
    s.finish();
  }

  if (top.has("predictors")) {
    const auto& arr = top.raw("predictors");
    if (!arr.is_array()) throw ConfigError("'predictors' must be an array");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section s(arr[i], "predictors[" + std::to_string(i) + "]");
      PredictorSpec p;
      p.id = s.get<std::string>("id", "");
      p.kind = s.get<std::string>("kind", "");
      if (p.id.empty()) throw ConfigError("'" + s.field("id") + "' is required");
      if (!ids.insert(p.id).second) throw ConfigError("duplicate predictor id '" + p.id + "'");
      if (p.kind == "knn") {
        p.k = s.get<int>("k", p.k);
        if (p.k < 1) throw ConfigError("'" + s.field("k") + "' must be >= 1");
      } else if (p.kind == "boosted_stumps") {
        p.rounds = s.get<int>("rounds", p.rounds);
        p.learn_rate = s.get<double>("learn_rate", p.learn_rate);
        if (p.rounds < 0) throw ConfigError("'" + s.field("rounds") + "' must be >= 0");
        if (!(p.learn_rate > 0.0 && p.learn_rate <= 1.0))
          throw ConfigError("'" + s.field("learn_rate") + "' must lie in (0, 1]");
      } else if (p.kind == "external") {
        p.column = s.get<std::string>("column", p.id);
      } else if (p.kind == "noisy_oracle") {
        p.theta = s.get<std::vector<double>>("theta", {});
        p.mu_eps = s.get<double>("mu_eps", 0.0);
        p.sigma_eps = s.get<double>("sigma_eps", 0.0);
        p.seed = s.get<std::uint64_t>("seed", 0);
        if (!(p.sigma_eps >= 0.0)) throw ConfigError("'" + s.field("sigma_eps") + "' must be >= 0");
      } else {
        throw ConfigError("'" + s.field("kind") +
                          "' must be knn, boosted_stumps, external or noisy_oracle");
      }
      s.finish();
      cfg.predictors.push_back(std::move(p));
    }
  }

  if (top.has("split")) {
    auto s = top.section("split");
    cfg.split.ratios = s.get<std::vector<double>>("ratios", cfg.split.ratios);
    cfg.split.repeats = s.get<int>("repeats", cfg.split.repeats);
    cfg.split.seed = s.get<std::uint64_t>("seed", cfg.split.seed);
    s.finish();
    if (cfg.split.ratios.empty()) throw ConfigError("'split.ratios' must not be empty");
    for (std::size_t i = 0; i < cfg.split.ratios.size(); ++i)
      if (!(cfg.split.ratios[i] > 0.0 && cfg.split.ratios[i] < 1.0))
        throw ConfigError("'split.ratios[" + std::to_string(i) + "]' must lie in (0, 1)");
    if (cfg.split.repeats < 1) throw ConfigError("'split.repeats' must be >= 1");
  }
  top.finish();

  // Grid and solver options drive the simulation as well.
  cfg.dgp.sizes = cfg.grid.sizes;
  cfg.dgp.lambdas = cfg.grid.lambdas;
  cfg.dgp.pvalues = PValueOptions{cfg.grid.pvalue_mode, false};
  cfg.dgp.solver = cfg.solver;
  cfg.dgp.methods = cfg.methods;
  cfg.dgp.ppi_lambda_steps = cfg.ppi_lambda_steps;
  if (cfg.grid.intercept && mode == Mode::Simulate)
    throw ConfigError("'grid.intercept' is not supported by simulate (the DGP has no intercept)");
  if (mode == Mode::Simulate) validate(cfg.dgp);
  if (mode == Mode::Fit || mode == Mode::Evaluate) {
    if (cfg.data.labeled.empty()) throw ConfigError("'data.labeled' is required");
    if (cfg.data.unlabeled.empty()) throw ConfigError("'data.unlabeled' is required");
    if (cfg.predictors.empty()) throw ConfigError("'predictors' must list at least one predictor");
  }
  return cfg;
}

inline json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline RunConfig load_config(const CliOptions& opt, Mode mode) {
  json root = json::object();
  fs::path base;
  if (opt.config) {
    root = load_json_file(*opt.config);
    base = opt.config->parent_path();
  }
  auto cfg = parse_config(root, mode, base);
  if (opt.out_dir) cfg.out_dir = *opt.out_dir;
  if (opt.threads) {
    if (*opt.threads < 1) throw ConfigError("--threads must be >= 1");
    cfg.threads = *opt.threads;
  }
  if (opt.seed) {
    cfg.dgp.seed = *opt.seed;
    cfg.split.seed = *opt.seed;
  }
  if (opt.methods) {
    cfg.methods = detail::split_list(*opt.methods);
    cfg.dgp.methods = cfg.methods;
  }
  if (opt.model) cfg.model = *opt.model;
  if (opt.input) cfg.input = *opt.input;
  if (opt.output) cfg.output = *opt.output;
  return cfg;
}

inline json to_json(const RunConfig& c) {
  json predictors = json::array();
  for (const auto& p : c.predictors) {
    json j{{"id", p.id}, {"kind", p.kind}};
    if (p.kind == "knn") j["k"] = p.k;
    if (p.kind == "boosted_stumps") {
      j["rounds"] = p.rounds;
      j["learn_rate"] = p.learn_rate;
    }
    if (p.kind == "external") j["column"] = p.column;
    if (p.kind == "noisy_oracle") {
      j["theta"] = p.theta;
      j["mu_eps"] = p.mu_eps;
      j["sigma_eps"] = p.sigma_eps;
      j["seed"] = p.seed;
    }
    predictors.push_back(std::move(j));
  }
  const auto& d = c.dgp;
  const char* r2_mode = d.r2_mode == R2Mode::ScaleTheta   ? "scale_theta"
                        : d.r2_mode == R2Mode::ScaleSigma ? "scale_sigma"
                                                          : "signal_free";
  return {
      {"mode", mode_name(c.mode)},
      {"threads", c.threads},
      {"methods", c.methods},
      {"dgp",
       {{"p", d.p}, {"rho", d.rho}, {"alpha", d.alpha}, {"theta", to_json(d.base_theta())},
        {"sigma_eps", d.sigma_eps}, {"n", d.n}, {"N", d.N}, {"n_test", d.test_rows()},
        {"q", d.observed()}, {"r2", d.r2}, {"r2_mode", r2_mode},
        {"case", d.noise_case == NoiseCase::I ? "I" : "II"}, {"seed", d.seed}}},
      {"simulation",
       {{"reps", c.simulation.reps}, {"r2_values", c.simulation.r2_values},
        {"n_values", c.simulation.n_values}, {"in_sample", c.simulation.in_sample}}},
      {"grid",
       {{"sizes", c.grid.sizes}, {"lambdas", c.grid.lambdas}, {"intercept", c.grid.intercept},
        {"pvalue_mode", c.grid.pvalue_mode == PValueMode::Joint ? "joint" : "univariate"}}},
      {"solver", {{"tol", c.solver.tol}, {"max_iter", c.solver.max_iter}}},
      {"ppi", {{"lambda_steps", c.ppi_lambda_steps}}},
      {"data",
       {{"labeled", c.data.labeled.string()}, {"unlabeled", c.data.unlabeled.string()},
        {"predictions_labeled", c.data.predictions_labeled.string()},
        {"predictions_unlabeled", c.data.predictions_unlabeled.string()},
        {"predictor_training", c.data.predictor_training.string()},
        {"outcome", c.data.outcome}, {"covariates", c.data.covariates}}},
      {"predictors", std::move(predictors)},
      {"split", {{"ratios", c.split.ratios}, {"repeats", c.split.repeats}, {"seed", c.split.seed}}},
  };
}

// ---------------------------------------------------------------------------
// Real-data plumbing shared by fit and evaluate

inline const std::string kInterceptName = "(intercept)";

inline Matrix with_intercept(const Matrix& X) {
  Matrix out(X.rows(), X.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(X.cols()) = X;
  return out;
}

inline LabeledData with_intercept(const LabeledData& d) {
  auto names = d.column_names;
  names.insert(names.begin(), kInterceptName);
  return LabeledData{with_intercept(d.X), d.Y, std::move(names)};
}

inline UnlabeledData with_intercept(const UnlabeledData& d) {
  auto names = d.column_names;
  names.insert(names.begin(), kInterceptName);
  return UnlabeledData{with_intercept(d.Xtilde), std::move(names)};
}

struct RealData {
  LabeledData labeled;
  UnlabeledData unlabeled;
  std::optional<LabeledData> predictor_training;
  std::map<std::string, PseudoLabels> external;  // full-length columns per external predictor
};

inline RealData load_real_data(const RunConfig& cfg) {
  RealData rd;
  rd.labeled = load_labeled_csv(cfg.data.labeled, cfg.data.outcome, cfg.data.covariates);
  rd.unlabeled = load_unlabeled_csv(cfg.data.unlabeled, rd.labeled.column_names);
  validate_pair(rd.labeled, rd.unlabeled);
  if (!cfg.data.predictor_training.empty())
    rd.predictor_training =
        load_labeled_csv(cfg.data.predictor_training, cfg.data.outcome, rd.labeled.column_names);

  for (const auto& p : cfg.predictors) {
    if (p.kind != "external") continue;
    const auto lab_path =
        cfg.data.predictions_labeled.empty() ? cfg.data.labeled : cfg.data.predictions_labeled;
    const auto unl_path =
        cfg.data.predictions_unlabeled.empty() ? cfg.data.unlabeled : cfg.data.predictions_unlabeled;
    const auto lab = read_csv_columns(lab_path, {p.column});
    const auto unl = read_csv_columns(unl_path, {p.column});
    if (static_cast<Eigen::Index>(lab.rows) != rd.labeled.rows())
      throw Error("external predictions '" + p.id + "': " + std::to_string(lab.rows) +
                  " labeled rows, expected " + std::to_string(rd.labeled.rows()));
    if (static_cast<Eigen::Index>(unl.rows) != rd.unlabeled.rows())
      throw Error("external predictions '" + p.id + "': " + std::to_string(unl.rows) +
                  " unlabeled rows, expected " + std::to_string(rd.unlabeled.rows()));
    rd.external[p.id] = PseudoLabels{
        Eigen::Map<const Vector>(lab.columns[0].data(), static_cast<Eigen::Index>(lab.rows)),
        Eigen::Map<const Vector>(unl.columns[0].data(), static_cast<Eigen::Index>(unl.rows))};
  }
  return rd;
}

inline Predictor build_predictor(const PredictorSpec& spec, const LabeledData& training) {
  if (spec.kind == "knn") return train_knn(training, spec.k, spec.id);
  if (spec.kind == "boosted_stumps")
    return train_boosted_stumps(training, spec.rounds, spec.learn_rate, spec.id);
  if (spec.kind == "noisy_oracle") {
    if (static_cast<Eigen::Index>(spec.theta.size()) != training.cols())
      throw Error("noisy_oracle '" + spec.id + "': theta has length " +
                  std::to_string(spec.theta.size()) + ", expected " + std::to_string(training.cols()));
    return make_noisy_oracle(
        spec.id, NoisyOracleParams{Eigen::Map<const Vector>(spec.theta.data(),
                                                            static_cast<Eigen::Index>(spec.theta.size())),
                                   spec.mu_eps, spec.sigma_eps, spec.seed});
  }
  throw Error("predictor '" + spec.id + "' of kind '" + spec.kind + "' cannot be trained");
}

// Pseudo-labels for labeled rows `rows` (all rows when empty) of rd.labeled.
inline PseudoLabelSet make_pseudo_labels(const RunConfig& cfg, const RealData& rd,
                                         const LabeledData& train,
                                         const std::vector<Eigen::Index>* rows) {
  PseudoLabelSet out;
  for (const auto& p : cfg.predictors) {
    if (p.kind == "external") {
      const auto& ext = rd.external.at(p.id);
      out[p.id] = PseudoLabels{rows ? take_rows(ext.labeled, *rows) : ext.labeled, ext.unlabeled};
      continue;
    }
    const auto pred = build_predictor(p, rd.predictor_training ? *rd.predictor_training : train);
    if (pred.warning())
      std::cerr << "warning: predictor '" << p.id << "' has no usable split; it predicts the mean\n";
    out[p.id] = PseudoLabels{predict_batch(pred, train.X), predict_batch(pred, rd.unlabeled.Xtilde)};
  }
  return out;
}

inline std::vector<std::string> predictor_ids(const RunConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& p : cfg.predictors) ids.push_back(p.id);
  return ids;
}

struct FittedPanel {
  LabeledData train;  // with intercept column when enabled
  UnlabeledData unlabeled;
  Vector pvalues;
  StrategyGrid grid;
  std::vector<StrategyFit> fits;
  double sigma2 = 0.0;
  PseudoLabelSet pseudo;
};

// p-value ranking, nested models, grid, and per-strategy fits on `train`.
inline FittedPanel fit_panel(const RunConfig& cfg, const LabeledData& train,
                             const UnlabeledData& unlabeled, PseudoLabelSet pseudo) {
  FittedPanel fp;
  fp.pvalues = coefficient_pvalues(train, PValueOptions{cfg.grid.pvalue_mode, cfg.grid.intercept});
  auto sizes = cfg.grid.sizes;
  if (sizes.empty())
    for (int k = 1; k <= train.cols(); ++k) sizes.push_back(k);
  auto models = build_nested_models(fp.pvalues, sizes);
  if (cfg.grid.intercept) {
    models = with_intercept_column(std::move(models));
    fp.train = with_intercept(train);
    fp.unlabeled = with_intercept(unlabeled);
  } else {
    fp.train = train;
    fp.unlabeled = unlabeled;
  }
  fp.grid = enumerate_strategies(models, cfg.grid.lambdas, predictor_ids(cfg));
  fp.pseudo = std::move(pseudo);
  fp.fits = fit_grid(fp.grid, fp.train, fp.unlabeled, fp.pseudo);
  fp.sigma2 = estimate_sigma2(fp.train, fp.grid.largest_model());
  return fp;
}

inline std::vector<MethodResult> run_panel(const RunConfig& cfg, const FittedPanel& fp,
                                           const Matrix* X_eval) {
  const PanelInputs in{fp.grid,  fp.fits,     fp.train,
                       fp.unlabeled, fp.pseudo, fp.sigma2,
                       cfg.solver, dense_lambda_grid(cfg.ppi_lambda_steps)};
  return run_method_panel(in, resolve_methods(cfg.methods, fp.grid), X_eval);
}

// ---------------------------------------------------------------------------
// Commands

inline std::string simulation_rep_csv(const std::vector<std::tuple<double, int, ReplicationResult>>& cells,
                                      bool in_sample) {
  std::ostringstream os;
  os << "r2,n,rep,method,omse" << (in_sample ? ",in_sample_mse" : "") << '\n';
  for (const auto& [r2, n, rr] : cells)
    for (const auto& s : rr.scores) {
      os << format_double(r2) << ',' << n << ',' << rr.rep_index << ',' << s.method << ','
         << format_double(s.omse);
      if (in_sample) os << ',' << format_double(s.in_sample_mse);
      os << '\n';
    }
  return os.str();
}

inline void run_simulate(const RunConfig& cfg) {
  const auto r2s = cfg.simulation.r2_values.empty() ? std::vector<double>{cfg.dgp.r2}
                                                    : cfg.simulation.r2_values;
  const auto ns = cfg.simulation.n_values.empty() ? std::vector<int>{cfg.dgp.n}
                                                  : cfg.simulation.n_values;
  const int reps = cfg.simulation.reps;

  std::vector<std::tuple<double, int, ReplicationResult>> per_rep;
  std::ostringstream summary;
  summary << "r2,n,method,mean_omse,relative_omse,se,mean_relative_per_rep\n";
  json cells = json::array();
  for (double r2 : r2s)
    for (int n : ns) {
      auto dgp = cfg.dgp;
      dgp.r2 = r2;
      dgp.n = n;
      const auto results = run_replications(dgp, reps, cfg.threads);
      for (const auto& row : aggregate(results, "PUMA"))
        summary << format_double(r2) << ',' << n << ',' << row.method << ','
                << format_double(row.mean_omse) << ',' << format_double(row.relative_omse) << ','
                << format_double(row.se_omse) << ',' << format_double(row.mean_relative_per_rep)
                << '\n';
      std::vector<std::uint64_t> seeds;
      for (const auto& r : results) {
        seeds.push_back(r.seed_used);
        per_rep.emplace_back(r2, n, r);
      }
      cells.push_back({{"r2", r2}, {"n", n}, {"n_test", dgp.test_rows()}, {"replication_seeds", seeds}});
    }

  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir / "omse_per_rep.csv", simulation_rep_csv(per_rep, cfg.simulation.in_sample));
  write_file_atomic(cfg.out_dir / "summary.csv", summary.str());
  json manifest{{"command", "simulate"},
                {"config", to_json(cfg)},
                {"seed_schedule", "replication r uses splitmix64(splitmix64(dgp.seed) ^ r)"},
                {"aggregation", "relative_omse = mean(OMSE) / mean(OMSE of PUMA); "
                                "mean_relative_per_rep = mean over replications of OMSE / OMSE of PUMA"},
                {"cells", std::move(cells)},
                {"outputs", {"omse_per_rep.csv", "summary.csv"}}};
  write_file_atomic(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");
}

inline void run_fit(const RunConfig& cfg) {
  const auto rd = load_real_data(cfg);
  auto pseudo = make_pseudo_labels(cfg, rd, rd.labeled, nullptr);
  const auto fp = fit_panel(cfg, rd.labeled, rd.unlabeled, std::move(pseudo));
  const auto model = fit_averaged_model(fp.grid, fp.fits, fp.train.Y, fp.sigma2, cfg.solver);

  ModelFile mf{rd.labeled.column_names, cfg.grid.intercept, cfg.data.outcome, model, fp.pvalues};
  const auto path = cfg.model.empty() ? cfg.out_dir / "model.json" : cfg.model;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, to_json(mf).dump(2) + "\n");

  json methods = json::array();
  for (const auto& r : run_panel(cfg, fp, nullptr)) methods.push_back(to_json(r));
  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir / "methods.json",
                    json{{"columns", fp.train.column_names}, {"methods", std::move(methods)}}.dump(2) + "\n");
}

inline void run_predict(const RunConfig& cfg) {
  if (cfg.model.empty()) throw ConfigError("predict needs a model file (--model or 'model')");
  if (cfg.input.empty()) throw ConfigError("predict needs a covariate CSV (--input or 'input')");
  std::ifstream in(cfg.model);
  if (!in) throw Error("cannot open model file '" + cfg.model.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("model file '" + cfg.model.string() + "' is not valid JSON: " + e.what());
  }
  const auto mf = model_from_json(j);
  const auto data = load_unlabeled_csv(cfg.input, mf.columns);
  const Matrix X = mf.intercept ? with_intercept(data.Xtilde) : data.Xtilde;
  const Vector pred = predict(mf.model.theta_avg, X);

  std::ostringstream os;
  os << "prediction\n";
  for (Eigen::Index i = 0; i < pred.size(); ++i) os << format_double(pred(i)) << '\n';
  const auto path = cfg.output.empty() ? cfg.out_dir / "predictions.csv" : cfg.output;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, os.str());
}

inline void run_evaluate(const RunConfig& cfg) {
  const auto rd = load_real_data(cfg);
  const auto& ratios = cfg.split.ratios;
  const int repeats = cfg.split.repeats;

  struct SplitResult {
    std::vector<std::string> methods;
    std::vector<double> pmse;
  };
  std::vector<SplitResult> results(ratios.size() * static_cast<std::size_t>(repeats));

  parallel_for(static_cast<int>(results.size()), cfg.threads, [&](int task) {
    const auto ri = static_cast<std::size_t>(task / repeats);
    const int rep = task % repeats;
    const SplitSpec spec{ratios[ri], derive_seed(derive_seed(cfg.split.seed, ri), static_cast<std::uint64_t>(rep))};
    try {
      const auto [train_idx, test_idx] = split_indices(rd.labeled.rows(), spec);
      const auto train = take_rows(rd.labeled, train_idx);
      const auto test = take_rows(rd.labeled, test_idx);
      const auto fp = fit_panel(cfg, train, rd.unlabeled, make_pseudo_labels(cfg, rd, train, &train_idx));
      const Matrix X_eval = cfg.grid.intercept ? with_intercept(test.X) : test.X;
      auto& out = results[static_cast<std::size_t>(task)];
      for (const auto& r : run_panel(cfg, fp, &X_eval)) {
        out.methods.push_back(r.id.name());
        out.pmse.push_back((test.Y - r.predictions).squaredNorm() / static_cast<double>(test.Y.size()));
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("split ratio " + format_double(ratios[ri]) + " repeat " + std::to_string(rep) + ": " + e.what());
    }
  });

  std::ostringstream per_split, table;
  per_split << "ratio,repeat,method,pmse,scaled_pmse\n";
  table << "ratio,method,mean_pmse,se_pmse,mean_scaled_pmse,se_scaled_pmse\n";
  for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
    const auto& methods = results[ri * static_cast<std::size_t>(repeats)].methods;
    const std::size_t k = methods.size();
    std::vector<std::vector<double>> raw(k), scaled(k);
    for (int rep = 0; rep < repeats; ++rep) {
      const auto& r = results[ri * static_cast<std::size_t>(repeats) + static_cast<std::size_t>(rep)];
      const double lowest = *std::min_element(r.pmse.begin(), r.pmse.end());
      for (std::size_t m = 0; m < k; ++m) {
        raw[m].push_back(r.pmse[m]);
        scaled[m].push_back(r.pmse[m] - lowest);
        per_split << format_double(ratios[ri]) << ',' << rep << ',' << methods[m] << ','
                  << format_double(r.pmse[m]) << ',' << format_double(r.pmse[m] - lowest) << '\n';
      }
    }
    auto mean_se = [](const std::vector<double>& v) {
      const double n = static_cast<double>(v.size());
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= n;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      return std::pair{mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0};
    };
    for (std::size_t m = 0; m < k; ++m) {
      const auto [pm, pse] = mean_se(raw[m]);
      const auto [sm, sse] = mean_se(scaled[m]);
      table << format_double(ratios[ri]) << ',' << methods[m] << ',' << format_double(pm) << ','
            << format_double(pse) << ',' << format_double(sm) << ',' << format_double(sse) << '\n';
    }
  }

  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir / "pmse_per_split.csv", per_split.str());
  write_file_atomic(cfg.out_dir / "pmse.csv", table.str());
  json manifest{{"command", "evaluate"},
                {"config", to_json(cfg)},
                {"seed_schedule", "split (ratio i, repeat r) uses derive_seed(derive_seed(split.seed, i), r)"},
                {"scaled_pmse", "PMSE minus the lowest PMSE among all methods in the same split"},
                {"n_labeled", rd.labeled.rows()},
                {"n_unlabeled", rd.unlabeled.rows()},
                {"outputs", {"pmse_per_split.csv", "pmse.csv"}}};
  write_file_atomic(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");
}

// Loads the config for `mode` and runs the command; returns the exit code.
inline int run_command(Mode mode, const CliOptions& opt, std::ostream& err = std::cerr) {
  try {
    const auto cfg = load_config(opt, mode);
    switch (mode) {
      case Mode::Simulate: run_simulate(cfg); break;
      case Mode::Fit: run_fit(cfg); break;
      case Mode::Predict: run_predict(cfg); break;
      case Mode::Evaluate: run_evaluate(cfg); break;
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace puma::cli
