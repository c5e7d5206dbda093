#include <iostream>

#include <CLI11.hpp>

#include "puma/cli.hpp"

namespace {

void add_common(CLI::App* cmd, puma::cli::CliOptions& opt) {
  cmd->add_option_function<std::string>("--config", [&](const std::string& p) { opt.config = p; },
                                        "JSON run configuration");
  cmd->add_option_function<std::string>("--out-dir", [&](const std::string& p) { opt.out_dir = p; },
                                        "output directory");
  cmd->add_option_function<int>("--threads", [&](int t) { opt.threads = t; }, "worker threads");
  cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { opt.seed = s; },
                                          "base seed (overrides dgp.seed and split.seed)");
  cmd->add_option_function<std::string>("--methods", [&](const std::string& m) { opt.methods = m; },
                                        "comma-separated method names");
}

}  // namespace

int main(int argc, char** argv) {
  using puma::cli::Mode;
  CLI::App app{"Prediction-powered model averaging"};
  app.require_subcommand(1);

  puma::cli::CliOptions opt;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on the synthetic DGP");
  auto* fit = app.add_subcommand("fit", "fit the averaged model on labeled + unlabeled CSVs");
  auto* predict = app.add_subcommand("predict", "apply a saved model to a covariate CSV");
  auto* evaluate = app.add_subcommand("evaluate", "repeated train/test splits on real data");
  for (auto* cmd : {simulate, fit, predict, evaluate}) add_common(cmd, opt);
  fit->add_option_function<std::string>("--model", [&](const std::string& p) { opt.model = p; },
                                        "where to write model.json");
  predict->add_option_function<std::string>("--model", [&](const std::string& p) { opt.model = p; },
                                            "model.json written by fit");
  predict->add_option_function<std::string>("--input", [&](const std::string& p) { opt.input = p; },
                                            "covariate CSV");
  predict->add_option_function<std::string>("--output", [&](const std::string& p) { opt.output = p; },
                                            "predictions CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Mode mode = Mode::Simulate;
  if (fit->parsed()) mode = Mode::Fit;
  else if (predict->parsed()) mode = Mode::Predict;
  else if (evaluate->parsed()) mode = Mode::Evaluate;
  return puma::cli::run_command(mode, opt);
}
