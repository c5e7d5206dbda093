#include <gtest/gtest.h>

#include "puma/simulation.hpp"

using namespace puma;

namespace {

Matrix sample_cov(const Matrix& X) {
  const Matrix C = X.rowwise() - X.colwise().mean();
  return C.transpose() * C / static_cast<double>(X.rows() - 1);
}

}  // namespace

TEST(GenDesign, IndependentCase) {
  DgpConfig cfg;
  cfg.rho = 0.0;
  const Matrix X = gen_design(cfg, 100000, 5);
  EXPECT_LT((sample_cov(X) - Matrix::Identity(6, 6)).lpNorm<Eigen::Infinity>(), 0.02);
}

TEST(GenDesign, Ar1Correlation) {
  DgpConfig cfg;
  const Matrix X = gen_design(cfg, 100000, 6);
  const Matrix S = sample_cov(X);
  EXPECT_NEAR(S(0, 1) / std::sqrt(S(0, 0) * S(1, 1)), 0.5, 0.02);
  EXPECT_NEAR(S(0, 2) / std::sqrt(S(0, 0) * S(2, 2)), 0.25, 0.02);
}

TEST(GenDesign, Deterministic) {
  DgpConfig cfg;
  EXPECT_EQ(gen_design(cfg, 50, 9), gen_design(cfg, 50, 9));
  EXPECT_NE(gen_design(cfg, 50, 9), gen_design(cfg, 50, 10));
  EXPECT_THROW(gen_design(cfg, 0, 9), Error);
}

TEST(ScaleTheta, MidpointAndInversion) {
  DgpConfig cfg;
  const Matrix S = ar1_covariance(6, 0.5);
  const Vector t = cfg.base_theta();
  const double signal = t.dot(S * t);
  EXPECT_NEAR(scale_theta_for_r2(t, S, 0.5, 1.0)(0), 1.0 / std::sqrt(signal), 1e-15);
  for (int i = 1; i <= 9; ++i) {
    const double r2 = i / 10.0;
    const Vector c = scale_theta_for_r2(t, S, r2, 1.0);
    const double v = c.dot(S * c);
    EXPECT_NEAR(v / (v + 1.0), r2, 1e-12);
  }
  EXPECT_THROW(scale_theta_for_r2(Vector::Zero(6), S, 0.5, 1.0), Error);
  EXPECT_THROW(scale_theta_for_r2(t, S, 1.0, 1.0), Error);
}

TEST(ScaleTheta, EmpiricalRSquared) {
  DgpConfig cfg;
  cfg.r2 = 0.3;
  const auto [theta, s2] = resolve_signal(cfg);
  const Matrix X = gen_design(cfg, 1000000, 77);
  const Vector mu = X * theta;
  const Vector y = mu + std::sqrt(s2) * gen_normals(X.rows(), 78);
  auto var = [](const Vector& v) { return (v.array() - v.mean()).square().mean(); };
  EXPECT_NEAR(var(mu) / var(y), 0.3, 0.01);
}

TEST(ScaleSigma, KeepsThetaAndHitsTarget) {
  DgpConfig cfg;
  cfg.r2_mode = R2Mode::ScaleSigma;
  cfg.r2 = 0.2;
  const auto [theta, s2] = resolve_signal(cfg);
  EXPECT_EQ(theta, cfg.base_theta());
  const double v = theta.dot(ar1_covariance(6, 0.5) * theta);
  EXPECT_NEAR(v / (v + s2), 0.2, 1e-12);
}

TEST(Replication, DeterministicAndOrderFree) {
  DgpConfig cfg;
  cfg.n = 40;
  const auto a = run_replication(cfg, 3);
  const auto b = run_replication(cfg, 3);
  ASSERT_EQ(a.scores.size(), b.scores.size());
  for (std::size_t i = 0; i < a.scores.size(); ++i) EXPECT_EQ(a.scores[i].omse, b.scores[i].omse);
  EXPECT_EQ(a.weights_puma, b.weights_puma);
  EXPECT_EQ(a.seed_used, replication_seed(cfg.seed, 3));

  const auto serial = run_replications(cfg, 6, 1);
  const auto parallel = run_replications(cfg, 6, 3);
  for (int r = 0; r < 6; ++r)
    for (std::size_t i = 0; i < serial[0].scores.size(); ++i)
      EXPECT_EQ(serial[static_cast<std::size_t>(r)].scores[i].omse, parallel[static_cast<std::size_t>(r)].scores[i].omse);
  EXPECT_EQ(serial[3].scores[0].omse, a.scores[0].omse);
}

TEST(Replication, PanelHasTwelveRowsAndValidWeights) {
  DgpConfig cfg;
  const auto r = run_replication(cfg, 0);
  EXPECT_EQ(r.scores.size(), 12u);
  EXPECT_EQ(r.weights_puma.size(), 50);
  EXPECT_NEAR(r.weights_puma.sum(), 1.0, 1e-12);
  for (const auto& s : r.scores) {
    EXPECT_TRUE(std::isfinite(s.omse));
    EXPECT_GE(s.omse, 0.0);
  }
}

TEST(Replication, SignalFreeOmseIsPredictionEnergy) {
  DgpConfig cfg;
  cfg.r2_mode = R2Mode::SignalFree;
  cfg.methods = {"PUMA", "LARM"};
  const auto d = draw_replication(cfg, 1);
  EXPECT_EQ(d.mu_test, Vector::Zero(d.mu_test.size()));
  const auto r = run_replication(cfg, 1);
  const auto grid = simulation_grid(cfg, d.labeled);
  const auto fits = fit_grid(grid, d.labeled, d.unlabeled, d.pseudo);
  const double s2 = estimate_sigma2(d.labeled, grid.largest_model());
  const auto model = fit_averaged_model(grid, fits, d.labeled.Y, s2, cfg.solver);
  const Vector pred = d.X_test * model.theta_avg;
  EXPECT_NEAR(r.omse("PUMA"), pred.squaredNorm() / static_cast<double>(pred.size()), 1e-14);
}

TEST(Replication, ConsistentAtLargeN) {
  DgpConfig cfg;
  cfg.alpha = 0.0;
  cfg.n = 5000;
  cfg.N = 5000;
  cfg.n_test = 1000;
  const auto r = run_replication(cfg, 0);
  // Equal weights keep a fixed share on the underfit nested models, so PEMA's
  // bias does not vanish; every data-driven weighting does.
  for (const auto& s : r.scores) {
    if (s.method == "PEMA") EXPECT_GT(s.omse, 5 * r.omse("PUMA"));
    else EXPECT_LT(s.omse, 0.01) << s.method;
  }
}

TEST(Replication, ObservedColumnsOnly) {
  DgpConfig cfg;
  const auto d = draw_replication(cfg, 2);
  EXPECT_EQ(d.labeled.cols(), 5);
  EXPECT_EQ(d.unlabeled.cols(), 5);
  EXPECT_EQ(d.X_test.rows(), cfg.n);
  EXPECT_EQ(d.theta_true.size(), 6);
  ASSERT_EQ(d.pseudo.size(), 2u);
}

TEST(Replication, MethodFilterKeepsPuma) {
  DgpConfig cfg;
  cfg.methods = {"LARM"};
  const auto r = run_replication(cfg, 0);
  ASSERT_EQ(r.scores.size(), 2u);
  EXPECT_EQ(r.scores[0].method, "PUMA");
}

TEST(Aggregate, Examples) {
  ReplicationResult r;
  r.scores = {{"A", 2.0, 0.0}, {"B", 1.0, 0.0}};
  const auto rows = aggregate({r}, "B");
  EXPECT_DOUBLE_EQ(rows[0].relative_omse, 2.0);
  EXPECT_DOUBLE_EQ(rows[1].relative_omse, 1.0);
  ReplicationResult zero;
  zero.scores = {{"A", 1.0, 0.0}, {"B", 0.0, 0.0}};
  EXPECT_THROW(aggregate({zero}, "B"), Error);
  EXPECT_THROW(aggregate({}, "B"), Error);
}

TEST(Aggregate, ReferenceIsOneAndCaseOneDirection) {
  DgpConfig cfg;
  const auto rows = aggregate(run_replications(cfg, 100, 2));
  for (const auto& row : rows) {
    if (row.method == "PUMA") EXPECT_DOUBLE_EQ(row.relative_omse, 1.0);
    if (row.method == "PEMA" || row.method == "LARM") EXPECT_GT(row.relative_omse, 1.0) << row.method;
  }
}

TEST(DgpConfig, Validation) {
  DgpConfig cfg;
  cfg.r2 = 1.0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = DgpConfig{};
  cfg.q = 7;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = DgpConfig{};
  cfg.theta_base = {1, 2};
  EXPECT_THROW(validate(cfg), ConfigError);
}
