#include <gtest/gtest.h>

#include "oracles.hpp"
#include "puma/ppi_fit.hpp"

using namespace puma;

namespace {

struct Tiny {
  LabeledData L;
  UnlabeledData U;
  Vector f_lab, f_unlab;
};

// n = N = 2, one column of ones, Y = (1, 3), f = 0.
Tiny tiny() {
  Tiny t;
  t.L.X = Matrix::Ones(2, 1);
  t.L.Y = Vector(2);
  t.L.Y << 1, 3;
  t.L.column_names = {"x"};
  t.U.Xtilde = Matrix::Ones(2, 1);
  t.U.column_names = {"x"};
  t.f_lab = Vector::Zero(2);
  t.f_unlab = Vector::Zero(2);
  return t;
}

Strategy all_columns(Eigen::Index q, double lambda) {
  CandidateModel m;
  for (Eigen::Index j = 0; j < q; ++j) m.columns.push_back(j);
  return Strategy{m, lambda, "f", 0};
}

}  // namespace

TEST(RectifiedLoss, LambdaZeroIsLabeledLoss) {
  oracle::Gen g(1);
  const auto in = oracle::random_instance(g, 30, 90, 3);
  const Vector theta = g.vector(3);
  const double expected = (in.L.X * theta - in.L.Y).squaredNorm() / 60.0;
  EXPECT_NEAR(rectified_loss(all_columns(3, 0.0), in.L, in.U, in.f_lab, in.f_unlab, theta), expected, 1e-13);
}

TEST(RectifiedLoss, ZeroPseudoLabelsSubstitution) {
  oracle::Gen g(2);
  const auto in = oracle::random_instance(g, 30, 90, 3);
  const Vector theta = g.vector(3);
  const Vector f0 = Vector::Zero(30), ft0 = Vector::Zero(90);
  const double base = rectified_loss(all_columns(3, 0.0), in.L, in.U, f0, ft0, theta);
  const double lambda = 0.4;
  const double expected = base + lambda * ((in.U.Xtilde * theta).squaredNorm() / 180.0 -
                                           (in.L.X * theta).squaredNorm() / 60.0);
  EXPECT_NEAR(rectified_loss(all_columns(3, lambda), in.L, in.U, f0, ft0, theta), expected, 1e-12);
}

TEST(RectifiedLoss, TinyHandValue) {
  const auto t = tiny();
  EXPECT_DOUBLE_EQ(rectified_loss(all_columns(1, 0.5), t.L, t.U, t.f_lab, t.f_unlab, Vector::Constant(1, 2.0)), 0.5);
}

TEST(RectifiedLoss, MatchesRowwiseOracle) {
  oracle::Gen g(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto in = oracle::random_instance(g, 25, 60, 4);
    const Strategy s{CandidateModel{{3, 1}}, g.uniform(), "f", 0};
    const Vector theta = g.vector(2);
    const double lib = rectified_loss(s, in.L, in.U, in.f_lab, in.f_unlab, theta);
    const double ref = oracle::rectified_loss(oracle::select(in.L.X, {3, 1}), in.L.Y, in.f_lab,
                                              oracle::select(in.U.Xtilde, {3, 1}), in.f_unlab, s.lambda, theta);
    EXPECT_NEAR(lib, ref, 1e-12 * std::max(1.0, std::fabs(ref)));
  }
}

TEST(FitStrategy, TinyInstanceMatchesLineSearch) {
  const auto t = tiny();
  const auto fit = fit_strategy(all_columns(1, 0.5), t.L, t.U, t.f_lab, t.f_unlab);
  EXPECT_NEAR(fit.theta_full(0), 2.0, 1e-14);
  // Golden-section search on the scalar loss as the independent check.
  auto loss = [&](double th) {
    return oracle::rectified_loss(t.L.X, t.L.Y, t.f_lab, t.U.Xtilde, t.f_unlab, 0.5, Vector::Constant(1, th));
  };
  double a = -10, b = 10;
  const double phi = (std::sqrt(5.0) - 1) / 2;
  for (int i = 0; i < 200; ++i) {
    const double c = b - phi * (b - a), d = a + phi * (b - a);
    (loss(c) < loss(d) ? b : a) = (loss(c) < loss(d) ? d : c);
  }
  EXPECT_NEAR(fit.theta_full(0), 0.5 * (a + b), 1e-6);
}

TEST(FitStrategy, LambdaZeroIsOls) {
  oracle::Gen g(4);
  const auto in = oracle::random_instance(g, 40, 100, 5);
  const Strategy s{CandidateModel{{4, 0, 2}}, 0.0, "f", 3};
  const auto fit = fit_strategy(s, in.L, in.U, in.f_lab, in.f_unlab);
  const Vector ols = oracle::ols(oracle::select(in.L.X, {4, 0, 2}), in.L.Y);
  EXPECT_NEAR(fit.theta_full(4), ols(0), 1e-10);
  EXPECT_NEAR(fit.theta_full(0), ols(1), 1e-10);
  EXPECT_NEAR(fit.theta_full(2), ols(2), 1e-10);
  EXPECT_EQ(fit.theta_full(1), 0.0);
  EXPECT_EQ(fit.theta_full(3), 0.0);
  EXPECT_NEAR(fit.hat_trace, 3.0, 1e-10);
  EXPECT_EQ(fit.strategy_index, 3);
  EXPECT_NEAR(fit.sigma2_m, (in.L.Y - in.L.X * fit.theta_full).squaredNorm() / 40.0, 1e-12);
}

TEST(FitStrategy, ClosedFormMatchesGradientDescent) {
  oracle::Gen g(5);
  for (int rep = 0; rep < 20; ++rep) {
    const int q = 4;
    const auto in = oracle::random_instance(g, 30, 80, q);
    const int k = g.integer(1, 4);
    std::vector<Eigen::Index> c{0, 1, 2, 3};
    std::shuffle(c.begin(), c.end(), g.eng);
    c.resize(static_cast<std::size_t>(k));
    const double lambda = std::vector<double>{0.25, 0.5, 0.75, 1.0}[static_cast<std::size_t>(rep % 4)];
    const Strategy s{CandidateModel{c}, lambda, "f", rep};
    const auto fit = fit_strategy(s, in.L, in.U, in.f_lab, in.f_unlab);
    const Matrix Xm = oracle::select(in.L.X, c), Xtm = oracle::select(in.U.Xtilde, c);
    const Vector gd = oracle::gradient_descent(Xm, in.L.Y, in.f_lab, Xtm, in.f_unlab, lambda);
    Vector theta(k);
    for (int j = 0; j < k; ++j) theta(j) = fit.theta_full(c[static_cast<std::size_t>(j)]);
    EXPECT_LT((theta - gd).lpNorm<Eigen::Infinity>(), 1e-6) << "rep " << rep;

    // Central finite differences of the loss at the closed-form solution.
    for (int j = 0; j < k; ++j) {
      Vector up = theta, dn = theta;
      up(j) += 1e-6;
      dn(j) -= 1e-6;
      const double fd = (rectified_loss(s, in.L, in.U, in.f_lab, in.f_unlab, up) -
                         rectified_loss(s, in.L, in.U, in.f_lab, in.f_unlab, dn)) / 2e-6;
      EXPECT_LT(std::fabs(fd), 1e-5);
    }
  }
}

TEST(FitStrategy, NormalEquationResidual) {
  oracle::Gen g(6);
  const auto in = oracle::random_instance(g, 50, 120, 4);
  const Strategy s{CandidateModel{{0, 1, 3}}, 0.6, "f", 0};
  const auto fit = fit_strategy(s, in.L, in.U, in.f_lab, in.f_unlab);
  const Matrix Xm = select_columns(in.L.X, s.model), Xtm = select_columns(in.U.Xtilde, s.model);
  const double r = 50.0 / 120.0;
  const auto psi = build_psi(s, Xm, Xtm, r);
  const Vector rhs = normal_rhs(s, Xm, Xtm, in.L.Y, in.f_lab, in.f_unlab, r);
  Vector theta(3);
  theta << fit.theta_full(0), fit.theta_full(1), fit.theta_full(3);
  EXPECT_LE((psi.psi * theta - rhs).lpNorm<Eigen::Infinity>(), 1e-9 * rhs.norm());
  EXPECT_LT((psi.psi - psi.psi.transpose()).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_GT(psi.min_pivot(), 0.0);
}

TEST(FitStrategy, EmbeddingAndDecomposition) {
  oracle::Gen g(7);
  const auto in = oracle::random_instance(g, 35, 70, 5);
  const Strategy s{CandidateModel{{2, 4}}, 0.8, "f", 0};
  const auto fit = fit_strategy(s, in.L, in.U, in.f_lab, in.f_unlab);
  EXPECT_LT((in.L.X * fit.theta_full - fit.mu_hat).lpNorm<Eigen::Infinity>(), 1e-12);
  const auto comp = fitted_components(s, in.L, in.U, in.f_lab, in.f_unlab);
  EXPECT_LT((comp.PY + comp.phi - comp.psi - fit.mu_hat).lpNorm<Eigen::Infinity>(), 1e-10);
  // hat_trace against the explicit smoother P = Xm Psi^{-1} Xm'.
  const Matrix Xm = select_columns(in.L.X, s.model), Xtm = select_columns(in.U.Xtilde, s.model);
  const double r = 35.0 / 70.0;
  const Matrix Psi = (1 - 0.8) * Xm.transpose() * Xm + r * 0.8 * Xtm.transpose() * Xtm;
  const Matrix P = Xm * Psi.fullPivLu().inverse() * Xm.transpose();
  EXPECT_NEAR(fit.hat_trace, P.trace(), 1e-10);
}

TEST(FitStrategy, AffineInY) {
  oracle::Gen g(8);
  auto in = oracle::random_instance(g, 30, 60, 3);
  const Strategy s{CandidateModel{{0, 2}}, 0.5, "f", 0};
  const auto a = fit_strategy(s, in.L, in.U, in.f_lab, in.f_unlab);
  const Vector delta = g.vector(30);
  const Matrix Xm = select_columns(in.L.X, s.model), Xtm = select_columns(in.U.Xtilde, s.model);
  const Matrix Psi = 0.5 * Xm.transpose() * Xm + 0.5 * 0.5 * Xtm.transpose() * Xtm;
  const Vector Pdelta = Xm * Psi.fullPivLu().solve(Xm.transpose() * delta);
  in.L.Y += delta;
  const auto b = fit_strategy(s, in.L, in.U, in.f_lab, in.f_unlab);
  EXPECT_LT((b.mu_hat - a.mu_hat - Pdelta).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(FitStrategy, SingularPsiNamesTheStrategy) {
  oracle::Gen g(9);
  auto in = oracle::random_instance(g, 30, 2, 3);  // N < k at lambda = 1
  const Strategy s{CandidateModel{{0, 1, 2}}, 1.0, "ML7", 12};
  try {
    fit_strategy(s, in.L, in.U, in.f_lab, in.f_unlab);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("strategy 12"), std::string::npos) << msg;
    EXPECT_NE(msg.find("ML7"), std::string::npos) << msg;
  }
}

TEST(FitStrategy, LengthMismatchRejected) {
  oracle::Gen g(10);
  const auto in = oracle::random_instance(g, 30, 60, 3);
  EXPECT_THROW(fit_strategy(all_columns(3, 0.5), in.L, in.U, Vector::Zero(29), in.f_unlab), Error);
  EXPECT_THROW(fit_strategy(all_columns(3, 0.5), in.L, in.U, in.f_lab, Vector::Zero(61)), Error);
}

TEST(Predict, Examples) {
  oracle::Gen g(11);
  const Matrix X = g.matrix(9, 4);
  EXPECT_EQ(predict(Vector::Zero(4), X), Vector::Zero(9));
  const Vector theta = g.vector(4);
  EXPECT_DOUBLE_EQ(predict(theta, Matrix(Vector::Unit(4, 2).transpose()))(0), theta(2));
  EXPECT_LT((predict(theta, X) - oracle::naive_matvec(X, theta)).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_THROW(predict(theta, g.matrix(2, 3)), Error);
}

TEST(FitGrid, FitsEveryStrategyInOrder) {
  oracle::Gen g(12);
  const auto in = oracle::random_instance(g, 40, 100, 3);
  const auto grid = enumerate_strategies({CandidateModel{{0}}, CandidateModel{{0, 1}}}, {0.0, 0.5}, {"a", "b"});
  PseudoLabelSet pseudo{{"a", {in.f_lab, in.f_unlab}}, {"b", {in.f_lab * 2, in.f_unlab * 2}}};
  const auto fits = fit_grid(grid, in.L, in.U, pseudo);
  ASSERT_EQ(fits.size(), 8u);
  for (int m = 0; m < 8; ++m) {
    const auto& f = lookup(pseudo, grid[m].predictor_id);
    const auto direct = fit_strategy(grid[m], in.L, in.U, f.labeled, f.unlabeled);
    EXPECT_EQ(fits[static_cast<std::size_t>(m)].theta_full, direct.theta_full);
  }
  EXPECT_THROW(fit_grid(grid, in.L, in.U, PseudoLabelSet{{"a", {in.f_lab, in.f_unlab}}}), Error);
}
