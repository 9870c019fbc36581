#include "coopsafe/qp.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace coopsafe::qp;

namespace {

QpProblem make(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& G, const Eigen::VectorXd& q)
{
  QpProblem p;
  p.Q = Q;
  p.G = G;
  p.q = q;
  p.dq_du_rl = Eigen::MatrixXd::Zero(G.rows(), 0);
  p.dq_dtheta = Eigen::MatrixXd::Zero(G.rows(), 0);
  return p;
}

Eigen::MatrixXd scalar(double x) { return Eigen::MatrixXd::Constant(1, 1, x); }

// Random strictly convex instance, feasible by construction around w0.
QpProblem random_qp(std::mt19937_64& rng)
{
  std::uniform_int_distribution<int> dim_d(1, 8), rows_d(1, 12);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> slack_d(0.05, 1.0);
  const int dim = dim_d(rng);
  const int rows = rows_d(rng);
  Eigen::MatrixXd a(dim, dim);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) {
      a(r, c) = n01(rng);
    }
  }
  QpProblem p;
  p.Q = a * a.transpose() + Eigen::MatrixXd::Identity(dim, dim);
  p.G.resize(rows, dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < dim; ++c) {
      p.G(r, c) = n01(rng);
    }
  }
  Eigen::VectorXd w0(dim);
  for (int c = 0; c < dim; ++c) {
    w0(c) = n01(rng);
  }
  // Rows with G w0 < 0 tend to bind at the optimum; w0 keeps the set nonempty.
  p.q.resize(rows);
  for (int r = 0; r < rows; ++r) {
    p.q(r) = p.G.row(r).dot(w0) + slack_d(rng);
  }
  p.dq_du_rl.resize(rows, 2);
  p.dq_dtheta.resize(rows, 3);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < 2; ++c) {
      p.dq_du_rl(r, c) = n01(rng);
    }
    for (int c = 0; c < 3; ++c) {
      p.dq_dtheta(r, c) = n01(rng);
    }
  }
  return p;
}

bool strictly_complementary(const QpProblem& p, const QpSolution& s)
{
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double slack = p.q(r) - p.G.row(r).dot(s.w);
    if (s.lambda(r) < 1e-5 && slack < 1e-5) {
      return false;
    }
  }
  return true;
}

// Central differences of solve() along one column of a Jacobian.
Eigen::VectorXd fd_column(const QpProblem& p, const Eigen::VectorXd& dq, double h)
{
  QpProblem plus = p, minus = p;
  plus.q += h * dq;
  minus.q -= h * dq;
  const auto sp = solve(plus);
  const auto sm = solve(minus);
  EXPECT_TRUE(sp.optimal() && sm.optimal());
  return (sp.w - sm.w) / (2.0 * h);
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
  const double scale = std::max({a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>(), 1e-6});
  return (a - b).lpNorm<Eigen::Infinity>() / scale;
}

} // namespace

TEST(QpSolve, UnconstrainedMinimumIsZero)
{
  const auto p = make(Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd(0, 3), Eigen::VectorXd(0));
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_LT(s.w.norm(), 1e-14);
}

TEST(QpSolve, OneDimensionalActiveRow)
{
  // min 1/2 w^2 s.t. -w <= -2
  const auto s = solve(make(scalar(1.0), scalar(-1.0), Eigen::VectorXd::Constant(1, -2.0)));
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.w(0), 2.0, 1e-12);
  EXPECT_NEAR(s.lambda(0), 2.0, 1e-12);
  EXPECT_EQ(s.active_set, (std::vector<Eigen::Index>{0}));
}

TEST(QpSolve, OneDimensionalInactiveRow)
{
  const auto s = solve(make(scalar(1.0), scalar(1.0), Eigen::VectorXd::Constant(1, 5.0)));
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.w(0), 0.0, 1e-14);
  EXPECT_NEAR(s.lambda(0), 0.0, 1e-14);
  EXPECT_TRUE(s.active_set.empty());
}

TEST(QpSolve, ReportsInfeasibility)
{
  Eigen::MatrixXd G(2, 1);
  G << 1.0, -1.0;
  Eigen::VectorXd q(2);
  q << -1.0, -1.0; // w <= -1 and w >= 1
  EXPECT_EQ(solve(make(scalar(1.0), G, q)).status, Status::Infeasible);
}

TEST(QpSolve, RejectsIndefiniteHessian)
{
  EXPECT_THROW(solve(make(scalar(-1.0), Eigen::MatrixXd(0, 1), Eigen::VectorXd(0))), std::invalid_argument);
}

TEST(QpSolve, RejectsInconsistentDimensions)
{
  auto p = make(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Ones(1, 3), Eigen::VectorXd::Zero(1));
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(QpSolve, KktResidualsOnRandomInstances)
{
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto p = random_qp(rng);
    const auto s = solve(p);
    ASSERT_TRUE(s.optimal()) << "trial " << trial;
    const auto r = kkt_residuals(p, s);
    EXPECT_LE(r.stationarity, 1e-6);
    EXPECT_LE(r.primal, 1e-8);
    EXPECT_LE(r.complementarity, 1e-6);
    EXPECT_LE(r.dual, 0.0);
  }
}

TEST(QpSolve, PerturbThenRestoreReturnsSameSolution)
{
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_qp(rng);
    const auto s0 = solve(p);
    p.q.array() += 0.3;
    (void)solve(p);
    p.q.array() -= 0.3;
    const auto s1 = solve(p);
    EXPECT_LT((s0.w - s1.w).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST(QpSolve, DeterministicForFixedInput)
{
  std::mt19937_64 rng(3);
  const auto p = random_qp(rng);
  const auto a = solve(p);
  const auto b = solve(p);
  EXPECT_EQ(a.w, b.w);
  EXPECT_EQ(a.lambda, b.lambda);
}

TEST(QpDifferentiate, OneDimensionalActiveGivesMinusOne)
{
  // w >= c - u_rl written as -w <= u_rl - c; w* = c - u_rl.
  auto p = make(scalar(1.0), scalar(-1.0), Eigen::VectorXd::Constant(1, 0.5 - 3.0));
  p.dq_du_rl = scalar(1.0);
  const auto s = solve(p);
  const auto d = differentiate(p, s);
  EXPECT_NEAR(d.dw_du_rl(0, 0), -1.0, 1e-12);
  EXPECT_FALSE(d.degenerate);
}

TEST(QpDifferentiate, InactiveGivesZero)
{
  auto p = make(scalar(1.0), scalar(1.0), Eigen::VectorXd::Constant(1, 5.0));
  p.dq_du_rl = scalar(1.0);
  const auto s = solve(p);
  const auto d = differentiate(p, s);
  EXPECT_EQ(d.dw_du_rl(0, 0), 0.0);
  Eigen::VectorXd dir = Eigen::VectorXd::Ones(1);
  EXPECT_LT(grad_check(p, s, dir, ParamBlock::URl).max_rel_error, 1e-12);
}

TEST(QpDifferentiate, WeaklyActiveRowIsFlagged)
{
  // Row w <= 0 touches the unconstrained optimum with lambda = 0.
  auto p = make(scalar(1.0), scalar(1.0), Eigen::VectorXd::Zero(1));
  p.dq_du_rl = scalar(1.0);
  const auto s = solve(p);
  EXPECT_TRUE(weakly_active(p, s));
  const auto check = grad_check(p, s, Eigen::VectorXd::Ones(1), ParamBlock::URl);
  EXPECT_TRUE(check.degenerate);
}

TEST(QpDifferentiate, MatchesFiniteDifferencesOnRandomInstances)
{
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 2000 && checked < 100; ++trial) {
    const auto p = random_qp(rng);
    const auto s = solve(p);
    if (!s.optimal() || !strictly_complementary(p, s)) {
      continue;
    }
    ++checked;
    const auto d = differentiate(p, s);
    EXPECT_FALSE(d.degenerate);
    for (Eigen::Index c = 0; c < p.dq_du_rl.cols(); ++c) {
      EXPECT_LE(rel_err(d.dw_du_rl.col(c), fd_column(p, p.dq_du_rl.col(c), 1e-5)), 1e-4);
    }
    for (Eigen::Index c = 0; c < p.dq_dtheta.cols(); ++c) {
      EXPECT_LE(rel_err(d.dw_dtheta.col(c), fd_column(p, p.dq_dtheta.col(c), 1e-5)), 1e-4);
    }
    EXPECT_LE(grad_check(p, s, Eigen::VectorXd::Ones(2), ParamBlock::URl).max_rel_error, 1e-4);
  }
  EXPECT_EQ(checked, 100);
}
