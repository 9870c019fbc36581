#include "coopsafe/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace coopsafe::qp {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Equality-constrained refinement of a converged active set. Returns false
// when the refined point is not a valid KKT point, in which case the
// active-set iterate is kept.
bool polish(const QpProblem& p, const std::vector<Index>& active, VectorXd& w, VectorXd& lambda)
{
  const Index n = p.dim();
  const Index k = static_cast<Index>(active.size());
  if (k == 0) {
    return false;
  }
  MatrixXd kkt = MatrixXd::Zero(n + k, n + k);
  VectorXd rhs = VectorXd::Zero(n + k);
  kkt.topLeftCorner(n, n) = p.Q;
  for (Index a = 0; a < k; ++a) {
    const Index row = active[static_cast<std::size_t>(a)];
    kkt.block(0, n + a, n, 1) = p.G.row(row).transpose();
    kkt.block(n + a, 0, 1, n) = p.G.row(row);
    rhs[n + a] = p.q[row];
  }
  Eigen::FullPivLU<MatrixXd> lu(kkt);
  if (lu.rank() < n + k) {
    return false;
  }
  const VectorXd sol = lu.solve(rhs);
  const VectorXd w_new = sol.head(n);
  VectorXd lambda_new = VectorXd::Zero(p.rows());
  for (Index a = 0; a < k; ++a) {
    const double mult = sol[n + a];
    if (mult < -Tolerances::active) {
      return false;
    }
    lambda_new[active[static_cast<std::size_t>(a)]] = std::max(0.0, mult);
  }
  const VectorXd slack = p.G * w_new - p.q;
  if (slack.size() > 0 && slack.maxCoeff() > Tolerances::feasibility) {
    return false;
  }
  w = w_new;
  lambda = lambda_new;
  return true;
}

} // namespace

void QpProblem::validate() const
{
  const Index n = Q.rows();
  if (Q.cols() != n) {
    throw std::invalid_argument("QpProblem: Q must be square");
  }
  if (n == 0) {
    throw std::invalid_argument("QpProblem: empty decision vector");
  }
  if (G.cols() != n && G.rows() > 0) {
    throw std::invalid_argument("QpProblem: G column count differs from dim");
  }
  if (q.size() != G.rows()) {
    throw std::invalid_argument("QpProblem: q size differs from G rows");
  }
  if (dq_du_rl.size() > 0 && dq_du_rl.rows() != G.rows()) {
    throw std::invalid_argument("QpProblem: dq_du_rl rows differ from G rows");
  }
  if (dq_dtheta.size() > 0 && dq_dtheta.rows() != G.rows()) {
    throw std::invalid_argument("QpProblem: dq_dtheta rows differ from G rows");
  }
  if (!Q.isApprox(Q.transpose(), 1e-12)) {
    throw std::invalid_argument("QpProblem: Q must be symmetric");
  }
}

std::string_view to_string(Status s)
{
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
  }
  return "unknown";
}

QpSolution solve(const QpProblem& p)
{
  p.validate();
  const Index n = p.dim();
  const Index m = p.rows();

  Eigen::LLT<MatrixXd> llt(p.Q);
  if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 0.0) {
    throw std::invalid_argument("QpProblem: Q is not positive definite");
  }

  QpSolution sol;
  sol.w = VectorXd::Zero(n);
  sol.lambda = VectorXd::Zero(m);
  sol.status = Status::Optimal;
  if (m == 0) {
    return sol;
  }

  // Columns of H are Q^{-1} G_i^T.
  const MatrixXd H = llt.solve(p.G.transpose());

  std::vector<Index> active;
  std::vector<double> mult;
  std::vector<char> in_active(static_cast<std::size_t>(m), 0);
  VectorXd& w = sol.w;

  const int max_iter = static_cast<int>(50 * (n + m) + 100);
  int iter = 0;

  auto violation_tol = [&](Index i) { return 1e-11 * (1.0 + std::abs(p.q[i])); };

  while (iter < max_iter) {
    // Most violated constraint not yet in the active set.
    const VectorXd slack = p.q - p.G * w;
    Index add = -1;
    double worst = 0.0;
    for (Index i = 0; i < m; ++i) {
      if (in_active[static_cast<std::size_t>(i)]) {
        continue;
      }
      if (slack[i] < -violation_tol(i) && slack[i] < worst) {
        worst = slack[i];
        add = i;
      }
    }
    if (add < 0) {
      break;
    }

    double u_add = 0.0;
    bool added = false;
    while (!added && iter < max_iter) {
      ++iter;
      const Index k = static_cast<Index>(active.size());
      VectorXd r = VectorXd::Zero(k);
      VectorXd z = -H.col(add);
      if (k > 0) {
        MatrixXd ga(k, n);
        MatrixXd ha(n, k);
        for (Index a = 0; a < k; ++a) {
          ga.row(a) = p.G.row(active[static_cast<std::size_t>(a)]);
          ha.col(a) = H.col(active[static_cast<std::size_t>(a)]);
        }
        const MatrixXd gram = ga * ha;
        r = gram.ldlt().solve(ga * H.col(add));
        z += ha * r;
      }

      // Largest dual step that keeps the active multipliers nonnegative.
      double t1 = std::numeric_limits<double>::infinity();
      Index drop = -1;
      for (Index a = 0; a < k; ++a) {
        if (r[a] > 0.0) {
          const double ratio = mult[static_cast<std::size_t>(a)] / r[a];
          if (ratio < t1) {
            t1 = ratio;
            drop = a;
          }
        }
      }

      // n_p^T z with n_p = -G_p^T.
      const double curvature = -p.G.row(add).dot(z);
      const double scale = p.G.row(add).dot(H.col(add));
      const bool dependent = curvature <= 1e-12 * std::max(scale, 1e-300);

      if (dependent) {
        if (drop < 0) {
          sol.status = Status::Infeasible;
          sol.iterations = iter;
          sol.objective = 0.5 * w.dot(p.Q * w);
          return sol;
        }
        for (Index a = 0; a < k; ++a) {
          mult[static_cast<std::size_t>(a)] -= t1 * r[a];
        }
        u_add += t1;
        in_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
        active.erase(active.begin() + drop);
        mult.erase(mult.begin() + drop);
        continue;
      }

      const double s_add = p.q[add] - p.G.row(add).dot(w); // negative while violated
      const double t2 = -s_add / curvature;
      const double t = std::min(t1, t2);
      w += t * z;
      for (Index a = 0; a < k; ++a) {
        mult[static_cast<std::size_t>(a)] -= t * r[a];
      }
      u_add += t;
      if (t2 <= t1) {
        active.push_back(add);
        mult.push_back(u_add);
        in_active[static_cast<std::size_t>(add)] = 1;
        added = true;
      } else {
        in_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
        active.erase(active.begin() + drop);
        mult.erase(mult.begin() + drop);
      }
    }
  }

  sol.iterations = iter;
  for (std::size_t a = 0; a < active.size(); ++a) {
    sol.lambda[active[a]] = std::max(0.0, mult[a]);
  }
  if (iter >= max_iter) {
    sol.status = Status::Infeasible;
  } else {
    polish(p, active, sol.w, sol.lambda);
  }
  for (Index i = 0; i < m; ++i) {
    if (sol.lambda[i] > Tolerances::active) {
      sol.active_set.push_back(i);
    }
  }
  sol.objective = 0.5 * sol.w.dot(p.Q * sol.w);
  return sol;
}

KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& sol)
{
  KktResiduals res;
  const VectorXd grad = p.Q * sol.w + p.G.transpose() * sol.lambda;
  res.stationarity = grad.size() > 0 ? grad.cwiseAbs().maxCoeff() : 0.0;
  if (p.rows() > 0) {
    const VectorXd slack = p.G * sol.w - p.q;
    res.primal = std::max(0.0, slack.maxCoeff());
    res.complementarity = sol.lambda.cwiseProduct(slack).cwiseAbs().maxCoeff();
    res.dual = std::max(0.0, -sol.lambda.minCoeff());
  }
  return res;
}

bool weakly_active(const QpProblem& p, const QpSolution& sol, double tol)
{
  if (p.rows() == 0) {
    return false;
  }
  const VectorXd slack = p.G * sol.w - p.q;
  for (Index i = 0; i < p.rows(); ++i) {
    if (sol.lambda[i] <= Tolerances::active && std::abs(slack[i]) <= tol) {
      return true;
    }
  }
  return false;
}

MatrixXd differentiate_rhs(const QpProblem& p,
                           const QpSolution& sol,
                           const MatrixXd& dq_dparam,
                           bool* degenerate)
{
  if (!sol.optimal()) {
    throw std::invalid_argument("differentiate: solution is not optimal");
  }
  const Index n = p.dim();
  const Index m = p.rows();
  const Index cols = dq_dparam.cols();
  if (degenerate) {
    *degenerate = false;
  }
  if (cols == 0) {
    return MatrixXd::Zero(n, 0);
  }
  if (m == 0) {
    return MatrixXd::Zero(n, cols);
  }
  if (dq_dparam.rows() != m) {
    throw std::invalid_argument("differentiate: parameter Jacobian has the wrong row count");
  }

  const VectorXd slack = p.G * sol.w - p.q;
  VectorXd lam = sol.lambda;
  VectorXd diag_slack = slack;
  bool weak = false;
  for (Index i = 0; i < m; ++i) {
    if (lam[i] <= Tolerances::active && std::abs(slack[i]) <= 1e-7) {
      // Weakly active row: the KKT row vanishes, leave it out of the system.
      lam[i] = 0.0;
      diag_slack[i] = 0.0;
      weak = true;
    } else if (lam[i] > Tolerances::active) {
      diag_slack[i] = 0.0;
    }
  }

  MatrixXd K = MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = p.Q;
  K.topRightCorner(n, m) = p.G.transpose();
  K.bottomLeftCorner(m, n) = lam.asDiagonal() * p.G;
  K.bottomRightCorner(m, m) = diag_slack.asDiagonal();

  MatrixXd rhs = MatrixXd::Zero(n + m, cols);
  rhs.bottomRows(m) = lam.asDiagonal() * dq_dparam;

  MatrixXd solution;
  Eigen::FullPivLU<MatrixXd> lu(K);
  if (!weak && lu.rank() == n + m) {
    solution = lu.solve(rhs);
  } else {
    weak = true;
    solution = K.completeOrthogonalDecomposition().solve(rhs);
  }
  if (degenerate) {
    *degenerate = weak;
  }
  return solution.topRows(n);
}

Sensitivity differentiate(const QpProblem& p, const QpSolution& sol)
{
  Sensitivity s;
  bool deg_u = false;
  bool deg_t = false;
  s.dw_du_rl = differentiate_rhs(p, sol, p.dq_du_rl, &deg_u);
  s.dw_dtheta = differentiate_rhs(p, sol, p.dq_dtheta, &deg_t);
  s.degenerate = deg_u || deg_t || weakly_active(p, sol);
  return s;
}

GradCheck grad_check(const QpProblem& p,
                     const QpSolution& sol,
                     const VectorXd& direction,
                     ParamBlock block,
                     double step)
{
  const MatrixXd& jac = block == ParamBlock::URl ? p.dq_du_rl : p.dq_dtheta;
  if (jac.cols() != direction.size()) {
    throw std::invalid_argument("grad_check: direction size differs from the parameter block");
  }
  GradCheck out;
  bool deg = false;
  const MatrixXd sens = differentiate_rhs(p, sol, jac, &deg);
  out.degenerate = deg || weakly_active(p, sol);

  const VectorXd dq = jac * direction;
  QpProblem plus = p;
  QpProblem minus = p;
  plus.q = p.q + step * dq;
  minus.q = p.q - step * dq;
  const auto sp = solve(plus);
  const auto sm = solve(minus);
  if (!sp.optimal() || !sm.optimal()) {
    out.max_rel_error = std::numeric_limits<double>::infinity();
    return out;
  }
  const VectorXd fd = (sp.w - sm.w) / (2.0 * step);
  const VectorXd an = sens * direction;
  const double denom = std::max({fd.cwiseAbs().maxCoeff(), an.cwiseAbs().maxCoeff(), 1e-6});
  out.max_rel_error = (an - fd).cwiseAbs().maxCoeff() / denom;
  return out;
}

} // namespace coopsafe::qp
