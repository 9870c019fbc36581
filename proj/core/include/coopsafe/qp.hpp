#pragma once

/**
 * @file
 * @brief Dense strictly convex QP solver and implicit differentiation of its solution map.
 *
 * Problems have the form
 *
 *     min_w  1/2 w^T Q w   s.t.  G w <= q(p),
 *
 * where q is affine in a parameter vector p split into two blocks: the nominal
 * RL inputs (u_RL) and the barrier gains (theta). Sensitivities of w* follow
 * from differentiating the KKT conditions
 *
 *     Q w + G^T lambda = 0,   diag(lambda) (G w - q) = 0.
 */

#include <Eigen/Dense>

#include <string_view>
#include <vector>

namespace coopsafe::qp {

/// Fixed solver tolerances.
struct Tolerances
{
  static constexpr double feasibility = 1e-8;
  static constexpr double stationarity = 1e-6;
  static constexpr double complementarity = 1e-6;
  static constexpr double active = 1e-8; ///< lambda threshold for the active set
};

struct QpProblem
{
  Eigen::MatrixXd Q;        ///< dim x dim, symmetric positive definite
  Eigen::MatrixXd G;        ///< rows x dim
  Eigen::VectorXd q;        ///< rows
  Eigen::MatrixXd dq_du_rl; ///< rows x (#u_RL parameters); may have zero columns
  Eigen::MatrixXd dq_dtheta; ///< rows x (#theta parameters); may have zero columns

  Eigen::Index dim() const { return Q.rows(); }
  Eigen::Index rows() const { return G.rows(); }

  /// Throws std::invalid_argument on inconsistent dimensions or asymmetric Q.
  void validate() const;
};

enum class Status { Optimal, Infeasible };

std::string_view to_string(Status s);

struct QpSolution
{
  Eigen::VectorXd w;      ///< primal optimum
  Eigen::VectorXd lambda; ///< one multiplier per row, >= 0
  std::vector<Eigen::Index> active_set; ///< rows with lambda > Tolerances::active
  Status status = Status::Infeasible;
  int iterations = 0;
  double objective = 0.0;

  bool optimal() const { return status == Status::Optimal; }
};

/// Goldfarb-Idnani dual active-set method. Deterministic for fixed input.
/// Throws std::invalid_argument when Q is not positive definite.
QpSolution solve(const QpProblem& p);

struct KktResiduals
{
  double stationarity = 0.0;    ///< ||Q w + G^T lambda||_inf
  double primal = 0.0;          ///< max(0, max_i (G w - q)_i)
  double complementarity = 0.0; ///< max_i |lambda_i (G w - q)_i|
  double dual = 0.0;            ///< max(0, -min_i lambda_i)
};

KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& sol);

/// Sensitivities of w* to the parameters, columns aligned with dq_du_rl / dq_dtheta.
struct Sensitivity
{
  Eigen::MatrixXd dw_du_rl;
  Eigen::MatrixXd dw_dtheta;
  /// Set when the KKT matrix is singular (weakly active row); the result is
  /// then a least-squares solution and should be read as a subgradient.
  bool degenerate = false;
};

/// Solves K [dw; dlambda] = [0; diag(lambda) dq] for both parameter blocks.
/// Requires sol.optimal().
Sensitivity differentiate(const QpProblem& p, const QpSolution& sol);

/// Same as differentiate() for an arbitrary right-hand-side Jacobian dq/dp.
Eigen::MatrixXd differentiate_rhs(const QpProblem& p,
                                  const QpSolution& sol,
                                  const Eigen::MatrixXd& dq_dparam,
                                  bool* degenerate = nullptr);

/// True when some row has lambda <= active tolerance and zero slack.
bool weakly_active(const QpProblem& p, const QpSolution& sol, double tol = 1e-7);

enum class ParamBlock { URl, Theta };

struct GradCheck
{
  double max_rel_error = 0.0;
  bool degenerate = false;
};

/// Compares differentiate() against central finite differences of solve()
/// along `direction` in the chosen parameter block. The error is
/// ||analytic - fd||_inf / max(||fd||_inf, ||analytic||_inf, 1e-6).
GradCheck grad_check(const QpProblem& p,
                     const QpSolution& sol,
                     const Eigen::VectorXd& direction,
                     ParamBlock block,
                     double step = 1e-5);

} // namespace coopsafe::qp
