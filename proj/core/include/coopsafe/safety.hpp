#pragma once

/**
 * @file
 * @brief Barrier candidates, cooperative reduced-order barriers and the per-CAV safety QP.
 *
 * Every vehicle i carries the headway barrier h_i = s_i - tau*v_i. An HDV
 * behind the first CAV is protected through the reduced-order barrier
 *
 *     h_suf,i = h_i - sum_{j in S_i} k_ij h_j,
 *
 * where S_i are the CAVs ahead of i inside the communication range. The QP
 * built for an ego CAV has decision vector w = (u_safe for every CAV in range,
 * sigma_i for every following HDV in range) and stores all rows as G w <= q.
 */

#include "coopsafe/dynamics.hpp"
#include "coopsafe/qp.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace coopsafe::safety {

using dynamics::PlatoonConfig;
using dynamics::PlatoonState;

enum class CbfKind { Cav, HdvReduced };

/// Affine barrier h = c1^T x + c2 over the state vector [s_1, v_1, ..., s_n, v_n].
struct CbfSpec
{
  Eigen::VectorXd c1;
  double c2 = 0.0;
  double gamma = 1.0;
  std::size_t owner = 0;
  CbfKind kind = CbfKind::Cav;

  double value(const PlatoonState& state) const { return c1.dot(state.to_vector()) + c2; }
};

struct SafetyLayerParams
{
  double tau = 0.3;
  /// Class-K gain per vehicle (entry i-1): gamma_CAV for CAVs, gamma_HDV for HDVs.
  std::vector<double> gamma;
  /// Cooperation coefficients k(i, j) for HDV i and CAV j, size (n+1) x (n+1).
  Eigen::MatrixXd k_coop;
  /// Slack weight b_i per vehicle (entry i-1); only HDV entries are used.
  std::vector<double> slack_weight;
  double a_min = -5.0;
  double a_max = 5.0;

  /// tau = 0.3, gamma = 1 (CAV) / 2 (HDV), k = 0.4 for every (HDV, CAV-ahead) pair, b = 1e3, a in [-5, 5].
  static SafetyLayerParams defaults(const PlatoonConfig& cfg);

  /// Copy in which each HDV cooperates only with its nearest upstream CAV.
  SafetyLayerParams non_cooperative(const PlatoonConfig& cfg) const;

  double k(std::size_t hdv, std::size_t cav) const;
  double gamma_of(std::size_t i) const { return gamma.at(i - 1); }
  double slack_weight_of(std::size_t i) const { return slack_weight.at(i - 1); }

  void validate(const PlatoonConfig& cfg) const;
};

/// CAVs ahead of vehicle i inside its communication range, front to back.
std::vector<std::size_t> cooperating_cavs(std::size_t i, const PlatoonConfig& cfg);

/// HDVs behind the first CAV, i.e. the HDVs whose safety CAVs can influence.
std::vector<std::size_t> protected_hdvs(const PlatoonConfig& cfg);

/// h_i = s_i - tau*v_i.
double cbf_value(std::size_t i, const PlatoonState& state, double tau);

/// h_suf,i; throws if i is a CAV.
double reduced_order_h(std::size_t i,
                       const PlatoonState& state,
                       const SafetyLayerParams& params,
                       const PlatoonConfig& cfg);

CbfSpec cav_cbf(std::size_t j, const PlatoonConfig& cfg, const SafetyLayerParams& params);
CbfSpec hdv_reduced_cbf(std::size_t i, const PlatoonConfig& cfg, const SafetyLayerParams& params);

/// Input matrix B (2n x m): column k is the unit vector on v of the k-th CAV.
Eigen::MatrixXd input_matrix(const PlatoonConfig& cfg);

/// Conformal robustness margin C*|c1|^T 1 + C*|c1|^T |g| 1.
double e_con(const Eigen::VectorXd& c1, const Eigen::MatrixXd& g, double C);

/// Position of each variable inside the decision vector of one ego QP.
struct DecisionLayout
{
  std::vector<std::size_t> cavs;       ///< CAVs with a u_safe variable
  std::vector<std::size_t> slack_hdvs; ///< HDVs with a sigma variable (may be empty)

  Eigen::Index dim() const { return static_cast<Eigen::Index>(cavs.size() + slack_hdvs.size()); }
  /// -1 when the vehicle has no variable.
  Eigen::Index u_index(std::size_t cav) const;
  Eigen::Index sigma_index(std::size_t hdv) const;
};

/// Following HDVs of `ego` that get a barrier row (inside range, behind the first CAV).
std::vector<std::size_t> guarded_hdvs(std::size_t ego, const PlatoonConfig& cfg);

DecisionLayout decision_layout(std::size_t ego, const PlatoonConfig& cfg, bool with_slack = true);

enum class RowTag { Cav, Hdv, ActuatorUpper, ActuatorLower };

/// One row of G w <= q, with the affine dependence of its right-hand side on
/// one nominal input and one barrier gain.
struct ConstraintRow
{
  Eigen::VectorXd coeffs;
  double rhs = 0.0;
  RowTag tag = RowTag::Cav;
  std::size_t vehicle = 0;

  std::size_t u_rl_owner = 0; ///< CAV whose u_RL enters rhs (0 = none)
  double d_rhs_d_u_rl = 0.0;
  std::size_t gamma_owner = 0; ///< vehicle whose gamma enters rhs (0 = none)
  double d_rhs_d_gamma = 0.0;

  /// q - G w for this row; negative when violated.
  double slack(const Eigen::VectorXd& w) const { return rhs - coeffs.dot(w); }
};

/// Behaviour estimates available to an ego CAV (entry i-1 for vehicle i, NaN when unknown).
struct Estimates
{
  std::vector<double> hdv_accel; ///< F_hat_i
  std::vector<double> cav_input; ///< u_hat_j

  static Estimates unknown(std::size_t n);
};

/// v_{j-1} - v_j - tau*(u_safe,j + u_RL,j) + gamma_j h_j >= 0.
ConstraintRow cav_constraint(std::size_t j,
                             const PlatoonState& state,
                             double u_rl_j,
                             const SafetyLayerParams& params,
                             const DecisionLayout& layout);

/// a_min <= u_safe,j + u_RL,j <= a_max as two rows.
std::array<ConstraintRow, 2> actuator_constraints(std::size_t j,
                                                  double u_rl_j,
                                                  const SafetyLayerParams& params,
                                                  const DecisionLayout& layout);

/// Robust reduced-order row for HDV i inside the QP of `ego`:
///   L_f h_suf + L_g h_suf u + gamma_i h_suf + sigma_i >= E_con,
/// where the ego input is u_safe,ego + u_RL,ego and the other CAVs in S_i
/// contribute their estimates. Throws std::invalid_argument when an estimate
/// needed by the row is missing.
ConstraintRow hdv_constraint(std::size_t i,
                             std::size_t ego,
                             const PlatoonState& state,
                             double u_rl_ego,
                             const Estimates& estimates,
                             double e_con_margin,
                             const SafetyLayerParams& params,
                             const PlatoonConfig& cfg,
                             const DecisionLayout& layout);

struct SafetyQp
{
  qp::QpProblem problem;
  DecisionLayout layout;
  std::vector<ConstraintRow> rows;
  std::vector<std::size_t> theta_vehicles; ///< gamma owners, column order of dq_dtheta
  std::size_t ego = 0;

  /// Index of the ego u_safe inside w.
  Eigen::Index ego_index() const { return layout.u_index(ego); }
  /// Column of the ego u_RL inside dq_du_rl.
  Eigen::Index ego_u_rl_column() const { return layout.u_index(ego); }
  /// Column of vehicle i's gamma inside dq_dtheta, -1 if absent.
  Eigen::Index theta_column(std::size_t i) const;
};

struct BuildOptions
{
  bool slack = true; ///< false forces sigma = 0 (HDV rows become hard)
};

/// Assembles the ego QP. `u_rl` holds one nominal input per CAV in
/// cfg.cav_indices order. Objective ||u_safe||^2 + sum b_i sigma_i^2.
SafetyQp build_qp(std::size_t ego,
                  const PlatoonState& state,
                  std::span<const double> u_rl,
                  const Estimates& estimates,
                  double C,
                  const SafetyLayerParams& params,
                  const PlatoonConfig& cfg,
                  BuildOptions options = {});

} // namespace coopsafe::safety
