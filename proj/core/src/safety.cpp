#include "coopsafe/safety.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace coopsafe::safety {

namespace {

void check_index(std::size_t i, const PlatoonConfig& cfg)
{
  if (i < 1 || i > cfg.n) {
    throw std::out_of_range("vehicle index " + std::to_string(i) + " out of range");
  }
}

void require_cav(std::size_t j, const PlatoonConfig& cfg)
{
  check_index(j, cfg);
  if (!cfg.is_cav(j)) {
    throw std::invalid_argument("vehicle " + std::to_string(j) + " is not a CAV");
  }
}

Eigen::Index find_index(const std::vector<std::size_t>& v, std::size_t x)
{
  const auto it = std::find(v.begin(), v.end(), x);
  return it == v.end() ? -1 : static_cast<Eigen::Index>(it - v.begin());
}

double u_rl_of(std::size_t cav, std::span<const double> u_rl, const PlatoonConfig& cfg)
{
  return u_rl[cfg.cav_slot(cav)];
}

} // namespace

SafetyLayerParams SafetyLayerParams::defaults(const PlatoonConfig& cfg)
{
  SafetyLayerParams p;
  p.gamma.resize(cfg.n);
  for (std::size_t i = 1; i <= cfg.n; ++i) {
    p.gamma[i - 1] = cfg.is_cav(i) ? 1.0 : 2.0;
  }
  p.slack_weight.assign(cfg.n, 1e3);
  p.k_coop = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cfg.n + 1),
                                   static_cast<Eigen::Index>(cfg.n + 1));
  for (const auto i : protected_hdvs(cfg)) {
    for (const auto j : cooperating_cavs(i, cfg)) {
      p.k_coop(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.4;
    }
  }
  return p;
}

SafetyLayerParams SafetyLayerParams::non_cooperative(const PlatoonConfig& cfg) const
{
  SafetyLayerParams p = *this;
  for (const auto i : protected_hdvs(cfg)) {
    const auto cavs = cooperating_cavs(i, cfg);
    for (std::size_t m = 0; m + 1 < cavs.size(); ++m) {
      p.k_coop(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cavs[m])) = 0.0;
    }
  }
  return p;
}

double SafetyLayerParams::k(std::size_t hdv, std::size_t cav) const
{
  return k_coop(static_cast<Eigen::Index>(hdv), static_cast<Eigen::Index>(cav));
}

void SafetyLayerParams::validate(const PlatoonConfig& cfg) const
{
  if (!(tau > 0.0)) {
    throw std::invalid_argument("SafetyLayerParams: tau must be positive");
  }
  if (!(a_min < a_max)) {
    throw std::invalid_argument("SafetyLayerParams: a_min must be below a_max");
  }
  if (gamma.size() != cfg.n || slack_weight.size() != cfg.n) {
    throw std::invalid_argument("SafetyLayerParams: gamma and slack_weight need one entry per vehicle");
  }
  for (std::size_t i = 0; i < cfg.n; ++i) {
    if (!(gamma[i] > 0.0)) {
      throw std::invalid_argument("SafetyLayerParams: gamma must be positive");
    }
    if (!(slack_weight[i] > 0.0)) {
      throw std::invalid_argument("SafetyLayerParams: slack weights must be positive");
    }
  }
  const auto dim = static_cast<Eigen::Index>(cfg.n + 1);
  if (k_coop.rows() != dim || k_coop.cols() != dim) {
    throw std::invalid_argument("SafetyLayerParams: k_coop must be (n+1) x (n+1)");
  }
  if ((k_coop.array() < 0.0).any() || (k_coop.array() > 1.0).any()) {
    throw std::invalid_argument("SafetyLayerParams: cooperation coefficients must lie in [0, 1]");
  }
}

std::vector<std::size_t> cooperating_cavs(std::size_t i, const PlatoonConfig& cfg)
{
  check_index(i, cfg);
  std::vector<std::size_t> out;
  for (const auto j : cfg.preceding_in_range(i)) {
    if (cfg.is_cav(j)) {
      out.push_back(j);
    }
  }
  return out;
}

std::vector<std::size_t> protected_hdvs(const PlatoonConfig& cfg)
{
  std::vector<std::size_t> out;
  if (cfg.cav_indices.empty()) {
    return out;
  }
  for (std::size_t i = cfg.first_cav() + 1; i <= cfg.n; ++i) {
    if (!cfg.is_cav(i)) {
      out.push_back(i);
    }
  }
  return out;
}

double cbf_value(std::size_t i, const PlatoonState& state, double tau)
{
  return state.spacing(i) - tau * state.velocity(i);
}

double reduced_order_h(std::size_t i,
                       const PlatoonState& state,
                       const SafetyLayerParams& params,
                       const PlatoonConfig& cfg)
{
  check_index(i, cfg);
  if (cfg.is_cav(i)) {
    throw std::invalid_argument("reduced_order_h: vehicle " + std::to_string(i) + " is a CAV");
  }
  double h = cbf_value(i, state, params.tau);
  for (const auto j : cooperating_cavs(i, cfg)) {
    h -= params.k(i, j) * cbf_value(j, state, params.tau);
  }
  return h;
}

CbfSpec cav_cbf(std::size_t j, const PlatoonConfig& cfg, const SafetyLayerParams& params)
{
  require_cav(j, cfg);
  CbfSpec spec;
  spec.c1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * cfg.n));
  spec.c1[static_cast<Eigen::Index>(dynamics::spacing_slot(j))] = 1.0;
  spec.c1[static_cast<Eigen::Index>(dynamics::velocity_slot(j))] = -params.tau;
  spec.gamma = params.gamma_of(j);
  spec.owner = j;
  spec.kind = CbfKind::Cav;
  return spec;
}

CbfSpec hdv_reduced_cbf(std::size_t i, const PlatoonConfig& cfg, const SafetyLayerParams& params)
{
  check_index(i, cfg);
  if (cfg.is_cav(i)) {
    throw std::invalid_argument("hdv_reduced_cbf: vehicle " + std::to_string(i) + " is a CAV");
  }
  CbfSpec spec;
  spec.c1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * cfg.n));
  spec.c1[static_cast<Eigen::Index>(dynamics::spacing_slot(i))] = 1.0;
  spec.c1[static_cast<Eigen::Index>(dynamics::velocity_slot(i))] = -params.tau;
  for (const auto j : cooperating_cavs(i, cfg)) {
    const double k = params.k(i, j);
    spec.c1[static_cast<Eigen::Index>(dynamics::spacing_slot(j))] -= k;
    spec.c1[static_cast<Eigen::Index>(dynamics::velocity_slot(j))] += k * params.tau;
  }
  spec.gamma = params.gamma_of(i);
  spec.owner = i;
  spec.kind = CbfKind::HdvReduced;
  return spec;
}

Eigen::MatrixXd input_matrix(const PlatoonConfig& cfg)
{
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * cfg.n),
                                            static_cast<Eigen::Index>(cfg.cav_indices.size()));
  for (std::size_t m = 0; m < cfg.cav_indices.size(); ++m) {
    B(static_cast<Eigen::Index>(dynamics::velocity_slot(cfg.cav_indices[m])),
      static_cast<Eigen::Index>(m)) = 1.0;
  }
  return B;
}

double e_con(const Eigen::VectorXd& c1, const Eigen::MatrixXd& g, double C)
{
  if (C < 0.0) {
    throw std::invalid_argument("e_con: threshold must be nonnegative");
  }
  if (C == 0.0) {
    return 0.0;
  }
  if (g.rows() != c1.size()) {
    throw std::invalid_argument("e_con: input matrix rows do not match the barrier coefficients");
  }
  const Eigen::VectorXd a = c1.cwiseAbs();
  return C * a.sum() + C * (g.cwiseAbs().transpose() * a).sum();
}

Eigen::Index DecisionLayout::u_index(std::size_t cav) const { return find_index(cavs, cav); }

Eigen::Index DecisionLayout::sigma_index(std::size_t hdv) const
{
  const auto k = find_index(slack_hdvs, hdv);
  return k < 0 ? -1 : static_cast<Eigen::Index>(cavs.size()) + k;
}

std::vector<std::size_t> guarded_hdvs(std::size_t ego, const PlatoonConfig& cfg)
{
  require_cav(ego, cfg);
  std::vector<std::size_t> out;
  for (const auto i : cfg.following_in_range(ego)) {
    if (!cfg.is_cav(i)) {
      out.push_back(i);
    }
  }
  return out;
}

DecisionLayout decision_layout(std::size_t ego, const PlatoonConfig& cfg, bool with_slack)
{
  require_cav(ego, cfg);
  DecisionLayout layout;
  for (const auto j : cfg.preceding_in_range(ego)) {
    if (cfg.is_cav(j)) {
      layout.cavs.push_back(j);
    }
  }
  layout.cavs.push_back(ego);
  for (const auto j : cfg.following_in_range(ego)) {
    if (cfg.is_cav(j)) {
      layout.cavs.push_back(j);
    }
  }
  if (with_slack) {
    layout.slack_hdvs = guarded_hdvs(ego, cfg);
  }
  return layout;
}

Estimates Estimates::unknown(std::size_t n)
{
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return Estimates{std::vector<double>(n, nan), std::vector<double>(n, nan)};
}

ConstraintRow cav_constraint(std::size_t j,
                             const PlatoonState& state,
                             double u_rl_j,
                             const SafetyLayerParams& params,
                             const DecisionLayout& layout)
{
  const auto idx = layout.u_index(j);
  if (idx < 0) {
    throw std::invalid_argument("cav_constraint: CAV " + std::to_string(j) + " has no decision variable");
  }
  const double h = cbf_value(j, state, params.tau);
  const double gamma = params.gamma_of(j);

  ConstraintRow row;
  row.coeffs = Eigen::VectorXd::Zero(layout.dim());
  row.coeffs[idx] = params.tau;
  row.rhs = state.velocity(j - 1) - state.velocity(j) - params.tau * u_rl_j + gamma * h;
  row.tag = RowTag::Cav;
  row.vehicle = j;
  row.u_rl_owner = j;
  row.d_rhs_d_u_rl = -params.tau;
  row.gamma_owner = j;
  row.d_rhs_d_gamma = h;
  return row;
}

std::array<ConstraintRow, 2> actuator_constraints(std::size_t j,
                                                  double u_rl_j,
                                                  const SafetyLayerParams& params,
                                                  const DecisionLayout& layout)
{
  const auto idx = layout.u_index(j);
  if (idx < 0) {
    throw std::invalid_argument("actuator_constraints: CAV " + std::to_string(j) +
                                " has no decision variable");
  }
  ConstraintRow upper;
  upper.coeffs = Eigen::VectorXd::Zero(layout.dim());
  upper.coeffs[idx] = 1.0;
  upper.rhs = params.a_max - u_rl_j;
  upper.tag = RowTag::ActuatorUpper;
  upper.vehicle = j;
  upper.u_rl_owner = j;
  upper.d_rhs_d_u_rl = -1.0;

  ConstraintRow lower;
  lower.coeffs = Eigen::VectorXd::Zero(layout.dim());
  lower.coeffs[idx] = -1.0;
  lower.rhs = u_rl_j - params.a_min;
  lower.tag = RowTag::ActuatorLower;
  lower.vehicle = j;
  lower.u_rl_owner = j;
  lower.d_rhs_d_u_rl = 1.0;
  return {upper, lower};
}

ConstraintRow hdv_constraint(std::size_t i,
                             std::size_t ego,
                             const PlatoonState& state,
                             double u_rl_ego,
                             const Estimates& estimates,
                             double e_con_margin,
                             const SafetyLayerParams& params,
                             const PlatoonConfig& cfg,
                             const DecisionLayout& layout)
{
  check_index(i, cfg);
  if (cfg.is_cav(i)) {
    throw std::invalid_argument("hdv_constraint: vehicle " + std::to_string(i) + " is a CAV");
  }
  const double f_hat = estimates.hdv_accel.at(i - 1);
  if (!std::isfinite(f_hat)) {
    throw std::invalid_argument("hdv_constraint: missing acceleration estimate for HDV " +
                                std::to_string(i));
  }
  const double tau = params.tau;

  // L_f h_suf with the estimated HDV acceleration.
  double rhs = state.velocity(i - 1) - state.velocity(i) - tau * f_hat;
  double ego_coeff = 0.0;
  double d_u_rl = 0.0;
  for (const auto j : cooperating_cavs(i, cfg)) {
    const double k = params.k(i, j);
    rhs -= k * (state.velocity(j - 1) - state.velocity(j));
    if (k == 0.0) {
      continue;
    }
    // L_g h_suf contributes +tau*k*u_j since h_j carries -tau*v_j.
    if (j == ego) {
      ego_coeff = -tau * k;
      d_u_rl = tau * k;
      rhs += tau * k * u_rl_ego;
    } else {
      const double u_hat = estimates.cav_input.at(j - 1);
      if (!std::isfinite(u_hat)) {
        throw std::invalid_argument("hdv_constraint: missing input estimate for CAV " +
                                    std::to_string(j));
      }
      rhs += tau * k * u_hat;
    }
  }
  const double h_suf = reduced_order_h(i, state, params, cfg);
  rhs += params.gamma_of(i) * h_suf - e_con_margin;

  ConstraintRow row;
  row.coeffs = Eigen::VectorXd::Zero(layout.dim());
  if (ego_coeff != 0.0) {
    const auto idx = layout.u_index(ego);
    if (idx < 0) {
      throw std::invalid_argument("hdv_constraint: ego CAV has no decision variable");
    }
    row.coeffs[idx] = ego_coeff;
  }
  const auto sigma = layout.sigma_index(i);
  if (sigma >= 0) {
    row.coeffs[sigma] = -1.0;
  }
  row.rhs = rhs;
  row.tag = RowTag::Hdv;
  row.vehicle = i;
  row.u_rl_owner = d_u_rl != 0.0 ? ego : 0;
  row.d_rhs_d_u_rl = d_u_rl;
  row.gamma_owner = i;
  row.d_rhs_d_gamma = h_suf;
  return row;
}

Eigen::Index SafetyQp::theta_column(std::size_t i) const { return find_index(theta_vehicles, i); }

SafetyQp build_qp(std::size_t ego,
                  const PlatoonState& state,
                  std::span<const double> u_rl,
                  const Estimates& estimates,
                  double C,
                  const SafetyLayerParams& params,
                  const PlatoonConfig& cfg,
                  BuildOptions options)
{
  require_cav(ego, cfg);
  if (u_rl.size() != cfg.cav_indices.size()) {
    throw std::invalid_argument("build_qp: need one nominal input per CAV");
  }
  if (state.size() != cfg.n) {
    throw std::invalid_argument("build_qp: state size does not match the configuration");
  }

  SafetyQp out;
  out.ego = ego;
  out.layout = decision_layout(ego, cfg, options.slack);
  const auto& layout = out.layout;
  if (layout.dim() == 0) {
    throw std::invalid_argument("build_qp: empty decision vector");
  }

  for (const auto j : layout.cavs) {
    const double u = u_rl_of(j, u_rl, cfg);
    const auto act = actuator_constraints(j, u, params, layout);
    out.rows.push_back(act[0]);
    out.rows.push_back(act[1]);
    out.rows.push_back(cav_constraint(j, state, u, params, layout));
  }

  const Eigen::MatrixXd B = input_matrix(cfg);
  const double u_ego = u_rl_of(ego, u_rl, cfg);
  for (const auto i : guarded_hdvs(ego, cfg)) {
    // An HDV the ego cannot influence only adds a slack-absorbed row.
    if (params.k(i, ego) == 0.0) {
      continue;
    }
    const double margin = e_con(hdv_reduced_cbf(i, cfg, params).c1, B, C);
    out.rows.push_back(hdv_constraint(i, ego, state, u_ego, estimates, margin, params, cfg, layout));
  }

  for (const auto j : layout.cavs) {
    out.theta_vehicles.push_back(j);
  }
  for (const auto& row : out.rows) {
    if (row.tag == RowTag::Hdv) {
      out.theta_vehicles.push_back(row.vehicle);
    }
  }
  std::sort(out.theta_vehicles.begin(), out.theta_vehicles.end());

  const Eigen::Index dim = layout.dim();
  const auto rows = static_cast<Eigen::Index>(out.rows.size());
  auto& p = out.problem;
  p.Q = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(layout.cavs.size()); ++k) {
    p.Q(k, k) = 2.0;
  }
  for (const auto i : layout.slack_hdvs) {
    const auto k = layout.sigma_index(i);
    p.Q(k, k) = 2.0 * params.slack_weight_of(i);
  }
  p.G.resize(rows, dim);
  p.q.resize(rows);
  p.dq_du_rl = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(layout.cavs.size()));
  p.dq_dtheta = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(out.theta_vehicles.size()));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = out.rows[static_cast<std::size_t>(r)];
    p.G.row(r) = row.coeffs.transpose();
    p.q[r] = row.rhs;
    if (row.u_rl_owner != 0) {
      p.dq_du_rl(r, layout.u_index(row.u_rl_owner)) = row.d_rhs_d_u_rl;
    }
    if (row.gamma_owner != 0) {
      p.dq_dtheta(r, out.theta_column(row.gamma_owner)) = row.d_rhs_d_gamma;
    }
  }
  return out;
}

} // namespace coopsafe::safety
