#include "coopsafe/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace coopsafe::dynamics {

void FvdParams::validate() const
{
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw std::invalid_argument("FvdParams: alpha and beta must be positive");
  }
  if (!(s_st < s_go)) {
    throw std::invalid_argument("FvdParams: s_st must be below s_go");
  }
  if (!(v_max > 0.0)) {
    throw std::invalid_argument("FvdParams: v_max must be positive");
  }
}

void PlatoonConfig::validate() const
{
  if (n == 0) {
    throw std::invalid_argument("PlatoonConfig: empty platoon");
  }
  if (!(dt > 0.0)) {
    throw std::invalid_argument("PlatoonConfig: dt must be positive");
  }
  if (comm_range < 1) {
    throw std::invalid_argument("PlatoonConfig: comm_range must be at least 1");
  }
  for (std::size_t k = 0; k < cav_indices.size(); ++k) {
    const auto i = cav_indices[k];
    if (i < 1 || i > n) {
      throw std::invalid_argument("PlatoonConfig: CAV index " + std::to_string(i) + " out of range");
    }
    if (k > 0 && cav_indices[k - 1] >= i) {
      throw std::invalid_argument("PlatoonConfig: cav_indices must be strictly ascending");
    }
  }
  if (!fvd.empty() && fvd.size() != n) {
    throw std::invalid_argument("PlatoonConfig: fvd must be empty or hold n entries");
  }
  default_fvd.validate();
  for (const auto& p : fvd) {
    p.validate();
  }
}

bool PlatoonConfig::is_cav(std::size_t i) const
{
  return std::binary_search(cav_indices.begin(), cav_indices.end(), i);
}

Role PlatoonConfig::role(std::size_t i) const { return is_cav(i) ? Role::Cav : Role::Hdv; }

const FvdParams& PlatoonConfig::fvd_for(std::size_t i) const
{
  if (fvd.empty()) {
    return default_fvd;
  }
  return fvd.at(i - 1);
}

std::size_t PlatoonConfig::first_cav() const
{
  if (cav_indices.empty()) {
    throw std::logic_error("PlatoonConfig: platoon has no CAV");
  }
  return cav_indices.front();
}

std::vector<std::size_t> PlatoonConfig::preceding_in_range(std::size_t i) const
{
  std::vector<std::size_t> out;
  const std::size_t lo = i > comm_range ? i - comm_range : 1;
  for (std::size_t j = lo; j < i; ++j) {
    out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> PlatoonConfig::following_in_range(std::size_t i) const
{
  std::vector<std::size_t> out;
  for (std::size_t j = i + 1; j <= std::min(n, i + comm_range); ++j) {
    out.push_back(j);
  }
  return out;
}

std::size_t PlatoonConfig::cav_slot(std::size_t i) const
{
  const auto it = std::lower_bound(cav_indices.begin(), cav_indices.end(), i);
  if (it == cav_indices.end() || *it != i) {
    throw std::invalid_argument("vehicle " + std::to_string(i) + " is not a CAV");
  }
  return static_cast<std::size_t>(it - cav_indices.begin());
}

const VehicleState& PlatoonState::vehicle(std::size_t i) const
{
  if (i < 1 || i > vehicles.size()) {
    throw std::out_of_range("vehicle index " + std::to_string(i) + " out of range");
  }
  return vehicles[i - 1];
}

VehicleState& PlatoonState::vehicle(std::size_t i)
{
  if (i < 1 || i > vehicles.size()) {
    throw std::out_of_range("vehicle index " + std::to_string(i) + " out of range");
  }
  return vehicles[i - 1];
}

double PlatoonState::velocity(std::size_t i) const
{
  return i == 0 ? head_velocity : vehicle(i).velocity;
}

Eigen::VectorXd PlatoonState::to_vector() const
{
  Eigen::VectorXd x(2 * vehicles.size());
  for (std::size_t k = 0; k < vehicles.size(); ++k) {
    x[2 * k] = vehicles[k].spacing;
    x[2 * k + 1] = vehicles[k].velocity;
  }
  return x;
}

PlatoonState PlatoonState::uniform(const PlatoonConfig& cfg, double spacing, double velocity)
{
  PlatoonState st;
  st.head_velocity = velocity;
  st.vehicles.assign(cfg.n, VehicleState{spacing, velocity});
  st.roles.resize(cfg.n);
  for (std::size_t i = 1; i <= cfg.n; ++i) {
    st.roles[i - 1] = cfg.role(i);
  }
  return st;
}

double optimal_velocity(double s, const FvdParams& p)
{
  if (s <= p.s_st) {
    return 0.0;
  }
  if (s >= p.s_go) {
    return p.v_max;
  }
  const double phase = std::numbers::pi * (s - p.s_st) / (p.s_go - p.s_st);
  return 0.5 * p.v_max * (1.0 - std::cos(phase));
}

double fvd_accel(double s, double v, double v_prev, const FvdParams& p)
{
  return p.alpha * (optimal_velocity(s, p) - v) + p.beta * (v_prev - v);
}

double equilibrium_vmax(double s_star, double v_star, const FvdParams& p)
{
  if (!(s_star > p.s_st && s_star < p.s_go)) {
    throw std::invalid_argument("equilibrium_vmax: s_star must lie strictly inside (s_st, s_go)");
  }
  const double phase = std::numbers::pi * (s_star - p.s_st) / (p.s_go - p.s_st);
  return 2.0 * v_star / (1.0 - std::cos(phase));
}

std::vector<double> accelerations(const PlatoonState& state,
                                  std::span<const double> u,
                                  const PlatoonConfig& cfg,
                                  std::span<const AccelOverride> overrides)
{
  if (u.size() != cfg.cav_indices.size()) {
    throw std::invalid_argument("step: control vector has " + std::to_string(u.size()) +
                                " entries, platoon has " +
                                std::to_string(cfg.cav_indices.size()) + " CAVs");
  }
  if (state.size() != cfg.n) {
    throw std::invalid_argument("step: state size does not match the configuration");
  }
  std::vector<double> a(cfg.n);
  std::size_t slot = 0;
  for (std::size_t i = 1; i <= cfg.n; ++i) {
    if (slot < cfg.cav_indices.size() && cfg.cav_indices[slot] == i) {
      a[i - 1] = u[slot++];
    } else {
      a[i - 1] = fvd_accel(state.spacing(i), state.velocity(i), state.velocity(i - 1), cfg.fvd_for(i));
    }
  }
  for (const auto& o : overrides) {
    if (o.index < 1 || o.index > cfg.n) {
      throw std::invalid_argument("step: override index out of range");
    }
    a[o.index - 1] = o.accel;
  }
  return a;
}

PlatoonState integrate(const PlatoonState& state,
                       std::span<const double> accel,
                       double head_accel,
                       double dt)
{
  PlatoonState next = state;
  for (std::size_t i = 1; i <= state.size(); ++i) {
    auto& veh = next.vehicle(i);
    veh.spacing += dt * (state.velocity(i - 1) - state.velocity(i));
    veh.velocity = std::max(0.0, state.velocity(i) + dt * accel[i - 1]);
  }
  next.head_velocity = std::max(0.0, state.head_velocity + dt * head_accel);
  return next;
}

PlatoonState step(const PlatoonState& state,
                  std::span<const double> u,
                  double head_accel,
                  const PlatoonConfig& cfg,
                  std::span<const AccelOverride> overrides)
{
  const auto a = accelerations(state, u, cfg, overrides);
  return integrate(state, a, head_accel, cfg.dt);
}

} // namespace coopsafe::dynamics
