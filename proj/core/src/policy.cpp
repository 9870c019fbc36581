#include "coopsafe/policy.hpp"

#include <algorithm>

namespace coopsafe::policy {

std::vector<double> FvdPolicy::act(const PlatoonState& state, const PlatoonConfig& cfg) const
{
  std::vector<double> u;
  u.reserve(cfg.cav_indices.size());
  for (const auto j : cfg.cav_indices) {
    u.push_back(dynamics::fvd_accel(state.spacing(j), state.velocity(j), state.velocity(j - 1), cfg.fvd_for(j)));
  }
  return u;
}

double HeuristicPolicy::accel(double s, double v, double v_prev) const
{
  const auto& g = gains_;
  const double gap = s - g.s_eq;
  const double k_gap = gap >= 0.0 ? g.k_spacing : g.k_spacing_close;
  const double a = k_gap * gap + g.k_relative * (v_prev - v) + g.k_cruise * (g.v_eq - v);
  return std::clamp(a, g.a_min, g.a_max);
}

std::vector<double> HeuristicPolicy::act(const PlatoonState& state, const PlatoonConfig& cfg) const
{
  std::vector<double> u;
  u.reserve(cfg.cav_indices.size());
  for (const auto j : cfg.cav_indices) {
    u.push_back(accel(state.spacing(j), state.velocity(j), state.velocity(j - 1)));
  }
  return u;
}

} // namespace coopsafe::policy
