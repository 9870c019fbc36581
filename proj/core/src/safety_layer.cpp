#include "coopsafe/safety_layer.hpp"

#include <algorithm>

namespace coopsafe::safety {

Estimates ModelEstimator::estimate(const EstimationContext& ctx) const
{
  const auto& cfg = ctx.cfg;
  Estimates est = Estimates::unknown(cfg.n);
  for (std::size_t i = 1; i <= cfg.n; ++i) {
    if (cfg.is_cav(i)) {
      est.cav_input[i - 1] = ctx.u_rl[cfg.cav_slot(i)];
    } else {
      est.hdv_accel[i - 1] = dynamics::fvd_accel(ctx.current.spacing(i),
                                                 ctx.current.velocity(i),
                                                 ctx.current.velocity(i - 1),
                                                 cfg.fvd_for(i));
    }
  }
  return est;
}

std::vector<double> SafetyStep::applied() const
{
  std::vector<double> u;
  u.reserve(cavs.size());
  for (const auto& c : cavs) {
    u.push_back(c.u);
  }
  return u;
}

SafetyStep apply_safety_layer(const PlatoonState& state,
                              std::span<const double> u_rl,
                              const Estimates& estimates,
                              double C,
                              const SafetyLayerParams& params,
                              const PlatoonConfig& cfg,
                              BuildOptions options)
{
  SafetyStep out;
  out.cavs.reserve(cfg.cav_indices.size());
  for (const auto j : cfg.cav_indices) {
    CavFilterResult r;
    r.cav = j;
    r.u_rl = u_rl[cfg.cav_slot(j)];
    r.qp = build_qp(j, state, u_rl, estimates, C, params, cfg, options);
    r.solution = qp::solve(r.qp.problem);
    if (r.solution.optimal()) {
      r.u_safe = r.solution.w[r.qp.ego_index()];
      r.u = r.u_rl + r.u_safe;
    } else {
      r.fallback = true;
      r.u = std::clamp(r.u_rl, params.a_min, params.a_max);
      r.u_safe = r.u - r.u_rl;
      ++out.infeasible;
    }
    out.cavs.push_back(std::move(r));
  }
  return out;
}

} // namespace coopsafe::safety
