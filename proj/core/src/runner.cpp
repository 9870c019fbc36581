#include "coopsafe/runner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace coopsafe::harness {

std::string_view to_string(Benchmark b)
{
  switch (b) {
  case Benchmark::M1:
    return "M1";
  case Benchmark::M2:
    return "M2";
  case Benchmark::M3:
    return "M3";
  case Benchmark::M4:
    return "M4";
  case Benchmark::M5:
    return "M5";
  }
  return "?";
}

Benchmark parse_benchmark(std::string_view s)
{
  for (const auto b : {Benchmark::M1, Benchmark::M2, Benchmark::M3, Benchmark::M4, Benchmark::M5}) {
    if (s == to_string(b)) {
      return b;
    }
  }
  throw std::invalid_argument("unknown benchmark '" + std::string(s) + "' (expected M1..M5)");
}

bool uses_policy(Benchmark b) { return b != Benchmark::M1; }

bool uses_safety_layer(Benchmark b) { return b == Benchmark::M3 || b == Benchmark::M4 || b == Benchmark::M5; }

RunRecord run_scenario(const ScenarioSpec& spec, Benchmark benchmark, const ControllerSetup& setup)
{
  spec.validate();
  const auto& cfg = spec.platoon;
  if (uses_policy(benchmark) && setup.nominal == nullptr) {
    throw std::invalid_argument("run_scenario: benchmark " + std::string(to_string(benchmark)) +
                                " needs a nominal policy");
  }
  auto params = setup.params ? *setup.params : safety::SafetyLayerParams::defaults(cfg);
  if (benchmark == Benchmark::M3) {
    params = params.non_cooperative(cfg);
  }
  params.validate(cfg);
  const double C = benchmark == Benchmark::M5 ? setup.C : 0.0;
  const safety::ModelEstimator model;
  const safety::BehaviorEstimator& estimator = setup.estimator != nullptr ? *setup.estimator : model;
  const policy::FvdPolicy fvd;
  const policy::NominalPolicy& nominal = benchmark == Benchmark::M1 ? fvd : *setup.nominal;
  const auto protected_set = safety::protected_hdvs(cfg);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  RunRecord rec;
  rec.scenario = spec.name;
  rec.benchmark = benchmark;
  rec.platoon = cfg;
  rec.tau = params.tau;
  const auto n_steps = spec.steps();
  rec.steps.reserve(n_steps);

  auto state = spec.initial_state();
  auto prev = state;
  std::vector<double> prev_accel(cfg.n, 0.0);
  for (std::size_t k = 0; k < n_steps; ++k) {
    StepRecord row;
    row.t = spec.time(k);
    row.state = state;
    row.u_rl = nominal.act(state, cfg);
    const std::size_t m = cfg.cav_indices.size();
    row.u_safe.assign(m, 0.0);
    row.qp_status.assign(m, -1);

    std::vector<double> u = row.u_rl;
    if (benchmark == Benchmark::M2) {
      for (auto& x : u) {
        x = std::clamp(x, params.a_min, params.a_max);
      }
      for (std::size_t c = 0; c < m; ++c) {
        row.u_safe[c] = u[c] - row.u_rl[c];
      }
    } else if (uses_safety_layer(benchmark)) {
      const safety::EstimationContext ctx{state, prev, prev_accel, row.u_rl, cfg};
      const auto est = estimator.estimate(ctx);
      const auto filtered = safety::apply_safety_layer(state, row.u_rl, est, C, params, cfg);
      for (std::size_t c = 0; c < m; ++c) {
        const auto& r = filtered.cavs[c];
        u[c] = r.u;
        row.u_safe[c] = r.u_safe;
        row.qp_status[c] = r.fallback ? 1 : 0;
      }
      rec.infeasible_qps += filtered.infeasible;
    }

    row.accel = dynamics::accelerations(state, u, cfg, spec.overrides(k));
    row.h.resize(cfg.n);
    row.h_suf.assign(cfg.n, nan);
    for (std::size_t i = 1; i <= cfg.n; ++i) {
      row.h[i - 1] = safety::cbf_value(i, state, params.tau);
    }
    for (const auto i : protected_set) {
      row.h_suf[i - 1] = safety::reduced_order_h(i, state, params, cfg);
    }
    const double head_acc = spec.head_accel(k, state.head_velocity);
    auto next = dynamics::integrate(state, row.accel, head_acc, cfg.dt);
    prev = state;
    prev_accel = row.accel;
    state = std::move(next);
    rec.steps.push_back(std::move(row));
  }
  summarize(rec);
  return rec;
}

void summarize(RunRecord& record)
{
  const auto& cfg = record.platoon;
  record.collision = false;
  record.min_spacing = std::numeric_limits<double>::infinity();
  record.min_h_system = std::numeric_limits<double>::infinity();
  const std::size_t first = cfg.cav_indices.empty() ? 1 : cfg.first_cav();
  for (const auto& row : record.steps) {
    for (std::size_t i = 1; i <= row.state.size(); ++i) {
      const double s = row.state.spacing(i);
      record.min_spacing = std::min(record.min_spacing, s);
      if (s <= 0.0) {
        record.collision = true;
      }
      if (i >= first) {
        record.min_h_system = std::min(record.min_h_system, s - record.tau * row.state.velocity(i));
      }
    }
  }
}

bool is_safe(const RunRecord& record, double tol) { return !record.collision && record.min_h_system >= -tol; }

} // namespace coopsafe::harness
