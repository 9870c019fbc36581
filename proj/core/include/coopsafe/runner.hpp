#pragma once

/**
 * @file
 * @brief Closed-loop rollouts of the five benchmark controllers.
 *
 *  - M1: CAVs follow the FVD law (no learning, no filter)
 *  - M2: nominal policy clipped to the actuator bounds
 *  - M3: nominal policy + safety layer, each HDV protected by its nearest upstream CAV only
 *  - M4: nominal policy + cooperative safety layer, no conformal margin
 *  - M5: nominal policy + cooperative safety layer with the calibrated margin C
 */

#include "coopsafe/policy.hpp"
#include "coopsafe/safety.hpp"
#include "coopsafe/safety_layer.hpp"
#include "coopsafe/scenario.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace coopsafe::harness {

enum class Benchmark { M1, M2, M3, M4, M5 };

std::string_view to_string(Benchmark b);
Benchmark parse_benchmark(std::string_view s);
bool uses_policy(Benchmark b);
bool uses_safety_layer(Benchmark b);

struct ControllerSetup
{
  const policy::NominalPolicy* nominal = nullptr;       ///< required for M2-M5
  const safety::BehaviorEstimator* estimator = nullptr; ///< M3-M5; exact model when null
  double C = 0.0;                                       ///< conformal threshold, M5 only
  std::optional<safety::SafetyLayerParams> params;      ///< defaults when empty
};

struct StepRecord
{
  double t = 0.0;
  PlatoonState state;
  std::vector<double> accel;  ///< applied accelerations, entry i-1
  std::vector<double> h;      ///< h_i, entry i-1
  std::vector<double> h_suf;  ///< reduced-order barrier for protected HDVs, NaN elsewhere
  std::vector<double> u_rl;   ///< per CAV
  std::vector<double> u_safe; ///< per CAV
  std::vector<int> qp_status; ///< per CAV: 0 optimal, 1 infeasible (fallback), -1 no filter
};

struct RunRecord
{
  std::string scenario;
  Benchmark benchmark = Benchmark::M1;
  PlatoonConfig platoon;
  double tau = 0.3;
  std::vector<StepRecord> steps;

  bool collision = false;      ///< some spacing <= 0
  double min_spacing = 0.0;
  double min_h_system = 0.0;   ///< min h_i over vehicles at or behind the first CAV
  int infeasible_qps = 0;
};

RunRecord run_scenario(const ScenarioSpec& spec, Benchmark benchmark, const ControllerSetup& setup);

/// Recomputes the collision flag and minima from the steps.
void summarize(RunRecord& record);

/// No collision and min h_i (i >= first CAV) >= -tol.
bool is_safe(const RunRecord& record, double tol = 1e-3);

} // namespace coopsafe::harness
