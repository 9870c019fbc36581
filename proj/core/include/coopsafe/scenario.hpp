#pragma once

/**
 * @file
 * @brief Disturbance scenarios: head-vehicle braking, an HDV surging forward,
 *        sinusoidal head acceleration, and the undisturbed platoon.
 */

#include "coopsafe/dynamics.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace coopsafe::harness {

using dynamics::PlatoonConfig;
using dynamics::PlatoonState;

enum class ScenarioKind {
  Steady,    ///< no disturbance
  HeadBrake, ///< head brakes at -accel for `duration`, then accelerates at +accel back to v_eq
  HdvSurge,  ///< HDV `target` accelerates at +accel for `duration`, then car-following resumes
  Sine,      ///< head acceleration amplitude*sin(2*pi*t/period + phase)
};

std::string_view to_string(ScenarioKind k);
ScenarioKind parse_scenario_kind(std::string_view s);

struct ScenarioSpec
{
  std::string name = "steady";
  ScenarioKind kind = ScenarioKind::Steady;
  PlatoonConfig platoon{};
  double s_eq = 20.0;
  double v_eq = 15.0;
  std::size_t target = 0; ///< 0 for the head vehicle, otherwise the surging HDV
  double accel = 0.0;     ///< disturbance magnitude (m/s^2), >= 0
  double start = 1.0;     ///< s
  double duration = 0.0;  ///< s
  double horizon = 30.0;  ///< s
  double sine_amplitude = 2.0;
  double sine_period = 20.0;
  double sine_phase = 3.141592653589793; ///< rad; pi decelerates first

  /// Throws std::invalid_argument when the disturbance is malformed.
  void validate() const;

  std::size_t steps() const;
  double time(std::size_t k) const { return static_cast<double>(k) * platoon.dt; }
  bool in_window(std::size_t k) const;

  /// Head acceleration at step k given the current head velocity.
  double head_accel(std::size_t k, double head_velocity) const;
  /// FVD overrides at step k.
  std::vector<dynamics::AccelOverride> overrides(std::size_t k) const;

  PlatoonState initial_state() const { return PlatoonState::uniform(platoon, s_eq, v_eq); }
};

ScenarioSpec steady_scenario(double horizon = 30.0);
/// Scenario 1: head brakes at -accel for `duration` seconds from t = 1 s.
ScenarioSpec braking_scenario(double accel = 3.0, double duration = 4.0);
/// Scenario 2: HDV 5 accelerates at +accel for `duration` seconds from t = 1 s.
ScenarioSpec surge_scenario(double accel = 2.5, double duration = 4.5);
ScenarioSpec sine_scenario(double amplitude = 2.0,
                           double period = 20.0,
                           double horizon = 100.0,
                           double phase = 3.141592653589793);

/// Scenario family used by sweeps: 1 = braking, 2 = surge.
ScenarioSpec family_scenario(int family, double accel, double duration);

} // namespace coopsafe::harness
