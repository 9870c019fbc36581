#include "coopsafe/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace coopsafe::harness {

namespace {

std::size_t to_steps(double seconds, double dt)
{
  return static_cast<std::size_t>(std::llround(seconds / dt));
}

} // namespace

std::string_view to_string(ScenarioKind k)
{
  switch (k) {
  case ScenarioKind::Steady:
    return "steady";
  case ScenarioKind::HeadBrake:
    return "braking";
  case ScenarioKind::HdvSurge:
    return "surge";
  case ScenarioKind::Sine:
    return "sine";
  }
  return "unknown";
}

ScenarioKind parse_scenario_kind(std::string_view s)
{
  for (const auto k : {ScenarioKind::Steady, ScenarioKind::HeadBrake, ScenarioKind::HdvSurge, ScenarioKind::Sine}) {
    if (s == to_string(k)) {
      return k;
    }
  }
  throw std::invalid_argument("unknown scenario kind '" + std::string(s) + "'");
}

void ScenarioSpec::validate() const
{
  platoon.validate();
  if (!(horizon > 0.0)) {
    throw std::invalid_argument("scenario: horizon must be positive");
  }
  if (accel < 0.0 || duration < 0.0 || start < 0.0) {
    throw std::invalid_argument("scenario: accel, start and duration must be nonnegative");
  }
  if (start + duration > horizon + 1e-9) {
    throw std::invalid_argument("scenario: disturbance window exceeds the horizon");
  }
  if (kind == ScenarioKind::HdvSurge) {
    if (target < 1 || target > platoon.n || platoon.is_cav(target)) {
      throw std::invalid_argument("scenario: surge target must be an HDV index");
    }
  }
  if (kind == ScenarioKind::Sine && !(sine_period > 0.0)) {
    throw std::invalid_argument("scenario: sine period must be positive");
  }
}

std::size_t ScenarioSpec::steps() const { return to_steps(horizon, platoon.dt); }

bool ScenarioSpec::in_window(std::size_t k) const
{
  const auto k0 = to_steps(start, platoon.dt);
  const auto k1 = to_steps(start + duration, platoon.dt);
  return k >= k0 && k < k1;
}

double ScenarioSpec::head_accel(std::size_t k, double head_velocity) const
{
  switch (kind) {
  case ScenarioKind::HeadBrake: {
    if (in_window(k)) {
      return -accel;
    }
    if (k >= to_steps(start + duration, platoon.dt) && head_velocity < v_eq) {
      // Recover at +accel without overshooting the equilibrium speed.
      return std::min(accel, (v_eq - head_velocity) / platoon.dt);
    }
    return 0.0;
  }
  case ScenarioKind::Sine:
    return sine_amplitude * std::sin(2.0 * std::numbers::pi * time(k) / sine_period + sine_phase);
  case ScenarioKind::Steady:
  case ScenarioKind::HdvSurge:
    return 0.0;
  }
  return 0.0;
}

std::vector<dynamics::AccelOverride> ScenarioSpec::overrides(std::size_t k) const
{
  if (kind == ScenarioKind::HdvSurge && in_window(k)) {
    return {dynamics::AccelOverride{target, accel}};
  }
  return {};
}

ScenarioSpec steady_scenario(double horizon)
{
  ScenarioSpec s;
  s.name = "steady";
  s.kind = ScenarioKind::Steady;
  s.start = 0.0;
  s.horizon = horizon;
  return s;
}

ScenarioSpec braking_scenario(double accel, double duration)
{
  ScenarioSpec s;
  s.name = "scenario1";
  s.kind = ScenarioKind::HeadBrake;
  s.target = 0;
  s.accel = accel;
  s.duration = duration;
  s.horizon = 30.0;
  return s;
}

ScenarioSpec surge_scenario(double accel, double duration)
{
  ScenarioSpec s;
  s.name = "scenario2";
  s.kind = ScenarioKind::HdvSurge;
  s.target = 5;
  s.accel = accel;
  s.duration = duration;
  s.horizon = 30.0;
  return s;
}

ScenarioSpec sine_scenario(double amplitude, double period, double horizon, double phase)
{
  ScenarioSpec s;
  s.name = "sine";
  s.kind = ScenarioKind::Sine;
  s.start = 0.0;
  s.horizon = horizon;
  s.sine_amplitude = amplitude;
  s.sine_period = period;
  s.sine_phase = phase;
  return s;
}

ScenarioSpec family_scenario(int family, double accel, double duration)
{
  switch (family) {
  case 1:
    return braking_scenario(accel, duration);
  case 2:
    return surge_scenario(accel, duration);
  default:
    throw std::invalid_argument("scenario family must be 1 or 2");
  }
}

} // namespace coopsafe::harness
