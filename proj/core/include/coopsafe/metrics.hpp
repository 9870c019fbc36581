#pragma once

/**
 * @file
 * @brief Efficiency metrics over run records: average CAV time headway and
 *        average absolute velocity error (AAVE) against the head vehicle.
 */

#include "coopsafe/runner.hpp"
#include "coopsafe/scenario.hpp"

#include <cstddef>
#include <string>

namespace coopsafe::harness {

struct HeadwayResult
{
  double value = 0.0;          ///< mean s/v over CAVs and steps (s)
  std::size_t samples = 0;
  std::size_t excluded = 0;    ///< samples with v <= 0
};

/// Throws std::invalid_argument when every sample has v <= 0.
HeadwayResult avg_time_headway(const RunRecord& record);

/// Mean of |v_i - v_0| over vehicles 1..n and all steps (m/s).
double aave(const RunRecord& record);

struct MetricsRow
{
  std::string scenario;
  Benchmark benchmark = Benchmark::M1;
  double avg_time_headway = 0.0;
  double aave = 0.0;
  bool collision = false;
  double min_spacing = 0.0;
  double min_h = 0.0;
  int infeasible_qps = 0;
};

MetricsRow metrics_row(const RunRecord& record);

/// Runs the sine scenario (default realization when `spec` is omitted) and reports its metrics.
MetricsRow sine_disturbance_eval(Benchmark benchmark, const ControllerSetup& setup, const ScenarioSpec& spec = sine_scenario());

} // namespace coopsafe::harness
