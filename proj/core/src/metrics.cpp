#include "coopsafe/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace coopsafe::harness {

HeadwayResult avg_time_headway(const RunRecord& record)
{
  HeadwayResult r;
  double sum = 0.0;
  for (const auto& row : record.steps) {
    for (const auto j : record.platoon.cav_indices) {
      const double v = row.state.velocity(j);
      if (v <= 0.0) {
        ++r.excluded;
        continue;
      }
      sum += row.state.spacing(j) / v;
      ++r.samples;
    }
  }
  if (r.samples == 0) {
    throw std::invalid_argument("avg_time_headway: no sample with positive CAV velocity");
  }
  r.value = sum / static_cast<double>(r.samples);
  return r;
}

double aave(const RunRecord& record)
{
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& row : record.steps) {
    for (std::size_t i = 1; i <= row.state.size(); ++i) {
      sum += std::abs(row.state.velocity(i) - row.state.head_velocity);
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

MetricsRow metrics_row(const RunRecord& record)
{
  MetricsRow m;
  m.scenario = record.scenario;
  m.benchmark = record.benchmark;
  m.avg_time_headway = avg_time_headway(record).value;
  m.aave = aave(record);
  m.collision = record.collision;
  m.min_spacing = record.min_spacing;
  m.min_h = record.min_h_system;
  m.infeasible_qps = record.infeasible_qps;
  return m;
}

MetricsRow sine_disturbance_eval(Benchmark benchmark, const ControllerSetup& setup, const ScenarioSpec& spec)
{
  if (spec.kind != ScenarioKind::Sine) {
    throw std::invalid_argument("sine_disturbance_eval: scenario is not a sine scenario");
  }
  return metrics_row(run_scenario(spec, benchmark, setup));
}

} // namespace coopsafe::harness
