#pragma once

/**
 * @file
 * @brief Safety-region sweeps over disturbance magnitude x duration.
 */

#include "coopsafe/runner.hpp"
#include "coopsafe/scenario.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace coopsafe::harness {

struct SweepGrid
{
  std::vector<double> accels;    ///< m/s^2, rows
  std::vector<double> durations; ///< s, columns

  /// accel 0.5..5.0 x duration 0.5..6.0, both in steps of 0.5.
  static SweepGrid defaults();

  /// "a0:a1:da,d0:d1:dd" (inclusive ranges) or single values, e.g. "3,4" or "0.5:5:0.5,4".
  static SweepGrid parse(std::string_view text);

  std::size_t cells() const { return accels.size() * durations.size(); }
  void validate() const;
};

/// Inclusive arithmetic range lo, lo+step, ..., hi (hi included within 1e-9 of a step).
std::vector<double> inclusive_range(double lo, double hi, double step);

struct RegionMatrix
{
  std::string scenario;
  Benchmark benchmark = Benchmark::M1;
  SweepGrid grid;
  std::vector<std::uint8_t> safe;  ///< row-major, accels x durations
  std::vector<double> min_h;       ///< min_i h_i over the run, per cell
  std::vector<double> min_spacing;

  std::size_t index(std::size_t accel_row, std::size_t duration_col) const
  {
    return accel_row * grid.durations.size() + duration_col;
  }
  bool at(std::size_t accel_row, std::size_t duration_col) const { return safe.at(index(accel_row, duration_col)) != 0; }
  std::size_t safe_cells() const;

  /// Cells safe in `other` but not here, as (accel row, duration column).
  std::vector<std::pair<std::size_t, std::size_t>> missing_from(const RegionMatrix& other) const;
  /// Cellwise superset of `other` on the same grid; throws on a grid mismatch.
  bool contains(const RegionMatrix& other) const;
};

/// Runs `base` once per grid cell with its accel and duration replaced. A cell is
/// safe iff the run has no collision and min h_i >= -tol. Cells run on up to
/// `threads` workers (0 = hardware concurrency); the result does not depend on it.
RegionMatrix safety_region_sweep(const ScenarioSpec& base,
                                 Benchmark benchmark,
                                 const SweepGrid& grid,
                                 const ControllerSetup& setup,
                                 unsigned threads = 0,
                                 double tol = 1e-3);

} // namespace coopsafe::harness
