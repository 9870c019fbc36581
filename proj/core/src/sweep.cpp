#include "coopsafe/sweep.hpp"

#include "coopsafe/text_format.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace coopsafe::harness {

std::vector<double> inclusive_range(double lo, double hi, double step)
{
  if (!(step > 0.0) || !std::isfinite(lo) || !std::isfinite(hi) || hi < lo) {
    throw std::invalid_argument("range: need finite lo <= hi and step > 0");
  }
  std::vector<double> out;
  // Values are lo + k*step rather than accumulated, so they print cleanly.
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(lo + static_cast<double>(k) * step);
  }
  return out;
}

SweepGrid SweepGrid::defaults()
{
  return SweepGrid{inclusive_range(0.5, 5.0, 0.5), inclusive_range(0.5, 6.0, 0.5)};
}

namespace {

std::vector<double> parse_axis(std::string_view text)
{
  std::vector<double> parts;
  std::size_t pos = 0;
  while (true) {
    const auto colon = text.find(':', pos);
    parts.push_back(text::parse_double(text.substr(pos, colon - pos)));
    if (colon == std::string_view::npos) {
      break;
    }
    pos = colon + 1;
  }
  if (parts.size() == 1) {
    return parts;
  }
  if (parts.size() != 3) {
    throw std::invalid_argument("grid axis '" + std::string(text) + "': expected lo:hi:step or a single value");
  }
  return inclusive_range(parts[0], parts[1], parts[2]);
}

} // namespace

SweepGrid SweepGrid::parse(std::string_view text)
{
  const auto comma = text.find(',');
  if (comma == std::string_view::npos || text.find(',', comma + 1) != std::string_view::npos) {
    throw std::invalid_argument("grid '" + std::string(text) + "': expected <accel axis>,<duration axis>");
  }
  SweepGrid g{parse_axis(text.substr(0, comma)), parse_axis(text.substr(comma + 1))};
  g.validate();
  return g;
}

void SweepGrid::validate() const
{
  if (accels.empty() || durations.empty()) {
    throw std::invalid_argument("grid: both axes need at least one value");
  }
  for (const double a : accels) {
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw std::invalid_argument("grid: accelerations must be finite and >= 0");
    }
  }
  for (const double d : durations) {
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw std::invalid_argument("grid: durations must be finite and >= 0");
    }
  }
}

std::size_t RegionMatrix::safe_cells() const
{
  return static_cast<std::size_t>(std::count(safe.begin(), safe.end(), std::uint8_t{1}));
}

std::vector<std::pair<std::size_t, std::size_t>> RegionMatrix::missing_from(const RegionMatrix& other) const
{
  if (other.grid.accels != grid.accels || other.grid.durations != grid.durations) {
    throw std::invalid_argument("region comparison: grids differ");
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < grid.accels.size(); ++a) {
    for (std::size_t d = 0; d < grid.durations.size(); ++d) {
      if (other.at(a, d) && !at(a, d)) {
        out.emplace_back(a, d);
      }
    }
  }
  return out;
}

bool RegionMatrix::contains(const RegionMatrix& other) const
{
  return missing_from(other).empty();
}

RegionMatrix safety_region_sweep(const ScenarioSpec& base,
                                 Benchmark benchmark,
                                 const SweepGrid& grid,
                                 const ControllerSetup& setup,
                                 unsigned threads,
                                 double tol)
{
  grid.validate();
  if (base.kind != ScenarioKind::HeadBrake && base.kind != ScenarioKind::HdvSurge) {
    throw std::invalid_argument("sweep: scenario must be a braking or surge scenario");
  }
  RegionMatrix out;
  out.scenario = base.name;
  out.benchmark = benchmark;
  out.grid = grid;
  const std::size_t cells = grid.cells();
  out.safe.assign(cells, 0);
  out.min_h.assign(cells, 0.0);
  out.min_spacing.assign(cells, 0.0);

  // Each worker writes only its own cells, so assembly order cannot leak into the result.
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t c = next.fetch_add(1);
      if (c >= cells) {
        return;
      }
      try {
        ScenarioSpec spec = base;
        spec.accel = grid.accels[c / grid.durations.size()];
        spec.duration = grid.durations[c % grid.durations.size()];
        const RunRecord rec = run_scenario(spec, benchmark, setup);
        out.safe[c] = is_safe(rec, tol) ? 1 : 0;
        out.min_h[c] = rec.min_h_system;
        out.min_spacing[c] = rec.min_spacing;
      } catch (...) {
        const std::lock_guard lock(error_mutex);
        if (!error) {
          error = std::current_exception();
        }
        next.store(cells);
        return;
      }
    }
  };

  unsigned n = threads != 0 ? threads : std::max(1U, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, cells));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (unsigned t = 0; t < n; ++t) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) {
      t.join();
    }
  }
  if (error) {
    std::rethrow_exception(error);
  }
  return out;
}

} // namespace coopsafe::harness
