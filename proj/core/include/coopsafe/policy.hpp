#pragma once

/**
 * @file
 * @brief Nominal (pre-safety-filter) CAV controllers.
 */

#include "coopsafe/dynamics.hpp"

#include <string>
#include <vector>

namespace coopsafe::policy {

using dynamics::PlatoonConfig;
using dynamics::PlatoonState;

/// Maps a platoon state to one nominal input per CAV (cav_indices order).
class NominalPolicy
{
public:
  virtual ~NominalPolicy() = default;
  virtual std::vector<double> act(const PlatoonState& state, const PlatoonConfig& cfg) const = 0;
  virtual std::string name() const = 0;
};

/// CAVs drive with the same FVD law as the HDVs.
class FvdPolicy final : public NominalPolicy
{
public:
  std::vector<double> act(const PlatoonState& state, const PlatoonConfig& cfg) const override;
  std::string name() const override { return "fvd"; }
};

struct HeuristicGains
{
  double k_spacing = 0.1;        ///< on s - s_eq while the gap is at least s_eq (1/s^2)
  double k_spacing_close = 0.05; ///< on s - s_eq once the gap has shrunk below s_eq
  double k_relative = 0.5;       ///< on v_prev - v (1/s)
  double k_cruise = 0.3;         ///< on v_eq - v (1/s)
  double s_eq = 20.0;
  double v_eq = 15.0;
  double a_min = -5.0;
  double a_max = 5.0;
};

/// Linear feedback on the gap to the preceding vehicle, the closing speed and
/// the cruise-speed error. It only looks forward, keeps cruising when the
/// leader brakes and therefore collides in hard braking events unless filtered.
class HeuristicPolicy final : public NominalPolicy
{
public:
  explicit HeuristicPolicy(HeuristicGains gains = {}) : gains_(gains) {}
  std::vector<double> act(const PlatoonState& state, const PlatoonConfig& cfg) const override;
  std::string name() const override { return "heuristic"; }
  const HeuristicGains& gains() const { return gains_; }

  double accel(double s, double v, double v_prev) const;

private:
  HeuristicGains gains_;
};

} // namespace coopsafe::policy
