#pragma once

/**
 * @file
 * @brief Runs one safety QP per CAV and turns nominal inputs into applied inputs.
 */

#include "coopsafe/qp.hpp"
#include "coopsafe/safety.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace coopsafe::safety {

/// Information an estimator may use at one control step.
struct EstimationContext
{
  const PlatoonState& current;
  /// State one step earlier; equals `current` at the first step.
  const PlatoonState& previous;
  /// Accelerations applied during the previous step (entry i-1), zeros at the first step.
  std::span<const double> previous_accel;
  /// Nominal inputs of all CAVs at this step (cav_indices order).
  std::span<const double> u_rl;
  const PlatoonConfig& cfg;
};

/// Supplies F_hat for HDVs and u_hat for CAVs.
class BehaviorEstimator
{
public:
  virtual ~BehaviorEstimator() = default;
  virtual Estimates estimate(const EstimationContext& ctx) const = 0;
};

/// Uses the true FVD law for HDVs and the actual nominal inputs for CAVs.
class ModelEstimator final : public BehaviorEstimator
{
public:
  Estimates estimate(const EstimationContext& ctx) const override;
};

struct CavFilterResult
{
  std::size_t cav = 0;
  double u_rl = 0.0;
  double u_safe = 0.0;
  double u = 0.0; ///< applied input u_RL + u_safe
  bool fallback = false; ///< QP infeasible, clamped nominal applied
  SafetyQp qp;
  qp::QpSolution solution;
};

struct SafetyStep
{
  std::vector<CavFilterResult> cavs; ///< cav_indices order
  int infeasible = 0;

  std::vector<double> applied() const;
};

/// Filters `u_rl` (cav_indices order) through the per-CAV QPs.
SafetyStep apply_safety_layer(const PlatoonState& state,
                              std::span<const double> u_rl,
                              const Estimates& estimates,
                              double C,
                              const SafetyLayerParams& params,
                              const PlatoonConfig& cfg,
                              BuildOptions options = {});

} // namespace coopsafe::safety
