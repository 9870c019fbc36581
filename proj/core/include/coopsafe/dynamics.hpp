#pragma once

/**
 * @file
 * @brief Longitudinal platoon dynamics: state, FVD car-following law, Euler integration.
 *
 * Vehicles are indexed 1..n from front to back; index 0 is the head vehicle,
 * which is only described by its velocity. Vehicle i measures its spacing to
 * vehicle i-1.
 */

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace coopsafe::dynamics {

enum class Role { Cav, Hdv };

/// Full Velocity Difference car-following parameters.
struct FvdParams
{
  double alpha = 0.6;  ///< gain on the optimal-velocity error (1/s)
  double beta = 0.9;   ///< gain on the relative velocity (1/s)
  double s_st = 5.0;   ///< stop spacing (m)
  double s_go = 35.0;  ///< free-flow spacing (m)
  double v_max = 30.0; ///< free-flow velocity (m/s)

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

struct VehicleState
{
  double spacing = 0.0;  ///< gap to the preceding vehicle (m)
  double velocity = 0.0; ///< m/s
};

struct PlatoonConfig
{
  std::size_t n = 7;
  std::vector<std::size_t> cav_indices{2, 4}; ///< 1-based, ascending
  /// Per-vehicle FVD parameters (size n, entry i-1 for vehicle i). Empty means
  /// every vehicle uses `default_fvd`.
  std::vector<FvdParams> fvd;
  FvdParams default_fvd{};
  double dt = 0.1;
  std::size_t comm_range = 3; ///< vehicles observable ahead and behind each CAV

  void validate() const;

  bool is_cav(std::size_t i) const;
  Role role(std::size_t i) const;
  const FvdParams& fvd_for(std::size_t i) const;

  /// Foremost CAV; throws if there is none.
  std::size_t first_cav() const;

  /// Vehicles i-R..i-1 that exist (index >= 1), front to back.
  std::vector<std::size_t> preceding_in_range(std::size_t i) const;
  /// Vehicles i+1..i+R that exist (index <= n), front to back.
  std::vector<std::size_t> following_in_range(std::size_t i) const;

  /// Position of CAV `i` inside `cav_indices`; throws if `i` is not a CAV.
  std::size_t cav_slot(std::size_t i) const;
};

struct PlatoonState
{
  double head_velocity = 0.0;
  std::vector<VehicleState> vehicles; ///< entry i-1 is vehicle i
  std::vector<Role> roles;

  std::size_t size() const { return vehicles.size(); }

  /// 1-based accessors.
  const VehicleState& vehicle(std::size_t i) const;
  VehicleState& vehicle(std::size_t i);
  double spacing(std::size_t i) const { return vehicle(i).spacing; }
  /// Velocity of vehicle i; i = 0 returns the head velocity.
  double velocity(std::size_t i) const;

  /// State vector ordered [s_1, v_1, ..., s_n, v_n].
  Eigen::VectorXd to_vector() const;

  static PlatoonState uniform(const PlatoonConfig& cfg, double spacing, double velocity);
};

/// 0-based position of s_i and v_i inside PlatoonState::to_vector().
constexpr std::size_t spacing_slot(std::size_t i) { return 2 * (i - 1); }
constexpr std::size_t velocity_slot(std::size_t i) { return 2 * (i - 1) + 1; }

/// Spacing-dependent desired velocity V(s).
double optimal_velocity(double s, const FvdParams& p);

/// FVD acceleration alpha*(V(s)-v) + beta*(v_prev-v).
double fvd_accel(double s, double v, double v_prev, const FvdParams& p);

/// v_max such that V(s_star) = v_star; requires s_st < s_star < s_go.
double equilibrium_vmax(double s_star, double v_star, const FvdParams& p);

/// Replaces the car-following output of one vehicle for a step.
struct AccelOverride
{
  std::size_t index = 0;
  double accel = 0.0;
};

/// Accelerations applied to vehicles 1..n (entry i-1) for one step:
/// CAVs take their control input, HDVs the FVD law, overrides win over both.
std::vector<double> accelerations(const PlatoonState& state,
                                  std::span<const double> u,
                                  const PlatoonConfig& cfg,
                                  std::span<const AccelOverride> overrides = {});

/// One forward-Euler step. `u` holds one input per CAV in `cfg.cav_indices`
/// order. Velocities are clamped at zero; spacing may become negative.
PlatoonState step(const PlatoonState& state,
                  std::span<const double> u,
                  double head_accel,
                  const PlatoonConfig& cfg,
                  std::span<const AccelOverride> overrides = {});

/// Euler step with precomputed accelerations (entry i-1 for vehicle i).
PlatoonState integrate(const PlatoonState& state,
                       std::span<const double> accel,
                       double head_accel,
                       double dt);

} // namespace coopsafe::dynamics
