#pragma once

/**
 * @file
 * @brief Acceleration predictors for surrounding vehicles and split-conformal
 *        calibration of the max-norm prediction error.
 *
 * A predictor maps the observation of a vehicle at step t-1 to its
 * acceleration at step t. HDV observations are (spacing, velocity, preceding
 * velocity); CAV observations add the CAV's own previous acceleration:
 * (spacing, velocity, acceleration, preceding velocity).
 */

#include "coopsafe/dynamics.hpp"
#include "coopsafe/nn.hpp"
#include "coopsafe/safety_layer.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace coopsafe::conformal {

using dynamics::PlatoonConfig;
using dynamics::PlatoonState;

enum class Target { Hdv, Cav };

constexpr int feature_dim(Target t) { return t == Target::Hdv ? 3 : 4; }

std::string_view to_string(Target t);

/// Observation of vehicle i in `state`; `accel` is the vehicle's last acceleration (CAVs only).
std::array<double, 4> features(std::size_t i, const PlatoonState& state, double accel, Target t);

struct BehaviorSample
{
  std::uint32_t episode = 0;
  std::uint32_t step = 0; ///< t; features are taken at t-1
  std::uint32_t vehicle = 0;
  Target role = Target::Hdv;
  std::array<double, 4> x{}; ///< unused trailing entries are zero
  double accel = 0.0;        ///< ground truth a_i^t
};

/// Rows ordered by (episode, step, vehicle).
struct BehaviorDataset
{
  std::vector<BehaviorSample> samples;
  std::size_t episodes = 0;
  std::size_t vehicles = 0;

  /// Feature matrix (one sample per column) and targets for one role, restricted to `episodes_subset`.
  void matrices(Target role,
                std::span<const std::size_t> episodes_subset,
                Eigen::MatrixXd& x,
                Eigen::VectorXd& y) const;
};

/// CAV inputs for a state, one per CAV in cav_indices order.
using CavPolicyFn = std::function<std::vector<double>(const PlatoonState&)>;

struct DatasetOptions
{
  std::size_t episodes = 1;
  std::size_t steps = 1000;
  double noise_std = 0.2;       ///< head velocity noise per step (m/s)
  double head_velocity = 15.0;  ///< mean head velocity (m/s)
  double spacing = 20.0;        ///< initial spacing (m)
  std::uint64_t seed = 1;
};

/// Rolls out the platoon with the head velocity resampled each step as
/// head_velocity + N(0, noise_std). Produces (steps - 1) * n rows per episode.
BehaviorDataset generate_dataset(const PlatoonConfig& cfg, const DatasetOptions& opts, const CavPolicyFn& policy);

struct EpisodeSplit
{
  std::vector<std::size_t> train;
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
};

/// Shuffles episode ids with `seed` and cuts them by the given fractions (test gets the rest).
EpisodeSplit split_episodes(std::size_t episodes, double train_fraction, double calibration_fraction, std::uint64_t seed);

struct TrainOptions
{
  int epochs = 30;
  int batch = 256;
  double lr = 1e-3;
  std::vector<int> hidden{32, 32};
  std::uint64_t seed = 1;
};

/// Network plus the input normalization it was trained with.
struct Regressor
{
  nn::Mlp net;
  nn::Standardizer input;

  double predict(std::span<const double> x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

struct FitReport
{
  std::vector<double> epoch_mse; ///< training MSE after each epoch, entry 0 before training
};

/// Minibatch Adam on mean squared error. Throws std::runtime_error on a non-finite loss.
Regressor train_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TrainOptions& opts, FitReport* report = nullptr);

/// One regressor per role.
struct PredictorSet
{
  Regressor hdv;
  Regressor cav;

  const Regressor& of(Target t) const { return t == Target::Hdv ? hdv : cav; }
  double predict(Target t, const std::array<double, 4>& x) const;
};

PredictorSet train_predictors(const BehaviorDataset& ds,
                              std::span<const std::size_t> train_episodes,
                              const TrainOptions& opts,
                              FitReport* hdv_report = nullptr,
                              FitReport* cav_report = nullptr);

/// max_i |truth_i - pred_i|. Throws on empty or mismatched input.
double nonconformity(std::span<const double> truth, std::span<const double> pred);

/// Vehicles whose behaviour the QP of `ego` estimates: guarded HDVs and the other CAVs in range.
std::vector<std::size_t> estimated_vehicles(std::size_t ego, const PlatoonConfig& cfg);

/// One score per (episode, step, CAV): the max prediction error over estimated_vehicles().
std::vector<double> nonconformity_scores(const BehaviorDataset& ds,
                                         std::span<const std::size_t> episodes_subset,
                                         const PredictorSet& predictors,
                                         const PlatoonConfig& cfg);

struct ConformalCalibrator
{
  std::vector<double> scores; ///< sorted, with a trailing +infinity sentinel
  double epsilon = 0.01;
  std::size_t p = 0; ///< 1-based rank of the threshold
  double C = 0.0;

  bool vacuous() const;
};

/// C = R_(p), p = ceil((|D_cal| + 1)(1 - epsilon)). Throws on empty scores or epsilon outside (0, 1).
ConformalCalibrator calibrate(std::vector<double> scores, double epsilon);

/// Fraction of test scores <= C.
double coverage(const ConformalCalibrator& cal, std::span<const double> test_scores);

/// Safety-layer estimator backed by trained predictors.
class PredictorEstimator final : public safety::BehaviorEstimator
{
public:
  explicit PredictorEstimator(PredictorSet predictors) : predictors_(std::move(predictors)) {}
  safety::Estimates estimate(const safety::EstimationContext& ctx) const override;

private:
  PredictorSet predictors_;
};

} // namespace coopsafe::conformal
