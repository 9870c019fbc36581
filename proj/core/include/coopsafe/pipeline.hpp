#pragma once

/**
 * @file
 * @brief Turns an ExperimentConfig into ready-to-run controllers.
 */

#include "coopsafe/conformal.hpp"
#include "coopsafe/conformal_io.hpp"
#include "coopsafe/experiment_config.hpp"
#include "coopsafe/policy.hpp"
#include "coopsafe/runner.hpp"

#include <memory>
#include <optional>

namespace coopsafe::harness {

struct CalibrationReport
{
  std::size_t samples = 0;
  std::size_t train_episodes = 0;
  std::size_t calibration_scores = 0;
  std::size_t test_scores = 0;
  double hdv_mse_initial = 0.0;
  double hdv_mse_final = 0.0;
  double cav_mse_initial = 0.0;
  double cav_mse_final = 0.0;
  double epsilon = 0.0;
  double C = 0.0;
  double coverage = 0.0; ///< held-out test share with score <= C
};

/// Dataset under `cav_policy`, episode split, predictor training and calibration.
conformal::PredictorDocument train_calibrated_predictor(const PlatoonConfig& cfg,
                                                        const PredictorSettings& settings,
                                                        const policy::NominalPolicy& cav_policy,
                                                        CalibrationReport* report = nullptr);

/// Heuristic feedback or a trained actor loaded from a checkpoint.
std::unique_ptr<policy::NominalPolicy> make_policy(const ExperimentConfig& cfg);

/// Owns the nominal policy, the behaviour predictor and the safety parameters of one experiment.
class Experiment
{
public:
  /// Loads or trains the predictor only when `with_predictor` is set.
  Experiment(ExperimentConfig cfg, bool with_predictor);

  const ExperimentConfig& config() const { return cfg_; }
  const policy::NominalPolicy& nominal() const { return *nominal_; }
  /// Empty when built without a predictor.
  const std::optional<conformal::PredictorDocument>& predictor() const { return predictor_; }
  const std::optional<CalibrationReport>& calibration_report() const { return report_; }
  double C() const;
  const safety::SafetyLayerParams& params() const { return params_; }

  /// Safety-layer benchmarks use the predictor when present, the exact model otherwise.
  ControllerSetup setup() const;

  RunRecord run(const ScenarioSpec& spec, Benchmark benchmark) const;

private:
  ExperimentConfig cfg_;
  std::unique_ptr<policy::NominalPolicy> nominal_;
  std::optional<conformal::PredictorDocument> predictor_;
  std::optional<CalibrationReport> report_;
  std::unique_ptr<conformal::PredictorEstimator> estimator_;
  safety::SafetyLayerParams params_;
};

} // namespace coopsafe::harness
