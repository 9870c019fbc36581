#pragma once

/**
 * @file
 * @brief One JSON document per experiment (format "coopsafe.experiment", version 1).
 *
 * Every key is optional; missing keys keep the defaults below. Unknown keys are
 * rejected so that typos do not silently fall back to defaults.
 *
 * {
 *   "seed": 1,
 *   "platoon":   {"n": 7, "cavs": [2, 4], "comm_range": 3, "dt": 0.1},
 *   "fvd":       {"alpha": 0.6, "beta": 0.9, "s_st": 5, "s_go": 35, "v_max": 30},
 *   "safety":    {"tau": 0.3, "gamma_cav": 1, "gamma_hdv": 2, "k": 0.4,
 *                 "slack_weight": 1000, "a_min": -5, "a_max": 5},
 *   "scenario":  {"name": "scenario1", "kind": "braking", "target": 0, "accel": 3,
 *                 "start": 1, "duration": 4, "horizon": 30, "s_eq": 20, "v_eq": 15,
 *                 "sine_amplitude": 2, "sine_period": 20, "sine_phase": 3.14159...},
 *   "benchmark": "M5",
 *   "policy":    {"kind": "heuristic" | "checkpoint", "checkpoint": "path",
 *                 "k_spacing": 0.1, "k_spacing_close": 0.05, "k_relative": 0.5, "k_cruise": 0.3},
 *   "predictor": {"path": "", "episodes": 10, "steps": 1000, "noise_std": 0.2,
 *                 "dataset_seed": 7, "epochs": 20, "train_seed": 1,
 *                 "train_fraction": 0.6, "calibration_fraction": 0.2, "split_seed": 3,
 *                 "epsilon": 0.01},
 *   "sweep":     {"grid": "0.5:5:0.5,0.5:6:0.5", "tol": 0.001, "threads": 0}
 * }
 *
 * Relative paths inside the document resolve against the document's directory.
 */

#include "coopsafe/policy.hpp"
#include "coopsafe/runner.hpp"
#include "coopsafe/safety.hpp"
#include "coopsafe/scenario.hpp"
#include "coopsafe/sweep.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace coopsafe::harness {

inline constexpr int kExperimentVersion = 1;

struct SafetySettings
{
  double tau = 0.3;
  double gamma_cav = 1.0;
  double gamma_hdv = 2.0;
  double k = 0.4;
  double slack_weight = 1e3;
  double a_min = -5.0;
  double a_max = 5.0;

  safety::SafetyLayerParams params(const PlatoonConfig& cfg) const;
};

enum class PolicyKind { Heuristic, Checkpoint };

struct PolicySettings
{
  PolicyKind kind = PolicyKind::Heuristic;
  std::filesystem::path checkpoint;
  policy::HeuristicGains gains;
};

struct PredictorSettings
{
  std::filesystem::path path; ///< load a calibrated predictor document instead of training
  std::size_t episodes = 10;
  std::size_t steps = 1000;
  double noise_std = 0.2;
  std::uint64_t dataset_seed = 7;
  int epochs = 20;
  std::uint64_t train_seed = 1;
  double train_fraction = 0.6;
  double calibration_fraction = 0.2;
  std::uint64_t split_seed = 3;
  double epsilon = 0.01;
};

struct SweepSettings
{
  SweepGrid grid = SweepGrid::defaults();
  double tol = 1e-3;
  unsigned threads = 0; ///< 0 = hardware concurrency
};

struct ExperimentConfig
{
  std::uint64_t seed = 1;
  PlatoonConfig platoon;
  SafetySettings safety;
  ScenarioSpec scenario = braking_scenario();
  Benchmark benchmark = Benchmark::M5;
  PolicySettings policy;
  PredictorSettings predictor;
  SweepSettings sweep;

  /// Scenario 1 at its nominal disturbance, benchmark M5, heuristic nominal policy.
  static ExperimentConfig defaults();

  /// `base_dir` anchors relative paths.
  static ExperimentConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json() const;

  /// Throws std::invalid_argument naming the first bad section.
  void validate() const;
  /// The scenario with this platoon layout.
  ScenarioSpec scenario_spec() const;
};

} // namespace coopsafe::harness
