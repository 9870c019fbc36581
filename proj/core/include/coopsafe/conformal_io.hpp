#pragma once

/**
 * @file
 * @brief Persistence for behaviour datasets (CSV) and trained predictors (JSON).
 *
 * Dataset columns: episode,step,vehicle,role,x0,x1,x2,x3,accel.
 * Predictor documents carry "format": "coopsafe.predictor" and an integer
 * "version"; readers reject other formats and newer versions.
 */

#include "coopsafe/conformal.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace coopsafe::conformal {

inline constexpr int kPredictorVersion = 1;

void write_dataset(const BehaviorDataset& ds, const std::filesystem::path& path);
BehaviorDataset read_dataset(const std::filesystem::path& path);

struct PredictorDocument
{
  PredictorSet predictors;
  std::optional<ConformalCalibrator> calibration; ///< scores are not stored, only epsilon, p and C
  std::size_t calibration_size = 0;
};

std::string predictor_to_json(const PredictorDocument& doc);
PredictorDocument predictor_from_json(const std::string& text);

void write_predictor(const PredictorDocument& doc, const std::filesystem::path& path);
PredictorDocument read_predictor(const std::filesystem::path& path);

} // namespace coopsafe::conformal
