#pragma once

/**
 * @file
 * @brief Artifact formats.
 *
 * Trace CSV (version 1): a `# coopsafe.trace v1 key=value ...` line, then the
 * header `t,v0,s_1..s_n,v_1..v_n,a_1..a_n,h_1..h_n,hsuf_<i> (protected HDVs),
 * u_rl_<j>,u_safe_<j>,qp_<j> (CAVs)` and one row per step. qp is 0 (solved),
 * 1 (infeasible, clamped nominal applied) or -1 (no filter).
 *
 * Region JSON (format "coopsafe.region", version 1) stores a sweep matrix.
 * Metrics CSV (version 1) holds one row per run.
 */

#include "coopsafe/metrics.hpp"
#include "coopsafe/runner.hpp"
#include "coopsafe/sweep.hpp"

#include <filesystem>
#include <span>
#include <string>

namespace coopsafe::harness {

inline constexpr int kTraceVersion = 1;
inline constexpr int kRegionVersion = 1;
inline constexpr int kMetricsVersion = 1;

std::string trace_to_csv(const RunRecord& record);
/// Rebuilds a record (states, actions, barrier values, QP status) and re-derives its summary.
RunRecord trace_from_csv(const std::string& text);
void write_trace(const RunRecord& record, const std::filesystem::path& path);
RunRecord read_trace(const std::filesystem::path& path);

std::string region_to_json(const RegionMatrix& region);
RegionMatrix region_from_json(const std::string& text);
void write_region(const RegionMatrix& region, const std::filesystem::path& path);
RegionMatrix read_region(const std::filesystem::path& path);

/// Header: scenario,benchmark,avg_time_headway,aave,collision,min_spacing,min_h,infeasible_qps.
std::string metrics_to_csv(std::span<const MetricsRow> rows);
void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path);

} // namespace coopsafe::harness
