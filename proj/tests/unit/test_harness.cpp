#include "coopsafe/emit.hpp"
#include "coopsafe/experiment_config.hpp"
#include "coopsafe/metrics.hpp"
#include "coopsafe/runner.hpp"
#include "coopsafe/scenario.hpp"
#include "coopsafe/sweep.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace coopsafe;
using namespace coopsafe::harness;

namespace {

const policy::HeuristicPolicy kHeuristic;

ControllerSetup exact_setup()
{
  ControllerSetup s;
  s.nominal = &kHeuristic;
  return s;
}

constexpr Benchmark kAll[] = {Benchmark::M1, Benchmark::M2, Benchmark::M3, Benchmark::M4, Benchmark::M5};

// A record whose per-step states are supplied by the caller.
RunRecord record_of(std::vector<dynamics::PlatoonState> states)
{
  RunRecord r;
  r.platoon = PlatoonConfig{};
  for (std::size_t k = 0; k < states.size(); ++k) {
    StepRecord row;
    row.t = static_cast<double>(k) * r.platoon.dt;
    row.state = std::move(states[k]);
    r.steps.push_back(std::move(row));
  }
  summarize(r);
  return r;
}

} // namespace

TEST(Scenario, Validation)
{
  EXPECT_NO_THROW(braking_scenario().validate());
  EXPECT_NO_THROW(surge_scenario().validate());
  auto s = braking_scenario(-1.0, 2.0);
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = braking_scenario(3.0, 40.0);
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = surge_scenario();
  s.target = 4; // a CAV
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.target = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = sine_scenario();
  s.sine_period = 0.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_THROW(family_scenario(3, 1.0, 1.0), std::invalid_argument);
  EXPECT_EQ(parse_scenario_kind("surge"), ScenarioKind::HdvSurge);
  EXPECT_EQ(parse_benchmark("M3"), Benchmark::M3);
  EXPECT_THROW(parse_benchmark("M6"), std::invalid_argument);
}

TEST(Scenario, DisturbanceWindow)
{
  const auto s = braking_scenario(3.0, 4.0);
  EXPECT_EQ(s.head_accel(9, 15.0), 0.0);
  EXPECT_EQ(s.head_accel(10, 15.0), -3.0);
  EXPECT_EQ(s.head_accel(49, 15.0), -3.0);
  EXPECT_GT(s.head_accel(50, 3.0), 0.0); // recovering toward v_eq
  EXPECT_EQ(s.head_accel(200, 15.0), 0.0);
  const auto surge = surge_scenario(2.5, 4.5);
  EXPECT_EQ(surge.target, 5u);
  const auto o = surge.overrides(20);
  ASSERT_EQ(o.size(), 1u);
  EXPECT_TRUE(surge.overrides(0).empty());
}

TEST(Run, TraceLengthMatchesHorizon)
{
  for (const auto b : kAll) {
    const auto r = run_scenario(braking_scenario(), b, exact_setup());
    EXPECT_EQ(r.steps.size(), 300u);
    EXPECT_EQ(r.steps.front().t, 0.0);
    EXPECT_NEAR(r.steps.back().t, 29.9, 1e-12);
    EXPECT_EQ(r.steps.front().u_rl.size(), 2u);
  }
}

TEST(Run, SteadyPlatoonStaysAtEquilibrium)
{
  for (const auto b : kAll) {
    const auto r = run_scenario(steady_scenario(), b, exact_setup());
    for (const auto& row : r.steps) {
      for (std::size_t i = 1; i <= 7; ++i) {
        ASSERT_NEAR(row.state.spacing(i), 20.0, 1e-9) << to_string(b);
        ASSERT_NEAR(row.state.velocity(i), 15.0, 1e-9) << to_string(b);
      }
    }
    EXPECT_EQ(r.infeasible_qps, 0);
  }
}

TEST(Run, BrakingUnderFvdIsSafeAndRecovers)
{
  const auto r = run_scenario(braking_scenario(), Benchmark::M1, exact_setup());
  EXPECT_FALSE(r.collision);
  EXPECT_GT(r.min_spacing, 0.0);
  const auto& last = r.steps.back().state;
  const auto& worst = r.steps[60].state;
  for (std::size_t i = 1; i <= 7; ++i) {
    EXPECT_LT(std::abs(last.spacing(i) - 20.0), std::abs(worst.spacing(i) - 20.0) + 1e-9) << i;
  }
}

TEST(Run, SurgeUnderFvdCollides)
{
  EXPECT_TRUE(run_scenario(surge_scenario(), Benchmark::M1, exact_setup()).collision);
}

TEST(Run, CollisionFlagMatchesSpacings)
{
  for (const auto b : kAll) {
    for (const auto& spec : {braking_scenario(), surge_scenario(), braking_scenario(5.0, 6.0)}) {
      const auto r = run_scenario(spec, b, exact_setup());
      bool any = false;
      for (const auto& row : r.steps) {
        for (std::size_t i = 1; i <= 7; ++i) {
          any = any || row.state.spacing(i) <= 0.0;
        }
      }
      EXPECT_EQ(r.collision, any) << to_string(b);
      EXPECT_EQ(r.collision, r.min_spacing <= 0.0);
    }
  }
}

TEST(Run, Deterministic)
{
  const auto a = run_scenario(surge_scenario(), Benchmark::M5, exact_setup());
  const auto b = run_scenario(surge_scenario(), Benchmark::M5, exact_setup());
  EXPECT_EQ(trace_to_csv(a), trace_to_csv(b));
}

TEST(Run, PolicyBenchmarksNeedAPolicy)
{
  EXPECT_THROW(run_scenario(braking_scenario(), Benchmark::M2, ControllerSetup{}), std::invalid_argument);
  EXPECT_NO_THROW(run_scenario(braking_scenario(), Benchmark::M1, ControllerSetup{}));
}

TEST(Run, SafetyLayerRecordsQpStatus)
{
  const auto r = run_scenario(braking_scenario(), Benchmark::M4, exact_setup());
  for (const auto& row : r.steps) {
    for (const int q : row.qp_status) {
      EXPECT_TRUE(q == 0 || q == 1);
    }
  }
  const auto m2 = run_scenario(braking_scenario(), Benchmark::M2, exact_setup());
  for (const auto& row : m2.steps) {
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_EQ(row.qp_status[c], -1);
      EXPECT_LE(std::abs(row.u_rl[c] + row.u_safe[c]), 5.0 + 1e-12);
    }
  }
}

TEST(SweepGrid, Parse)
{
  const auto d = SweepGrid::defaults();
  EXPECT_EQ(d.accels.size(), 10u);
  EXPECT_EQ(d.durations.size(), 12u);
  EXPECT_EQ(d.durations.back(), 6.0);
  const auto g = SweepGrid::parse("0.5:5:0.5,4");
  EXPECT_EQ(g.accels.size(), 10u);
  EXPECT_EQ(g.durations, std::vector<double>{4.0});
  EXPECT_EQ(SweepGrid::parse("3,4").cells(), 1u);
  EXPECT_THROW(SweepGrid::parse("3"), std::invalid_argument);
  EXPECT_THROW(SweepGrid::parse("3,4,5"), std::invalid_argument);
  EXPECT_THROW(SweepGrid::parse("1:2,4"), std::invalid_argument);
  EXPECT_THROW(SweepGrid::parse("-1,4"), std::invalid_argument);
  EXPECT_EQ(inclusive_range(0.0, 1.0, 0.1).size(), 11u);
}

TEST(Sweep, NoDisturbanceCellIsSafeEverywhere)
{
  const SweepGrid grid{{0.0}, {0.0}};
  for (const auto b : kAll) {
    EXPECT_TRUE(safety_region_sweep(braking_scenario(), b, grid, exact_setup(), 1).at(0, 0)) << to_string(b);
    EXPECT_TRUE(safety_region_sweep(surge_scenario(), b, grid, exact_setup(), 1).at(0, 0)) << to_string(b);
  }
}

TEST(Sweep, FvdBrakingRegionIsMonotone)
{
  const auto r = safety_region_sweep(braking_scenario(), Benchmark::M1, SweepGrid::defaults(), exact_setup());
  const auto& g = r.grid;
  for (std::size_t a = 0; a < g.accels.size(); ++a) {
    for (std::size_t d = 0; d < g.durations.size(); ++d) {
      if (!r.at(a, d)) {
        continue;
      }
      if (a > 0) {
        EXPECT_TRUE(r.at(a - 1, d)) << g.accels[a] << "," << g.durations[d];
      }
      if (d > 0) {
        EXPECT_TRUE(r.at(a, d - 1)) << g.accels[a] << "," << g.durations[d];
      }
    }
  }
}

TEST(Sweep, CooperativeRegionContainsTheOthers)
{
  for (const int family : {1, 2}) {
    const auto base = family_scenario(family, 1.0, 1.0);
    const auto grid = SweepGrid::defaults();
    const auto m2 = safety_region_sweep(base, Benchmark::M2, grid, exact_setup());
    const auto m3 = safety_region_sweep(base, Benchmark::M3, grid, exact_setup());
    const auto m4 = safety_region_sweep(base, Benchmark::M4, grid, exact_setup());
    EXPECT_TRUE(m4.contains(m2)) << "scenario " << family;
    EXPECT_TRUE(m4.contains(m3)) << "scenario " << family;
    EXPECT_GT(m4.safe_cells(), m2.safe_cells());
    EXPECT_TRUE(m2.missing_from(m4).size() == m4.safe_cells() - m2.safe_cells());
  }
}

TEST(Sweep, ResultDoesNotDependOnThreads)
{
  const auto grid = SweepGrid::parse("1:5:1,1:5:2");
  const auto a = safety_region_sweep(surge_scenario(), Benchmark::M5, grid, exact_setup(), 1);
  const auto b = safety_region_sweep(surge_scenario(), Benchmark::M5, grid, exact_setup(), 3);
  EXPECT_EQ(region_to_json(a), region_to_json(b));
}

TEST(Sweep, ContainsRejectsGridMismatch)
{
  const auto a = safety_region_sweep(braking_scenario(), Benchmark::M1, SweepGrid::parse("1,1"), exact_setup(), 1);
  const auto b = safety_region_sweep(braking_scenario(), Benchmark::M1, SweepGrid::parse("2,1"), exact_setup(), 1);
  EXPECT_THROW((void)a.contains(b), std::invalid_argument);
}

TEST(Metrics, TimeHeadwayExamples)
{
  const PlatoonConfig cfg;
  EXPECT_NEAR(avg_time_headway(record_of({PlatoonState::uniform(cfg, 20.0, 15.0)})).value, 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(avg_time_headway(record_of({PlatoonState::uniform(cfg, 30.0, 15.0)})).value, 2.0, 1e-12);
  const auto r = record_of({PlatoonState::uniform(cfg, 15.0, 15.0), PlatoonState::uniform(cfg, 45.0, 15.0)});
  const auto h = avg_time_headway(r);
  EXPECT_NEAR(h.value, 2.0, 1e-12);
  EXPECT_EQ(h.samples, 4u);

  auto stopped = PlatoonState::uniform(cfg, 20.0, 15.0);
  stopped.vehicle(2).velocity = 0.0;
  const auto e = avg_time_headway(record_of({stopped}));
  EXPECT_EQ(e.excluded, 1u);
  EXPECT_NEAR(e.value, 20.0 / 15.0, 1e-12);
  stopped.vehicle(4).velocity = 0.0;
  EXPECT_THROW(avg_time_headway(record_of({stopped})), std::invalid_argument);
}

TEST(Metrics, AaveExamples)
{
  const PlatoonConfig cfg;
  EXPECT_EQ(aave(record_of({PlatoonState::uniform(cfg, 20.0, 15.0)})), 0.0);
  auto x = PlatoonState::uniform(cfg, 20.0, 15.0);
  x.vehicle(3).velocity = 16.0;
  EXPECT_NEAR(aave(record_of({x, x})), 1.0 / 7.0, 1e-12);

  // Head oscillating over whole periods, followers frozen at the mean speed.
  const double amp = 1.5;
  std::vector<PlatoonState> states;
  const std::size_t per = 200;
  for (std::size_t k = 0; k < 3 * per; ++k) {
    auto s = PlatoonState::uniform(cfg, 20.0, 15.0);
    s.head_velocity = 15.0 + amp * std::sin(2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / per);
    states.push_back(s);
  }
  EXPECT_NEAR(aave(record_of(states)), 2.0 * amp / std::numbers::pi, 1e-3);
}

TEST(Metrics, ZeroAmplitudeSineHasNoVelocityError)
{
  const auto row = sine_disturbance_eval(Benchmark::M1, exact_setup(), sine_scenario(0.0));
  EXPECT_NEAR(row.aave, 0.0, 1e-9);
  EXPECT_NEAR(row.avg_time_headway, 4.0 / 3.0, 1e-9);
  EXPECT_FALSE(row.collision);
}

TEST(Emit, TraceSchema)
{
  const auto r = run_scenario(braking_scenario(), Benchmark::M5, exact_setup());
  const auto csv = trace_to_csv(r);
  const auto first = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(first.rfind("# coopsafe.trace v1 scenario=scenario1 benchmark=M5 n=7 cavs=2;4", 0), 0u) << first;
  const auto second = csv.substr(first.size() + 1, csv.find('\n', first.size() + 1) - first.size() - 1);
  EXPECT_EQ(second,
            "t,v0,s_1,s_2,s_3,s_4,s_5,s_6,s_7,v_1,v_2,v_3,v_4,v_5,v_6,v_7,a_1,a_2,a_3,a_4,a_5,a_6,a_7,"
            "h_1,h_2,h_3,h_4,h_5,h_6,h_7,hsuf_3,hsuf_5,hsuf_6,hsuf_7,u_rl_2,u_rl_4,u_safe_2,u_safe_4,qp_2,qp_4");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 2 + r.steps.size());
}

TEST(Emit, TraceRoundTrip)
{
  const auto r = run_scenario(surge_scenario(), Benchmark::M3, exact_setup());
  const auto csv = trace_to_csv(r);
  const auto back = trace_from_csv(csv);
  EXPECT_EQ(trace_to_csv(back), csv);
  EXPECT_EQ(back.collision, r.collision);
  EXPECT_EQ(back.infeasible_qps, r.infeasible_qps);
  EXPECT_EQ(back.steps.size(), r.steps.size());
  EXPECT_EQ(metrics_row(back).aave, metrics_row(r).aave);
  EXPECT_THROW(trace_from_csv("t,v0\n0,15\n"), std::runtime_error);
}

TEST(Emit, RegionRoundTrip)
{
  const auto r = safety_region_sweep(braking_scenario(), Benchmark::M2, SweepGrid::parse("1:5:2,2:6:2"), exact_setup(), 1);
  const auto text = region_to_json(r);
  const auto back = region_from_json(text);
  EXPECT_EQ(region_to_json(back), text);
  EXPECT_EQ(back.safe, r.safe);
  EXPECT_EQ(back.grid.accels, r.grid.accels);
  EXPECT_EQ(back.benchmark, Benchmark::M2);
}

TEST(Emit, MetricsHeader)
{
  const std::vector<MetricsRow> rows{metrics_row(run_scenario(braking_scenario(), Benchmark::M1, exact_setup()))};
  const auto csv = metrics_to_csv(rows);
  EXPECT_EQ(csv.rfind("# coopsafe.metrics v1\nscenario,benchmark,avg_time_headway,aave,collision,min_spacing,min_h,infeasible_qps\nscenario1,M1,", 0), 0u)
    << csv;
}

TEST(ExperimentConfig, DefaultsRoundTrip)
{
  const auto d = ExperimentConfig::defaults();
  EXPECT_NO_THROW(d.validate());
  const auto text = d.to_json();
  const auto back = ExperimentConfig::from_json(text);
  EXPECT_EQ(back.to_json(), text);
  EXPECT_EQ(back.benchmark, Benchmark::M5);
  EXPECT_EQ(back.scenario.kind, ScenarioKind::HeadBrake);
  EXPECT_EQ(back.sweep.grid.cells(), 120u);
}

TEST(ExperimentConfig, RejectsUnknownKeys)
{
  EXPECT_THROW(ExperimentConfig::from_json(R"({"format": "coopsafe.experiment", "version": 1, "sede": 3})"),
               std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"format": "coopsafe.experiment", "version": 1, "safety": {"kappa": 1}})"),
               std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"format": "other", "version": 1})"), std::invalid_argument);
}

TEST(ExperimentConfig, RelativePathsResolveAgainstBaseDir)
{
  const auto c = ExperimentConfig::from_json(
    R"({"format": "coopsafe.experiment", "version": 1, "predictor": {"path": "pred.json"},
        "policy": {"kind": "checkpoint", "checkpoint": "/abs/ckpt.json"}})",
    "/data/run1");
  EXPECT_EQ(c.predictor.path, std::filesystem::path("/data/run1/pred.json"));
  EXPECT_EQ(c.policy.checkpoint, std::filesystem::path("/abs/ckpt.json"));
  EXPECT_EQ(c.policy.kind, PolicyKind::Checkpoint);
}

TEST(ExperimentConfig, SafetySettingsShapeParams)
{
  SafetySettings s;
  s.k = 0.7;
  const PlatoonConfig cfg;
  const auto p = s.params(cfg);
  EXPECT_EQ(p.tau, 0.3);
  for (Eigen::Index k = 0; k < p.k_coop.size(); ++k) {
    const double v = p.k_coop.reshaped()(k);
    EXPECT_TRUE(v == 0.0 || v == 0.7);
  }
  EXPECT_GT(p.k_coop.maxCoeff(), 0.0);
}
