#include "coopsafe/conformal.hpp"
#include "coopsafe/dynamics.hpp"
#include "coopsafe/qp.hpp"
#include "coopsafe/runner.hpp"
#include "coopsafe/safety.hpp"
#include "coopsafe/safety_layer.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace coopsafe;

namespace {

const dynamics::PlatoonConfig kCfg{};

// Platoon closing in on a slower head, so the CBF rows bind.
dynamics::PlatoonState closing_state()
{
  auto x = dynamics::PlatoonState::uniform(kCfg, 20.0, 15.0);
  x.vehicle(1).velocity = 11.0;
  x.vehicle(2).spacing = 10.0;
  x.vehicle(3).spacing = 12.0;
  return x;
}

safety::Estimates exact(const dynamics::PlatoonState& x, std::span<const double> u_rl)
{
  const std::vector<double> zeros(kCfg.n, 0.0);
  return safety::ModelEstimator().estimate({x, x, zeros, u_rl, kCfg});
}

} // namespace

static void BM_DynamicsStep(benchmark::State& st)
{
  auto x = dynamics::PlatoonState::uniform(kCfg, 20.0, 15.0);
  const std::vector<double> u{0.1, -0.1};
  for (auto _ : st) {
    x = dynamics::step(x, u, 0.0, kCfg);
    benchmark::DoNotOptimize(x);
  }
}
BENCHMARK(BM_DynamicsStep);

static void BM_BuildQp(benchmark::State& st)
{
  const auto x = closing_state();
  const std::vector<double> u_rl{1.0, 0.5};
  const auto est = exact(x, u_rl);
  const auto params = safety::SafetyLayerParams::defaults(kCfg);
  for (auto _ : st) {
    benchmark::DoNotOptimize(safety::build_qp(2, x, u_rl, est, 0.07, params, kCfg));
  }
}
BENCHMARK(BM_BuildQp);

static void BM_SolveSafetyQp(benchmark::State& st)
{
  const auto x = closing_state();
  const std::vector<double> u_rl{1.0, 0.5};
  const auto q = safety::build_qp(2, x, u_rl, exact(x, u_rl), 0.07, safety::SafetyLayerParams::defaults(kCfg), kCfg);
  for (auto _ : st) {
    benchmark::DoNotOptimize(qp::solve(q.problem));
  }
}
BENCHMARK(BM_SolveSafetyQp);

static void BM_SolveAndDifferentiate(benchmark::State& st)
{
  const auto x = closing_state();
  const std::vector<double> u_rl{1.0, 0.5};
  const auto q = safety::build_qp(2, x, u_rl, exact(x, u_rl), 0.07, safety::SafetyLayerParams::defaults(kCfg), kCfg);
  for (auto _ : st) {
    const auto s = qp::solve(q.problem);
    benchmark::DoNotOptimize(qp::differentiate(q.problem, s));
  }
}
BENCHMARK(BM_SolveAndDifferentiate);

static void BM_SolveRandomQp(benchmark::State& st)
{
  const auto dim = static_cast<int>(st.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd a(dim, dim);
  for (int k = 0; k < a.size(); ++k) {
    a(k) = n01(rng);
  }
  qp::QpProblem p;
  p.Q = a * a.transpose() + Eigen::MatrixXd::Identity(dim, dim);
  p.G.resize(2 * dim, dim);
  for (int k = 0; k < p.G.size(); ++k) {
    p.G(k) = n01(rng);
  }
  p.q = Eigen::VectorXd::Constant(2 * dim, -0.5);
  p.dq_du_rl = Eigen::MatrixXd::Zero(2 * dim, 0);
  p.dq_dtheta = Eigen::MatrixXd::Zero(2 * dim, 0);
  for (auto _ : st) {
    benchmark::DoNotOptimize(qp::solve(p));
  }
}
BENCHMARK(BM_SolveRandomQp)->Arg(2)->Arg(4)->Arg(8);

static void BM_SafetyLayerBothCavs(benchmark::State& st)
{
  const auto x = closing_state();
  const std::vector<double> u_rl{1.0, 0.5};
  const auto est = exact(x, u_rl);
  const auto params = safety::SafetyLayerParams::defaults(kCfg);
  for (auto _ : st) {
    benchmark::DoNotOptimize(safety::apply_safety_layer(x, u_rl, est, 0.07, params, kCfg));
  }
}
BENCHMARK(BM_SafetyLayerBothCavs);

static void BM_PredictorForward(benchmark::State& st)
{
  conformal::TrainOptions opts;
  opts.epochs = 1;
  Eigen::MatrixXd xs = Eigen::MatrixXd::Random(4, 64);
  const Eigen::VectorXd ys = xs.row(0).transpose();
  const auto reg = conformal::train_predictor(xs, ys, opts);
  const std::array<double, 4> x{20.0, 15.0, 0.1, 15.0};
  for (auto _ : st) {
    benchmark::DoNotOptimize(reg.predict(x));
  }
}
BENCHMARK(BM_PredictorForward);

static void BM_ScenarioRun(benchmark::State& st)
{
  const auto b = static_cast<harness::Benchmark>(st.range(0));
  const harness::ControllerSetup setup{};
  const policy::HeuristicPolicy heuristic;
  auto s = setup;
  s.nominal = &heuristic;
  for (auto _ : st) {
    benchmark::DoNotOptimize(harness::run_scenario(harness::surge_scenario(), b, s));
  }
  st.SetLabel(std::string(harness::to_string(b)));
}
BENCHMARK(BM_ScenarioRun)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
