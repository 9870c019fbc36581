// Batch front end: simulate, sweep, calibrate, train, metrics.
// Every output file is a pure function of the configuration and seed.

#include "coopsafe/emit.hpp"
#include "coopsafe/experiment_config.hpp"
#include "coopsafe/marl.hpp"
#include "coopsafe/metrics.hpp"
#include "coopsafe/pipeline.hpp"
#include "coopsafe/sweep.hpp"
#include "coopsafe/text_format.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace coopsafe;
using namespace coopsafe::harness;

namespace {

std::string fmt(double x) { return text::format_fixed(x, 4); }

ExperimentConfig load_config(const std::string& path)
{
  return path.empty() ? ExperimentConfig::defaults() : ExperimentConfig::load(path);
}

void write_calibration_report(const CalibrationReport& r, const fs::path& path)
{
  std::string out = "# coopsafe.calibration v1\nkey,value\n";
  auto row = [&](const char* k, const std::string& v) { out += std::string(k) + "," + v + "\n"; };
  row("samples", std::to_string(r.samples));
  row("train_episodes", std::to_string(r.train_episodes));
  row("calibration_scores", std::to_string(r.calibration_scores));
  row("test_scores", std::to_string(r.test_scores));
  row("hdv_mse_initial", text::format_double(r.hdv_mse_initial));
  row("hdv_mse_final", text::format_double(r.hdv_mse_final));
  row("cav_mse_initial", text::format_double(r.cav_mse_initial));
  row("cav_mse_final", text::format_double(r.cav_mse_final));
  row("epsilon", text::format_double(r.epsilon));
  row("C", text::format_double(r.C));
  row("coverage", text::format_double(r.coverage));
  text::write_file(path, out);
}

std::vector<Benchmark> parse_benchmarks(const std::vector<std::string>& names)
{
  std::vector<Benchmark> out;
  for (const auto& n : names) {
    out.push_back(parse_benchmark(n));
  }
  return out;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Cooperative safety-filtered platoon control experiments"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run one scenario and write its trace and metrics");
  std::string sim_config, sim_benchmark, sim_predictor;
  fs::path sim_out;
  std::optional<std::uint64_t> sim_seed;
  sim->add_option("--config", sim_config, "Experiment document")->check(CLI::ExistingFile);
  sim->add_option("--benchmark", sim_benchmark, "M1..M5 (overrides the config)");
  sim->add_option("--predictor", sim_predictor, "Calibrated predictor document (skips training)")->check(CLI::ExistingFile);
  sim->add_option("--seed", sim_seed, "Overrides the config seed");
  sim->add_option("--out", sim_out, "Output directory")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Safety-guaranteed region over an accel x duration grid");
  int sw_scenario = 1;
  std::vector<std::string> sw_benchmarks{"M1", "M2", "M3", "M4", "M5"};
  std::string sw_config, sw_grid, sw_predictor;
  fs::path sw_out = ".";
  unsigned sw_threads = 0;
  sw->add_option("--scenario", sw_scenario, "1 = head braking, 2 = HDV surge")->required()->check(CLI::IsMember({1, 2}));
  sw->add_option("--benchmark", sw_benchmarks, "One or more of M1..M5");
  sw->add_option("--grid", sw_grid, "a0:a1:da,d0:d1:dd (default from the config)");
  sw->add_option("--config", sw_config, "Experiment document")->check(CLI::ExistingFile);
  sw->add_option("--predictor", sw_predictor, "Calibrated predictor document")->check(CLI::ExistingFile);
  sw->add_option("--threads", sw_threads, "Worker threads, 0 = all cores");
  sw->add_option("--out", sw_out, "Output directory");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Train behaviour predictors and calibrate the conformal threshold");
  std::string cal_config;
  std::optional<std::size_t> cal_episodes, cal_steps;
  std::optional<double> cal_epsilon;
  std::optional<int> cal_epochs;
  std::optional<std::uint64_t> cal_seed;
  fs::path cal_out = ".";
  cal->add_option("--config", cal_config, "Experiment document")->check(CLI::ExistingFile);
  cal->add_option("--episodes", cal_episodes, "Rollout episodes (split train/calibration/test)");
  cal->add_option("--steps", cal_steps, "Steps per episode");
  cal->add_option("--epsilon", cal_epsilon, "Failure probability");
  cal->add_option("--epochs", cal_epochs, "Predictor training epochs");
  cal->add_option("--seed", cal_seed, "Dataset seed");
  cal->add_option("--out", cal_out, "Output directory");

  // train
  auto* tr = app.add_subcommand("train", "Toy-scale actor-critic training with the safety layer in the loop");
  std::string tr_config;
  std::size_t tr_episodes = 50;
  std::optional<std::size_t> tr_steps;
  std::uint64_t tr_seed = 1;
  bool tr_no_safety = false;
  fs::path tr_out = ".";
  tr->add_option("--config", tr_config, "Experiment document (platoon and safety sections)")->check(CLI::ExistingFile);
  tr->add_option("--episodes", tr_episodes, "Training episodes");
  tr->add_option("--steps", tr_steps, "Steps per episode");
  tr->add_option("--seed", tr_seed, "Seed for initialization and exploration");
  tr->add_flag("--no-safety", tr_no_safety, "Train without the safety layer");
  tr->add_option("--out", tr_out, "Output directory");

  // metrics
  auto* me = app.add_subcommand("metrics", "Headway and velocity-error metrics of recorded traces");
  std::vector<std::string> me_traces;
  std::string me_out;
  me->add_option("--trace", me_traces, "Trace CSV files")->required()->check(CLI::ExistingFile);
  me->add_option("--out", me_out, "Metrics CSV (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      auto cfg = load_config(sim_config);
      if (!sim_benchmark.empty()) {
        cfg.benchmark = parse_benchmark(sim_benchmark);
      }
      if (sim_seed) {
        cfg.seed = *sim_seed;
      }
      if (!sim_predictor.empty()) {
        cfg.predictor.path = sim_predictor;
      }
      fs::create_directories(sim_out);
      const Experiment exp(cfg, uses_safety_layer(cfg.benchmark));
      const auto rec = exp.run(cfg.scenario_spec(), cfg.benchmark);
      const auto row = metrics_row(rec);
      write_trace(rec, sim_out / "trace.csv");
      write_metrics(std::span(&row, 1), sim_out / "metrics.csv");
      text::write_file(sim_out / "config.json", cfg.to_json());
      if (exp.calibration_report()) {
        conformal::write_predictor(*exp.predictor(), sim_out / "predictor.json");
        write_calibration_report(*exp.calibration_report(), sim_out / "calibration.csv");
      }
      std::cout << rec.scenario << " " << to_string(rec.benchmark) << ": collision=" << rec.collision
                << " min_spacing=" << fmt(rec.min_spacing) << " min_h=" << fmt(rec.min_h_system)
                << " infeasible_qps=" << rec.infeasible_qps << " C=" << fmt(exp.C()) << "\n";
    } else if (*sw) {
      auto cfg = load_config(sw_config);
      if (!sw_grid.empty()) {
        cfg.sweep.grid = SweepGrid::parse(sw_grid);
      }
      if (sw_threads != 0) {
        cfg.sweep.threads = sw_threads;
      }
      if (!sw_predictor.empty()) {
        cfg.predictor.path = sw_predictor;
      }
      const auto benchmarks = parse_benchmarks(sw_benchmarks);
      bool need_predictor = false;
      for (const auto b : benchmarks) {
        need_predictor = need_predictor || uses_safety_layer(b);
      }
      const Experiment exp(cfg, need_predictor);
      auto base = family_scenario(sw_scenario, 0.0, 0.0);
      base.platoon = cfg.platoon;
      base.name = "scenario" + std::to_string(sw_scenario);
      fs::create_directories(sw_out);
      std::string summary = "# coopsafe.region_summary v1\nscenario,benchmark,cells,safe_cells\n";
      for (const auto b : benchmarks) {
        const auto region = safety_region_sweep(base, b, cfg.sweep.grid, exp.setup(), cfg.sweep.threads, cfg.sweep.tol);
        write_region(region, sw_out / ("region_" + base.name + "_" + std::string(to_string(b)) + ".json"));
        summary += base.name + "," + std::string(to_string(b)) + "," + std::to_string(region.grid.cells()) + "," +
                   std::to_string(region.safe_cells()) + "\n";
        std::cout << base.name << " " << to_string(b) << ": " << region.safe_cells() << "/" << region.grid.cells()
                  << " safe cells\n";
      }
      text::write_file(sw_out / ("regions_" + base.name + ".csv"), summary);
    } else if (*cal) {
      auto cfg = load_config(cal_config);
      auto& p = cfg.predictor;
      p.path.clear();
      if (cal_episodes) {
        p.episodes = *cal_episodes;
      }
      if (cal_steps) {
        p.steps = *cal_steps;
      }
      if (cal_epsilon) {
        p.epsilon = *cal_epsilon;
      }
      if (cal_epochs) {
        p.epochs = *cal_epochs;
      }
      if (cal_seed) {
        p.dataset_seed = *cal_seed;
      }
      cfg.validate();
      const auto nominal = make_policy(cfg);
      CalibrationReport report;
      const auto doc = train_calibrated_predictor(cfg.platoon, p, *nominal, &report);
      fs::create_directories(cal_out);
      conformal::write_predictor(doc, cal_out / "predictor.json");
      write_calibration_report(report, cal_out / "calibration.csv");
      std::cout << "C=" << fmt(report.C) << " coverage=" << fmt(report.coverage) << " calibration_scores="
                << report.calibration_scores << " test_scores=" << report.test_scores << "\n";
    } else if (*tr) {
      const auto cfg = load_config(tr_config);
      auto tc = marl::TrainConfig::defaults();
      tc.platoon = cfg.platoon;
      tc.safety = cfg.safety.params(cfg.platoon);
      tc.episodes = tr_episodes;
      tc.seed = tr_seed;
      tc.safety_layer = !tr_no_safety;
      if (tr_steps) {
        tc.steps_per_episode = *tr_steps;
      }
      const auto result = marl::train(tc);
      fs::create_directories(tr_out);
      marl::write_checkpoint(result.model, tr_out / "checkpoint.json");
      text::write_file(tr_out / "curve.csv", marl::curve_to_csv(result.curve));
      const std::size_t w = std::min<std::size_t>(10, result.curve.size());
      if (w > 0) {
        std::cout << "episodes=" << result.curve.size() << " start_avg=" << fmt(result.start_average(w))
                  << " end_avg=" << fmt(result.end_average(w)) << "\n";
      }
    } else if (*me) {
      std::vector<MetricsRow> rows;
      for (const auto& t : me_traces) {
        rows.push_back(metrics_row(read_trace(t)));
      }
      if (me_out.empty()) {
        std::cout << metrics_to_csv(rows);
      } else {
        write_metrics(rows, me_out);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
