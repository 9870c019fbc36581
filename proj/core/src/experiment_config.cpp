#include "coopsafe/experiment_config.hpp"

#include "coopsafe/text_format.hpp"

#include <json.hpp>

#include <initializer_list>
#include <stdexcept>

namespace coopsafe::harness {

using nlohmann::json;

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed)
{
  if (!j.is_object()) {
    throw std::invalid_argument(std::string("config: '") + section + "' must be an object");
  }
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      known = known || key == a;
    }
    if (!known) {
      throw std::invalid_argument(std::string("config: unknown key '") + key + "' in '" + section + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out)
{
  const auto it = j.find(key);
  if (it != j.end()) {
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

void read_path(const json& j, const char* key, std::filesystem::path& out, const std::filesystem::path& base)
{
  std::string s;
  read(j, key, s);
  if (s.empty()) {
    return;
  }
  std::filesystem::path p(s);
  out = p.is_relative() && !base.empty() ? base / p : p;
}

std::string grid_text(const SweepGrid& g)
{
  auto axis = [](const std::vector<double>& v) {
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      out += (k > 0 ? ";" : "") + text::format_double(v[k]);
    }
    return out;
  };
  return axis(g.accels) + "," + axis(g.durations);
}

SweepGrid parse_grid(const std::string& s)
{
  // Explicit value lists use ';' inside an axis.
  if (s.find(';') == std::string::npos) {
    return SweepGrid::parse(s);
  }
  const auto comma = s.find(',');
  if (comma == std::string::npos) {
    throw std::invalid_argument("config: sweep grid needs an accel and a duration axis");
  }
  auto axis = [](std::string_view t) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (true) {
      const auto semi = t.find(';', pos);
      out.push_back(text::parse_double(t.substr(pos, semi - pos)));
      if (semi == std::string_view::npos) {
        return out;
      }
      pos = semi + 1;
    }
  };
  SweepGrid g;
  const std::string_view v(s);
  g.accels = axis(v.substr(0, comma));
  g.durations = axis(v.substr(comma + 1));
  g.validate();
  return g;
}

} // namespace

safety::SafetyLayerParams SafetySettings::params(const PlatoonConfig& cfg) const
{
  auto p = safety::SafetyLayerParams::defaults(cfg);
  p.tau = tau;
  p.a_min = a_min;
  p.a_max = a_max;
  for (std::size_t i = 1; i <= cfg.n; ++i) {
    p.gamma[i - 1] = cfg.is_cav(i) ? gamma_cav : gamma_hdv;
    p.slack_weight[i - 1] = slack_weight;
  }
  for (Eigen::Index r = 0; r < p.k_coop.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.k_coop.cols(); ++c) {
      if (p.k_coop(r, c) != 0.0) {
        p.k_coop(r, c) = k;
      }
    }
  }
  p.validate(cfg);
  return p;
}

ExperimentConfig ExperimentConfig::defaults()
{
  ExperimentConfig c;
  c.scenario.name = "scenario1";
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::filesystem::path& base_dir)
{
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  check_keys(j,
             "document",
             {"format", "version", "seed", "platoon", "fvd", "safety", "scenario", "benchmark", "policy", "predictor",
              "sweep"});
  if (j.contains("format") && j["format"] != "coopsafe.experiment") {
    throw std::invalid_argument("config: not an experiment document");
  }
  if (j.contains("version") && j["version"] != kExperimentVersion) {
    throw std::invalid_argument("config: unsupported version");
  }

  auto c = defaults();
  read(j, "seed", c.seed);

  if (const auto it = j.find("platoon"); it != j.end()) {
    check_keys(*it, "platoon", {"n", "cavs", "comm_range", "dt"});
    read(*it, "n", c.platoon.n);
    read(*it, "cavs", c.platoon.cav_indices);
    read(*it, "comm_range", c.platoon.comm_range);
    read(*it, "dt", c.platoon.dt);
  }
  if (const auto it = j.find("fvd"); it != j.end()) {
    check_keys(*it, "fvd", {"alpha", "beta", "s_st", "s_go", "v_max"});
    auto& f = c.platoon.default_fvd;
    read(*it, "alpha", f.alpha);
    read(*it, "beta", f.beta);
    read(*it, "s_st", f.s_st);
    read(*it, "s_go", f.s_go);
    read(*it, "v_max", f.v_max);
  }
  if (const auto it = j.find("safety"); it != j.end()) {
    check_keys(*it, "safety", {"tau", "gamma_cav", "gamma_hdv", "k", "slack_weight", "a_min", "a_max"});
    auto& s = c.safety;
    read(*it, "tau", s.tau);
    read(*it, "gamma_cav", s.gamma_cav);
    read(*it, "gamma_hdv", s.gamma_hdv);
    read(*it, "k", s.k);
    read(*it, "slack_weight", s.slack_weight);
    read(*it, "a_min", s.a_min);
    read(*it, "a_max", s.a_max);
  }
  if (const auto it = j.find("scenario"); it != j.end()) {
    check_keys(*it,
               "scenario",
               {"name", "kind", "target", "accel", "start", "duration", "horizon", "s_eq", "v_eq", "sine_amplitude",
                "sine_period", "sine_phase"});
    auto& s = c.scenario;
    read(*it, "name", s.name);
    std::string kind(to_string(s.kind));
    read(*it, "kind", kind);
    s.kind = parse_scenario_kind(kind);
    read(*it, "target", s.target);
    read(*it, "accel", s.accel);
    read(*it, "start", s.start);
    read(*it, "duration", s.duration);
    read(*it, "horizon", s.horizon);
    read(*it, "s_eq", s.s_eq);
    read(*it, "v_eq", s.v_eq);
    read(*it, "sine_amplitude", s.sine_amplitude);
    read(*it, "sine_period", s.sine_period);
    read(*it, "sine_phase", s.sine_phase);
  }
  if (j.contains("benchmark")) {
    c.benchmark = parse_benchmark(j["benchmark"].get<std::string>());
  }
  if (const auto it = j.find("policy"); it != j.end()) {
    check_keys(*it, "policy", {"kind", "checkpoint", "k_spacing", "k_spacing_close", "k_relative", "k_cruise"});
    std::string kind = "heuristic";
    read(*it, "kind", kind);
    if (kind == "heuristic") {
      c.policy.kind = PolicyKind::Heuristic;
    } else if (kind == "checkpoint") {
      c.policy.kind = PolicyKind::Checkpoint;
    } else {
      throw std::invalid_argument("config: policy kind must be 'heuristic' or 'checkpoint'");
    }
    read_path(*it, "checkpoint", c.policy.checkpoint, base_dir);
    auto& g = c.policy.gains;
    read(*it, "k_spacing", g.k_spacing);
    read(*it, "k_spacing_close", g.k_spacing_close);
    read(*it, "k_relative", g.k_relative);
    read(*it, "k_cruise", g.k_cruise);
  }
  if (const auto it = j.find("predictor"); it != j.end()) {
    check_keys(*it,
               "predictor",
               {"path", "episodes", "steps", "noise_std", "dataset_seed", "epochs", "train_seed", "train_fraction",
                "calibration_fraction", "split_seed", "epsilon"});
    auto& p = c.predictor;
    read_path(*it, "path", p.path, base_dir);
    read(*it, "episodes", p.episodes);
    read(*it, "steps", p.steps);
    read(*it, "noise_std", p.noise_std);
    read(*it, "dataset_seed", p.dataset_seed);
    read(*it, "epochs", p.epochs);
    read(*it, "train_seed", p.train_seed);
    read(*it, "train_fraction", p.train_fraction);
    read(*it, "calibration_fraction", p.calibration_fraction);
    read(*it, "split_seed", p.split_seed);
    read(*it, "epsilon", p.epsilon);
  }
  if (const auto it = j.find("sweep"); it != j.end()) {
    check_keys(*it, "sweep", {"grid", "tol", "threads"});
    std::string grid;
    read(*it, "grid", grid);
    if (!grid.empty()) {
      c.sweep.grid = parse_grid(grid);
    }
    read(*it, "tol", c.sweep.tol);
    read(*it, "threads", c.sweep.threads);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path)
{
  return from_json(text::read_file(path), path.parent_path());
}

std::string ExperimentConfig::to_json() const
{
  const auto& f = platoon.default_fvd;
  const auto& s = scenario;
  const auto& g = policy.gains;
  const auto& p = predictor;
  json j;
  j["format"] = "coopsafe.experiment";
  j["version"] = kExperimentVersion;
  j["seed"] = seed;
  j["platoon"] = {{"n", platoon.n}, {"cavs", platoon.cav_indices}, {"comm_range", platoon.comm_range}, {"dt", platoon.dt}};
  j["fvd"] = {{"alpha", f.alpha}, {"beta", f.beta}, {"s_st", f.s_st}, {"s_go", f.s_go}, {"v_max", f.v_max}};
  j["safety"] = {{"tau", safety.tau},
                 {"gamma_cav", safety.gamma_cav},
                 {"gamma_hdv", safety.gamma_hdv},
                 {"k", safety.k},
                 {"slack_weight", safety.slack_weight},
                 {"a_min", safety.a_min},
                 {"a_max", safety.a_max}};
  j["scenario"] = {{"name", s.name},
                   {"kind", std::string(to_string(s.kind))},
                   {"target", s.target},
                   {"accel", s.accel},
                   {"start", s.start},
                   {"duration", s.duration},
                   {"horizon", s.horizon},
                   {"s_eq", s.s_eq},
                   {"v_eq", s.v_eq},
                   {"sine_amplitude", s.sine_amplitude},
                   {"sine_period", s.sine_period},
                   {"sine_phase", s.sine_phase}};
  j["benchmark"] = std::string(to_string(benchmark));
  j["policy"] = {{"kind", policy.kind == PolicyKind::Heuristic ? "heuristic" : "checkpoint"},
                 {"checkpoint", policy.checkpoint.generic_string()},
                 {"k_spacing", g.k_spacing},
                 {"k_spacing_close", g.k_spacing_close},
                 {"k_relative", g.k_relative},
                 {"k_cruise", g.k_cruise}};
  j["predictor"] = {{"path", p.path.generic_string()},
                    {"episodes", p.episodes},
                    {"steps", p.steps},
                    {"noise_std", p.noise_std},
                    {"dataset_seed", p.dataset_seed},
                    {"epochs", p.epochs},
                    {"train_seed", p.train_seed},
                    {"train_fraction", p.train_fraction},
                    {"calibration_fraction", p.calibration_fraction},
                    {"split_seed", p.split_seed},
                    {"epsilon", p.epsilon}};
  j["sweep"] = {{"grid", grid_text(sweep.grid)}, {"tol", sweep.tol}, {"threads", sweep.threads}};
  return j.dump(1) + "\n";
}

void ExperimentConfig::validate() const
{
  platoon.validate();
  safety.params(platoon);
  scenario_spec().validate();
  if (policy.kind == PolicyKind::Checkpoint && policy.checkpoint.empty()) {
    throw std::invalid_argument("config: policy kind 'checkpoint' needs a checkpoint path");
  }
  const auto& p = predictor;
  if (p.path.empty()) {
    if (p.episodes < 3 || p.steps < 2 || p.epochs < 1) {
      throw std::invalid_argument("config: predictor needs episodes >= 3, steps >= 2 and epochs >= 1");
    }
    if (!(p.train_fraction > 0.0) || !(p.calibration_fraction > 0.0) || p.train_fraction + p.calibration_fraction >= 1.0) {
      throw std::invalid_argument("config: predictor split fractions must be positive and leave a test share");
    }
  }
  if (!(p.epsilon > 0.0 && p.epsilon < 1.0)) {
    throw std::invalid_argument("config: predictor epsilon must lie in (0, 1)");
  }
  sweep.grid.validate();
  if (!(sweep.tol >= 0.0)) {
    throw std::invalid_argument("config: sweep tol must be >= 0");
  }
}

ScenarioSpec ExperimentConfig::scenario_spec() const
{
  auto s = scenario;
  s.platoon = platoon;
  return s;
}

} // namespace coopsafe::harness
