#include "coopsafe/emit.hpp"

#include "coopsafe/safety.hpp"
#include "coopsafe/text_format.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace coopsafe::harness {

namespace {

std::string join_indices(const std::vector<std::size_t>& v)
{
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k > 0) {
      out += ';';
    }
    out += std::to_string(v[k]);
  }
  return out;
}

std::vector<std::size_t> parse_indices(const std::string& s)
{
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    const auto semi = s.find(';', pos);
    out.push_back(std::stoul(s.substr(pos, semi - pos)));
    if (semi == std::string::npos) {
      break;
    }
    pos = semi + 1;
  }
  return out;
}

std::string suffix(const char* name, std::size_t i)
{
  return std::string(name) + "_" + std::to_string(i);
}

} // namespace

std::string trace_to_csv(const RunRecord& record)
{
  const auto& cfg = record.platoon;
  const auto prot = safety::protected_hdvs(cfg);
  std::string out = "# coopsafe.trace v" + std::to_string(kTraceVersion) + " scenario=" + record.scenario +
                    " benchmark=" + std::string(to_string(record.benchmark)) + " n=" + std::to_string(cfg.n) +
                    " cavs=" + join_indices(cfg.cav_indices) + " comm_range=" + std::to_string(cfg.comm_range) +
                    " dt=" + text::format_double(cfg.dt) + " tau=" + text::format_double(record.tau) + "\n";

  std::vector<std::string> header{"t", "v0"};
  for (const char* name : {"s", "v", "a", "h"}) {
    for (std::size_t i = 1; i <= cfg.n; ++i) {
      header.push_back(suffix(name, i));
    }
  }
  for (const auto i : prot) {
    header.push_back(suffix("hsuf", i));
  }
  for (const char* name : {"u_rl", "u_safe", "qp"}) {
    for (const auto j : cfg.cav_indices) {
      header.push_back(suffix(name, j));
    }
  }
  out += text::join_csv(header);
  out += '\n';

  for (const auto& row : record.steps) {
    std::vector<std::string> f;
    f.reserve(header.size());
    f.push_back(text::format_double(row.t));
    f.push_back(text::format_double(row.state.head_velocity));
    for (std::size_t i = 1; i <= cfg.n; ++i) {
      f.push_back(text::format_double(row.state.spacing(i)));
    }
    for (std::size_t i = 1; i <= cfg.n; ++i) {
      f.push_back(text::format_double(row.state.velocity(i)));
    }
    for (const double a : row.accel) {
      f.push_back(text::format_double(a));
    }
    for (const double h : row.h) {
      f.push_back(text::format_double(h));
    }
    for (const auto i : prot) {
      f.push_back(text::format_double(row.h_suf.at(i - 1)));
    }
    for (const double u : row.u_rl) {
      f.push_back(text::format_double(u));
    }
    for (const double u : row.u_safe) {
      f.push_back(text::format_double(u));
    }
    for (const int q : row.qp_status) {
      f.push_back(std::to_string(q));
    }
    out += text::join_csv(f);
    out += '\n';
  }
  return out;
}

RunRecord trace_from_csv(const std::string& text)
{
  std::istringstream in(text);
  std::string line;
  const std::string tag = "# coopsafe.trace v";
  if (!std::getline(in, line) || line.rfind(tag, 0) != 0) {
    throw std::runtime_error("trace: missing version line");
  }
  std::map<std::string, std::string> meta;
  {
    std::istringstream ms(line.substr(tag.size()));
    int version = 0;
    ms >> version;
    if (version != kTraceVersion) {
      throw std::runtime_error("trace: unsupported version " + std::to_string(version));
    }
    std::string tok;
    while (ms >> tok) {
      const auto eq = tok.find('=');
      if (eq != std::string::npos) {
        meta[tok.substr(0, eq)] = tok.substr(eq + 1);
      }
    }
  }
  auto need = [&](const char* key) -> const std::string& {
    const auto it = meta.find(key);
    if (it == meta.end()) {
      throw std::runtime_error(std::string("trace: version line lacks '") + key + "'");
    }
    return it->second;
  };

  RunRecord rec;
  rec.scenario = need("scenario");
  rec.benchmark = parse_benchmark(need("benchmark"));
  rec.platoon.n = std::stoul(need("n"));
  rec.platoon.cav_indices = parse_indices(need("cavs"));
  if (meta.count("comm_range") != 0) {
    rec.platoon.comm_range = std::stoul(meta["comm_range"]);
  }
  rec.platoon.dt = text::parse_double(need("dt"));
  rec.tau = text::parse_double(need("tau"));
  rec.platoon.validate();
  const auto& cfg = rec.platoon;
  const std::size_t n = cfg.n;
  const std::size_t m = cfg.cav_indices.size();

  if (!std::getline(in, line)) {
    throw std::runtime_error("trace: missing header");
  }
  std::map<std::string, std::size_t> col;
  {
    const auto names = text::split_csv(line);
    for (std::size_t k = 0; k < names.size(); ++k) {
      col[std::string(names[k])] = k;
    }
  }
  auto index = [&](const std::string& name) {
    const auto it = col.find(name);
    if (it == col.end()) {
      throw std::runtime_error("trace: missing column '" + name + "'");
    }
    return it->second;
  };
  const auto prot = safety::protected_hdvs(cfg);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    const auto f = text::split_csv(line);
    if (f.size() != col.size()) {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": expected " + std::to_string(col.size()) +
                               " fields");
    }
    auto num = [&](const std::string& name) { return text::parse_double(f[index(name)]); };
    StepRecord row;
    row.t = num("t");
    row.state.head_velocity = num("v0");
    row.state.vehicles.resize(n);
    row.state.roles.resize(n);
    row.accel.resize(n);
    row.h.resize(n);
    row.h_suf.assign(n, nan);
    for (std::size_t i = 1; i <= n; ++i) {
      row.state.vehicles[i - 1] = {num(suffix("s", i)), num(suffix("v", i))};
      row.state.roles[i - 1] = cfg.role(i);
      row.accel[i - 1] = num(suffix("a", i));
      row.h[i - 1] = num(suffix("h", i));
    }
    for (const auto i : prot) {
      row.h_suf[i - 1] = num(suffix("hsuf", i));
    }
    row.u_rl.resize(m);
    row.u_safe.resize(m);
    row.qp_status.resize(m);
    for (std::size_t c = 0; c < m; ++c) {
      const auto j = cfg.cav_indices[c];
      row.u_rl[c] = num(suffix("u_rl", j));
      row.u_safe[c] = num(suffix("u_safe", j));
      row.qp_status[c] = static_cast<int>(num(suffix("qp", j)));
      if (row.qp_status[c] == 1) {
        ++rec.infeasible_qps;
      }
    }
    rec.steps.push_back(std::move(row));
  }
  summarize(rec);
  return rec;
}

void write_trace(const RunRecord& record, const std::filesystem::path& path)
{
  text::write_file(path, trace_to_csv(record));
}

RunRecord read_trace(const std::filesystem::path& path)
{
  return trace_from_csv(text::read_file(path));
}

std::string region_to_json(const RegionMatrix& region)
{
  const auto rows = region.grid.accels.size();
  const auto cols = region.grid.durations.size();
  nlohmann::json safe = nlohmann::json::array();
  nlohmann::json min_h = nlohmann::json::array();
  nlohmann::json min_s = nlohmann::json::array();
  for (std::size_t a = 0; a < rows; ++a) {
    std::vector<int> s;
    std::vector<double> h, sp;
    for (std::size_t d = 0; d < cols; ++d) {
      const auto c = region.index(a, d);
      s.push_back(region.safe.at(c));
      h.push_back(region.min_h.at(c));
      sp.push_back(region.min_spacing.at(c));
    }
    safe.push_back(s);
    min_h.push_back(h);
    min_s.push_back(sp);
  }
  nlohmann::json j;
  j["format"] = "coopsafe.region";
  j["version"] = kRegionVersion;
  j["scenario"] = region.scenario;
  j["benchmark"] = std::string(to_string(region.benchmark));
  j["accel"] = region.grid.accels;
  j["duration"] = region.grid.durations;
  j["safe_cells"] = region.safe_cells();
  j["safe"] = safe;
  j["min_h"] = min_h;
  j["min_spacing"] = min_s;
  return j.dump(1) + "\n";
}

RegionMatrix region_from_json(const std::string& text)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("region: ") + e.what());
  }
  if (j.value("format", "") != "coopsafe.region") {
    throw std::runtime_error("not a region document");
  }
  if (j.value("version", 0) != kRegionVersion) {
    throw std::runtime_error("unsupported region document version");
  }
  RegionMatrix r;
  r.scenario = j.at("scenario").get<std::string>();
  r.benchmark = parse_benchmark(j.at("benchmark").get<std::string>());
  r.grid.accels = j.at("accel").get<std::vector<double>>();
  r.grid.durations = j.at("duration").get<std::vector<double>>();
  r.grid.validate();
  const auto safe = j.at("safe").get<std::vector<std::vector<int>>>();
  const auto min_h = j.at("min_h").get<std::vector<std::vector<double>>>();
  const auto min_s = j.at("min_spacing").get<std::vector<std::vector<double>>>();
  const auto rows = r.grid.accels.size();
  const auto cols = r.grid.durations.size();
  if (safe.size() != rows || min_h.size() != rows || min_s.size() != rows) {
    throw std::runtime_error("region: row count does not match the accel axis");
  }
  for (std::size_t a = 0; a < rows; ++a) {
    if (safe[a].size() != cols || min_h[a].size() != cols || min_s[a].size() != cols) {
      throw std::runtime_error("region: column count does not match the duration axis");
    }
    for (std::size_t d = 0; d < cols; ++d) {
      r.safe.push_back(static_cast<std::uint8_t>(safe[a][d] != 0));
      r.min_h.push_back(min_h[a][d]);
      r.min_spacing.push_back(min_s[a][d]);
    }
  }
  return r;
}

void write_region(const RegionMatrix& region, const std::filesystem::path& path)
{
  text::write_file(path, region_to_json(region));
}

RegionMatrix read_region(const std::filesystem::path& path)
{
  return region_from_json(text::read_file(path));
}

std::string metrics_to_csv(std::span<const MetricsRow> rows)
{
  std::string out = "# coopsafe.metrics v" + std::to_string(kMetricsVersion) + "\n";
  out += "scenario,benchmark,avg_time_headway,aave,collision,min_spacing,min_h,infeasible_qps\n";
  for (const auto& r : rows) {
    out += text::join_csv({r.scenario,
                           std::string(to_string(r.benchmark)),
                           text::format_double(r.avg_time_headway),
                           text::format_double(r.aave),
                           r.collision ? "1" : "0",
                           text::format_double(r.min_spacing),
                           text::format_double(r.min_h),
                           std::to_string(r.infeasible_qps)});
    out += '\n';
  }
  return out;
}

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path)
{
  text::write_file(path, metrics_to_csv(rows));
}

} // namespace coopsafe::harness
