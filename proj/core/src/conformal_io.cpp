#include "coopsafe/conformal_io.hpp"

#include "coopsafe/text_format.hpp"
#include "json_util.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace coopsafe::conformal {

namespace {

constexpr std::string_view kDatasetHeader = "episode,step,vehicle,role,x0,x1,x2,x3,accel";

nlohmann::json regressor_to_json(const Regressor& r)
{
  return {{"network", detail::mlp_to_json(r.net)},
          {"input_mean", detail::vector_to_json(r.input.mean)},
          {"input_scale", detail::vector_to_json(r.input.scale)}};
}

Regressor regressor_from_json(const nlohmann::json& j, int expected_inputs)
{
  Regressor r{detail::mlp_from_json(j.at("network")),
              nn::Standardizer{detail::vector_from_json(j.at("input_mean")),
                               detail::vector_from_json(j.at("input_scale"))}};
  if (r.net.input_dim() != expected_inputs || r.net.output_dim() != 1) {
    throw std::runtime_error("predictor document: unexpected network input/output size");
  }
  if (r.input.mean.size() != expected_inputs || r.input.scale.size() != expected_inputs) {
    throw std::runtime_error("predictor document: normalization size mismatch");
  }
  return r;
}

} // namespace

void write_dataset(const BehaviorDataset& ds, const std::filesystem::path& path)
{
  std::string out;
  out.reserve(ds.samples.size() * 64);
  out += "# coopsafe.dataset v1 episodes=" + std::to_string(ds.episodes) + " vehicles=" + std::to_string(ds.vehicles) + "\n";
  out += kDatasetHeader;
  out += '\n';
  for (const auto& s : ds.samples) {
    out += std::to_string(s.episode);
    out += ',';
    out += std::to_string(s.step);
    out += ',';
    out += std::to_string(s.vehicle);
    out += ',';
    out += to_string(s.role);
    for (const double v : s.x) {
      out += ',';
      out += text::format_double(v);
    }
    out += ',';
    out += text::format_double(s.accel);
    out += '\n';
  }
  text::write_file(path, out);
}

BehaviorDataset read_dataset(const std::filesystem::path& path)
{
  std::istringstream in(text::read_file(path));
  BehaviorDataset ds;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# coopsafe.dataset v1", 0) != 0) {
    throw std::runtime_error("dataset '" + path.string() + "': missing version line");
  }
  {
    std::istringstream meta(line.substr(std::string("# coopsafe.dataset v1").size()));
    std::string tok;
    while (meta >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        continue;
      }
      const auto key = tok.substr(0, eq);
      const auto value = std::stoull(tok.substr(eq + 1));
      if (key == "episodes") {
        ds.episodes = value;
      } else if (key == "vehicles") {
        ds.vehicles = value;
      }
    }
  }
  if (!std::getline(in, line) || line != kDatasetHeader) {
    throw std::runtime_error("dataset '" + path.string() + "': unexpected header");
  }
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    const auto f = text::split_csv(line);
    if (f.size() != 9) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": expected 9 fields");
    }
    BehaviorSample s;
    s.episode = static_cast<std::uint32_t>(text::parse_double(f[0]));
    s.step = static_cast<std::uint32_t>(text::parse_double(f[1]));
    s.vehicle = static_cast<std::uint32_t>(text::parse_double(f[2]));
    if (f[3] == "hdv") {
      s.role = Target::Hdv;
    } else if (f[3] == "cav") {
      s.role = Target::Cav;
    } else {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": unknown role");
    }
    for (std::size_t k = 0; k < 4; ++k) {
      s.x[k] = text::parse_double(f[4 + k]);
    }
    s.accel = text::parse_double(f[8]);
    if (s.episode >= ds.episodes) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": episode out of range");
    }
    ds.samples.push_back(s);
  }
  return ds;
}

std::string predictor_to_json(const PredictorDocument& doc)
{
  nlohmann::json j;
  j["format"] = "coopsafe.predictor";
  j["version"] = kPredictorVersion;
  j["hdv"] = regressor_to_json(doc.predictors.hdv);
  j["cav"] = regressor_to_json(doc.predictors.cav);
  if (doc.calibration) {
    const auto& c = *doc.calibration;
    j["calibration"] = {{"epsilon", c.epsilon},
                        {"p", c.p},
                        {"size", doc.calibration_size},
                        {"C", c.vacuous() ? nlohmann::json(nullptr) : nlohmann::json(c.C)}};
  }
  return j.dump(2) + "\n";
}

PredictorDocument predictor_from_json(const std::string& text)
{
  const auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "coopsafe.predictor") {
    throw std::runtime_error("not a predictor document");
  }
  const int version = j.at("version").get<int>();
  if (version < 1 || version > kPredictorVersion) {
    throw std::runtime_error("unsupported predictor document version " + std::to_string(version));
  }
  PredictorDocument doc;
  doc.predictors.hdv = regressor_from_json(j.at("hdv"), feature_dim(Target::Hdv));
  doc.predictors.cav = regressor_from_json(j.at("cav"), feature_dim(Target::Cav));
  if (j.contains("calibration")) {
    const auto& c = j["calibration"];
    ConformalCalibrator cal;
    cal.epsilon = c.at("epsilon").get<double>();
    cal.p = c.at("p").get<std::size_t>();
    cal.C = c.at("C").is_null() ? std::numeric_limits<double>::infinity() : c.at("C").get<double>();
    doc.calibration = cal;
    doc.calibration_size = c.at("size").get<std::size_t>();
  }
  return doc;
}

void write_predictor(const PredictorDocument& doc, const std::filesystem::path& path)
{
  text::write_file(path, predictor_to_json(doc));
}

PredictorDocument read_predictor(const std::filesystem::path& path)
{
  return predictor_from_json(text::read_file(path));
}

} // namespace coopsafe::conformal
