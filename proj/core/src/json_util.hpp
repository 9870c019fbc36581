#pragma once

// nlohmann::json conversions for network weights, shared by the predictor and
// checkpoint writers. Private to the library.

#include "coopsafe/nn.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace coopsafe::detail {

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v)
{
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j)
{
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

inline nlohmann::json mlp_to_json(const nn::Mlp& net)
{
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.layers(); ++l) {
    const auto& w = net.weight(l);
    // Row-major so the document reads like the matrix.
    std::vector<double> rows;
    rows.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        rows.push_back(w(r, c));
      }
    }
    layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"weight", rows}, {"bias", vector_to_json(net.bias(l))}});
  }
  return {{"sizes", net.sizes()}, {"activation", "tanh"}, {"layers", layers}};
}

inline nn::Mlp mlp_from_json(const nlohmann::json& j)
{
  const auto sizes = j.at("sizes").get<std::vector<int>>();
  std::mt19937_64 rng(0);
  nn::Mlp net(sizes, rng);
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers()) {
    throw std::runtime_error("network document: layer count does not match sizes");
  }
  for (std::size_t l = 0; l < net.layers(); ++l) {
    const auto& lj = layers[l];
    const auto rows = lj.at("rows").get<Eigen::Index>();
    const auto cols = lj.at("cols").get<Eigen::Index>();
    const auto data = lj.at("weight").get<std::vector<double>>();
    if (rows != sizes[l + 1] || cols != sizes[l] || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw std::runtime_error("network document: layer " + std::to_string(l) + " has inconsistent dimensions");
    }
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        w(r, c) = data[static_cast<std::size_t>(r * cols + c)];
      }
    }
    net.set_layer(l, w, vector_from_json(lj.at("bias")));
  }
  return net;
}

} // namespace coopsafe::detail
