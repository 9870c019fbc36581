#include "coopsafe/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace coopsafe::nn {

Mlp::Mlp(std::vector<int> sizes, std::mt19937_64& rng) : sizes_(std::move(sizes))
{
  if (sizes_.size() < 2) {
    throw std::invalid_argument("Mlp: need at least input and output sizes");
  }
  for (const int s : sizes_) {
    if (s <= 0) {
      throw std::invalid_argument("Mlp: layer sizes must be positive");
    }
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int fan_in = sizes_[l];
    const int fan_out = sizes_[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        w(r, c) = dist(rng);
      }
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(fan_out));
  }
}

Eigen::Index Mlp::num_params() const
{
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    n += weights_[l].size() + biases_[l].size();
  }
  return n;
}

Eigen::VectorXd Mlp::params() const
{
  Eigen::VectorXd flat(num_params());
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& w = weights_[l];
    flat.segment(o, w.size()) = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
    o += w.size();
    flat.segment(o, biases_[l].size()) = biases_[l];
    o += biases_[l].size();
  }
  return flat;
}

void Mlp::set_params(const Eigen::VectorXd& flat)
{
  if (flat.size() != num_params()) {
    throw std::invalid_argument("Mlp::set_params: size mismatch");
  }
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    Eigen::Map<Eigen::VectorXd>(w.data(), w.size()) = flat.segment(o, w.size());
    o += w.size();
    biases_[l] = flat.segment(o, biases_[l].size());
    o += biases_[l].size();
  }
}

void Mlp::set_layer(std::size_t l, const Eigen::MatrixXd& w, const Eigen::VectorXd& b)
{
  if (w.rows() != weights_.at(l).rows() || w.cols() != weights_.at(l).cols() ||
      b.size() != biases_.at(l).size()) {
    throw std::invalid_argument("Mlp::set_layer: dimension mismatch");
  }
  weights_[l] = w;
  biases_[l] = b;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const
{
  Tape tape;
  return forward(x, tape);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape& tape) const
{
  if (x.rows() != input_dim()) {
    throw std::invalid_argument("Mlp::forward: input has " + std::to_string(x.rows()) +
                                " features, network expects " + std::to_string(input_dim()));
  }
  tape.activations.clear();
  tape.activations.push_back(x);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = weights_[l] * tape.activations.back();
    z.colwise() += biases_[l];
    if (l + 1 < weights_.size()) {
      z = z.array().tanh().matrix();
    }
    tape.activations.push_back(std::move(z));
  }
  return tape.activations.back();
}

Eigen::VectorXd Mlp::forward_one(const Eigen::VectorXd& x) const
{
  return forward(Eigen::MatrixXd(x)).col(0);
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& grad_out, Eigen::VectorXd& grad) const
{
  if (grad.size() != num_params()) {
    throw std::invalid_argument("Mlp::backward: gradient buffer has the wrong size");
  }
  // Offsets of each layer's block inside the flat vector.
  std::vector<Eigen::Index> offset(weights_.size());
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    offset[l] = o;
    o += weights_[l].size() + biases_[l].size();
  }

  Eigen::MatrixXd delta = grad_out;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (l + 1 < weights_.size()) {
      const auto& a = tape.activations[l + 1];
      delta = (delta.array() * (1.0 - a.array().square())).matrix();
    }
    const auto& in = tape.activations[l];
    const Eigen::MatrixXd gw = delta * in.transpose();
    const auto nw = weights_[l].size();
    grad.segment(offset[l], nw) += Eigen::Map<const Eigen::VectorXd>(gw.data(), nw);
    grad.segment(offset[l] + nw, biases_[l].size()) += delta.rowwise().sum();
    delta = weights_[l].transpose() * delta;
  }
  return delta;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x)
{
  Standardizer s;
  const double count = static_cast<double>(x.cols());
  s.mean = x.rowwise().sum() / count;
  s.scale.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double var = (x.row(r).array() - s.mean[r]).square().sum() / count;
    const double sd = std::sqrt(var);
    s.scale[r] = sd > 1e-9 ? sd : 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(Eigen::Index dim)
{
  return Standardizer{Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const
{
  if (x.rows() != mean.size()) {
    throw std::invalid_argument("Standardizer: feature count mismatch");
  }
  return ((x.colwise() - mean).array().colwise() / scale.array()).matrix();
}

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(n)),
      v_(Eigen::VectorXd::Zero(n))
{
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad)
{
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("Adam::step: size mismatch");
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

} // namespace coopsafe::nn
