#pragma once

/**
 * @file
 * @brief Small fully connected networks with tanh hidden layers, manual
 *        reverse-mode gradients and an Adam optimizer over flat parameter vectors.
 */

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace coopsafe::nn {

/// Multilayer perceptron: tanh on hidden layers, identity on the output layer.
class Mlp
{
public:
  Mlp() = default;
  /// `sizes` = {input, hidden..., output}. Weights use Glorot-uniform init, biases zero.
  Mlp(std::vector<int> sizes, std::mt19937_64& rng);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t layers() const { return weights_.size(); }

  Eigen::Index num_params() const;
  /// Flat parameters: per layer, W column-major followed by b.
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& flat);

  const Eigen::MatrixXd& weight(std::size_t l) const { return weights_.at(l); }
  const Eigen::VectorXd& bias(std::size_t l) const { return biases_.at(l); }
  /// Replaces one layer; dimensions must match.
  void set_layer(std::size_t l, const Eigen::MatrixXd& w, const Eigen::VectorXd& b);

  /// Activations of every layer for a batch (one sample per column), input first.
  struct Tape
  {
    std::vector<Eigen::MatrixXd> activations;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const;
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const;

  /// Adds dL/dparams for the taped batch to `grad` (size num_params()) given
  /// dL/doutput (output_dim x batch) and returns dL/dinput.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& grad_out, Eigen::VectorXd& grad) const;

private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// Per-feature affine normalization (x - mean) / scale.
struct Standardizer
{
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  /// Fits on samples stored one per column; constant features get scale 1.
  static Standardizer fit(const Eigen::MatrixXd& x);
  static Standardizer identity(Eigen::Index dim);

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

class Adam
{
public:
  Adam() = default;
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  std::int64_t steps() const { return t_; }

private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

} // namespace coopsafe::nn
