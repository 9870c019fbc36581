#include "coopsafe/conformal.hpp"

#include "coopsafe/safety.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace coopsafe::conformal {

std::string_view to_string(Target t) { return t == Target::Hdv ? "hdv" : "cav"; }

std::array<double, 4> features(std::size_t i, const PlatoonState& state, double accel, Target t)
{
  if (t == Target::Hdv) {
    return {state.spacing(i), state.velocity(i), state.velocity(i - 1), 0.0};
  }
  return {state.spacing(i), state.velocity(i), accel, state.velocity(i - 1)};
}

void BehaviorDataset::matrices(Target role,
                               std::span<const std::size_t> episodes_subset,
                               Eigen::MatrixXd& x,
                               Eigen::VectorXd& y) const
{
  std::vector<char> keep(episodes, 0);
  for (const auto e : episodes_subset) {
    keep.at(e) = 1;
  }
  std::size_t count = 0;
  for (const auto& s : samples) {
    if (s.role == role && keep[s.episode]) {
      ++count;
    }
  }
  const int dim = feature_dim(role);
  x.resize(dim, static_cast<Eigen::Index>(count));
  y.resize(static_cast<Eigen::Index>(count));
  Eigen::Index c = 0;
  for (const auto& s : samples) {
    if (s.role == role && keep[s.episode]) {
      for (int k = 0; k < dim; ++k) {
        x(k, c) = s.x[static_cast<std::size_t>(k)];
      }
      y[c] = s.accel;
      ++c;
    }
  }
}

BehaviorDataset generate_dataset(const PlatoonConfig& cfg, const DatasetOptions& opts, const CavPolicyFn& policy)
{
  if (opts.episodes < 1) {
    throw std::invalid_argument("generate_dataset: need at least one episode");
  }
  if (opts.steps < 2) {
    throw std::invalid_argument("generate_dataset: need at least two steps");
  }
  cfg.validate();
  BehaviorDataset ds;
  ds.episodes = opts.episodes;
  ds.vehicles = cfg.n;
  ds.samples.reserve(opts.episodes * (opts.steps - 1) * cfg.n);

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t e = 0; e < opts.episodes; ++e) {
    auto state = PlatoonState::uniform(cfg, opts.spacing, opts.head_velocity);
    std::vector<double> prev_accel(cfg.n, 0.0);
    PlatoonState prev = state;
    for (std::size_t t = 0; t < opts.steps; ++t) {
      const auto u = policy(state);
      const auto a = dynamics::accelerations(state, u, cfg);
      if (t > 0) {
        for (std::size_t i = 1; i <= cfg.n; ++i) {
          BehaviorSample s;
          s.episode = static_cast<std::uint32_t>(e);
          s.step = static_cast<std::uint32_t>(t);
          s.vehicle = static_cast<std::uint32_t>(i);
          s.role = cfg.is_cav(i) ? Target::Cav : Target::Hdv;
          s.x = features(i, prev, prev_accel[i - 1], s.role);
          s.accel = a[i - 1];
          ds.samples.push_back(s);
        }
      }
      prev = state;
      prev_accel = a;
      state = dynamics::integrate(state, a, 0.0, cfg.dt);
      state.head_velocity = opts.head_velocity + opts.noise_std * noise(rng);
    }
  }
  return ds;
}

EpisodeSplit split_episodes(std::size_t episodes, double train_fraction, double calibration_fraction, std::uint64_t seed)
{
  if (train_fraction < 0.0 || calibration_fraction < 0.0 || train_fraction + calibration_fraction > 1.0) {
    throw std::invalid_argument("split_episodes: invalid fractions");
  }
  std::vector<std::size_t> ids(episodes);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(episodes)));
  const auto n_cal = static_cast<std::size_t>(std::llround(calibration_fraction * static_cast<double>(episodes)));
  if (n_train + n_cal > episodes) {
    throw std::invalid_argument("split_episodes: fractions round past the episode count");
  }
  EpisodeSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.calibration.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                       ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal), ids.end());
  for (auto* v : {&s.train, &s.calibration, &s.test}) {
    std::sort(v->begin(), v->end());
  }
  return s;
}

double Regressor::predict(std::span<const double> x) const
{
  Eigen::MatrixXd in(net.input_dim(), 1);
  for (int k = 0; k < net.input_dim(); ++k) {
    in(k, 0) = x[static_cast<std::size_t>(k)];
  }
  return net.forward(input.apply(in))(0, 0);
}

Eigen::VectorXd Regressor::predict(const Eigen::MatrixXd& x) const
{
  return net.forward(input.apply(x)).row(0).transpose();
}

Regressor train_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TrainOptions& opts, FitReport* report)
{
  if (x.cols() == 0) {
    throw std::invalid_argument("train_predictor: empty training set");
  }
  if (x.cols() != y.size()) {
    throw std::invalid_argument("train_predictor: feature and target counts differ");
  }
  if (opts.batch < 1 || opts.epochs < 0) {
    throw std::invalid_argument("train_predictor: invalid batch size or epoch count");
  }
  std::mt19937_64 rng(opts.seed);
  std::vector<int> sizes{static_cast<int>(x.rows())};
  sizes.insert(sizes.end(), opts.hidden.begin(), opts.hidden.end());
  sizes.push_back(1);

  Regressor r{nn::Mlp(sizes, rng), nn::Standardizer::fit(x)};
  const Eigen::MatrixXd xs = r.input.apply(x);
  const Eigen::Index n = x.cols();

  auto full_mse = [&] {
    const Eigen::VectorXd pred = r.net.forward(xs).row(0).transpose();
    return (pred - y).squaredNorm() / static_cast<double>(n);
  };

  if (report != nullptr) {
    report->epoch_mse.assign(1, full_mse());
  }

  Eigen::VectorXd params = r.net.params();
  nn::Adam adam(params.size(), opts.lr);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  nn::Mlp::Tape tape;
  Eigen::VectorXd grad(params.size());
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += opts.batch) {
      const Eigen::Index b = std::min<Eigen::Index>(opts.batch, n - start);
      Eigen::MatrixXd xb(xs.rows(), b);
      Eigen::RowVectorXd yb(b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const auto idx = order[static_cast<std::size_t>(start + k)];
        xb.col(k) = xs.col(idx);
        yb[k] = y[idx];
      }
      const Eigen::MatrixXd out = r.net.forward(xb, tape);
      const Eigen::MatrixXd g = 2.0 * (out - yb) / static_cast<double>(b);
      grad.setZero();
      r.net.backward(tape, g, grad);
      adam.step(params, grad);
      r.net.set_params(params);
    }
    const double mse = full_mse();
    if (!std::isfinite(mse)) {
      throw std::runtime_error("train_predictor: loss diverged at epoch " + std::to_string(epoch));
    }
    if (report != nullptr) {
      report->epoch_mse.push_back(mse);
    }
  }
  return r;
}

double PredictorSet::predict(Target t, const std::array<double, 4>& x) const
{
  return of(t).predict(std::span<const double>(x.data(), static_cast<std::size_t>(feature_dim(t))));
}

PredictorSet train_predictors(const BehaviorDataset& ds,
                              std::span<const std::size_t> train_episodes,
                              const TrainOptions& opts,
                              FitReport* hdv_report,
                              FitReport* cav_report)
{
  PredictorSet set;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  ds.matrices(Target::Hdv, train_episodes, x, y);
  set.hdv = train_predictor(x, y, opts, hdv_report);
  ds.matrices(Target::Cav, train_episodes, x, y);
  TrainOptions cav_opts = opts;
  cav_opts.seed = opts.seed + 1;
  set.cav = train_predictor(x, y, cav_opts, cav_report);
  return set;
}

double nonconformity(std::span<const double> truth, std::span<const double> pred)
{
  if (truth.empty() || truth.size() != pred.size()) {
    throw std::invalid_argument("nonconformity: need equal, nonempty inputs");
  }
  double r = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    r = std::max(r, std::abs(truth[k] - pred[k]));
  }
  return r;
}

std::vector<std::size_t> estimated_vehicles(std::size_t ego, const PlatoonConfig& cfg)
{
  std::vector<std::size_t> out = safety::guarded_hdvs(ego, cfg);
  for (const auto j : safety::decision_layout(ego, cfg).cavs) {
    if (j != ego) {
      out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> nonconformity_scores(const BehaviorDataset& ds,
                                         std::span<const std::size_t> episodes_subset,
                                         const PredictorSet& predictors,
                                         const PlatoonConfig& cfg)
{
  if (ds.vehicles != cfg.n) {
    throw std::invalid_argument("nonconformity_scores: dataset and configuration disagree on n");
  }
  std::vector<char> keep(ds.episodes, 0);
  for (const auto e : episodes_subset) {
    keep.at(e) = 1;
  }
  std::vector<std::vector<std::size_t>> watched;
  for (const auto j : cfg.cav_indices) {
    watched.push_back(estimated_vehicles(j, cfg));
  }

  // Predict every kept sample in two batched passes, then group by step.
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    if (keep[ds.samples[k].episode]) {
      rows.push_back(k);
    }
  }
  std::vector<double> error(rows.size(), 0.0);
  for (const auto role : {Target::Hdv, Target::Cav}) {
    std::vector<std::size_t> idx;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (ds.samples[rows[r]].role == role) {
        idx.push_back(r);
      }
    }
    const int dim = feature_dim(role);
    Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto& s = ds.samples[rows[idx[c]]];
      for (int f = 0; f < dim; ++f) {
        x(f, static_cast<Eigen::Index>(c)) = s.x[static_cast<std::size_t>(f)];
      }
    }
    const Eigen::VectorXd pred = idx.empty() ? Eigen::VectorXd() : predictors.of(role).predict(x);
    for (std::size_t c = 0; c < idx.size(); ++c) {
      error[idx[c]] = std::abs(ds.samples[rows[idx[c]]].accel - pred[static_cast<Eigen::Index>(c)]);
    }
  }

  std::vector<double> scores;
  std::size_t r = 0;
  while (r < rows.size()) {
    const auto& head = ds.samples[rows[r]];
    std::vector<double> step_error(cfg.n + 1, 0.0);
    std::size_t end = r;
    while (end < rows.size() && ds.samples[rows[end]].episode == head.episode &&
           ds.samples[rows[end]].step == head.step) {
      step_error[ds.samples[rows[end]].vehicle] = error[end];
      ++end;
    }
    for (const auto& w : watched) {
      double m = 0.0;
      for (const auto i : w) {
        m = std::max(m, step_error[i]);
      }
      scores.push_back(m);
    }
    r = end;
  }
  return scores;
}

bool ConformalCalibrator::vacuous() const { return std::isinf(C); }

ConformalCalibrator calibrate(std::vector<double> scores, double epsilon)
{
  if (scores.empty()) {
    throw std::invalid_argument("calibrate: no calibration scores");
  }
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("calibrate: epsilon must lie in (0, 1)");
  }
  ConformalCalibrator cal;
  cal.epsilon = epsilon;
  const double n = static_cast<double>(scores.size());
  // The small offset keeps exact products such as 4 * 0.75 from rounding up.
  const double rank = std::ceil((n + 1.0) * (1.0 - epsilon) - 1e-9);
  cal.p = static_cast<std::size_t>(std::max(1.0, rank));
  std::sort(scores.begin(), scores.end());
  scores.push_back(std::numeric_limits<double>::infinity());
  cal.scores = std::move(scores);
  cal.C = cal.scores[cal.p - 1];
  return cal;
}

double coverage(const ConformalCalibrator& cal, std::span<const double> test_scores)
{
  if (test_scores.empty()) {
    return 1.0;
  }
  const auto hit = std::count_if(test_scores.begin(), test_scores.end(), [&](double s) { return s <= cal.C; });
  return static_cast<double>(hit) / static_cast<double>(test_scores.size());
}

safety::Estimates PredictorEstimator::estimate(const safety::EstimationContext& ctx) const
{
  const auto& cfg = ctx.cfg;
  auto est = safety::Estimates::unknown(cfg.n);
  for (std::size_t i = 1; i <= cfg.n; ++i) {
    const auto role = cfg.is_cav(i) ? Target::Cav : Target::Hdv;
    const double a_prev = ctx.previous_accel.empty() ? 0.0 : ctx.previous_accel[i - 1];
    const double a_hat = predictors_.predict(role, features(i, ctx.previous, a_prev, role));
    if (role == Target::Cav) {
      est.cav_input[i - 1] = a_hat;
    } else {
      est.hdv_accel[i - 1] = a_hat;
    }
  }
  return est;
}

} // namespace coopsafe::conformal
