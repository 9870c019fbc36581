#include "coopsafe/conformal.hpp"
#include "coopsafe/conformal_io.hpp"
#include "coopsafe/policy.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <set>

using namespace coopsafe;
using namespace coopsafe::conformal;

namespace {

const PlatoonConfig kCfg{};

CavPolicyFn heuristic()
{
  return [](const PlatoonState& s) { return policy::HeuristicPolicy().act(s, kCfg); };
}

} // namespace

TEST(Nonconformity, Examples)
{
  const std::vector<double> t{1.0, 2.0, 3.0};
  EXPECT_EQ(nonconformity(t, t), 0.0);
  const std::vector<double> truth{0.1, -0.4, 0.2};
  const std::vector<double> zero{0.0, 0.0, 0.0};
  EXPECT_NEAR(nonconformity(truth, zero), 0.4, 1e-15);
  EXPECT_NEAR(nonconformity(std::vector<double>{-1.3}, std::vector<double>{0.0}), 1.3, 1e-15);
  EXPECT_THROW(nonconformity(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(nonconformity(truth, std::vector<double>{0.0}), std::invalid_argument);
}

TEST(Nonconformity, SeminormProperties)
{
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(5), b(5), a_neg(5), a_scaled(5), b_scaled(5);
    for (int k = 0; k < 5; ++k) {
      a[k] = n01(rng);
      b[k] = n01(rng);
      a_neg[k] = 2.0 * b[k] - a[k]; // error flipped in sign around b
      a_scaled[k] = 3.0 * a[k];
      b_scaled[k] = 3.0 * b[k];
    }
    const double r = nonconformity(a, b);
    EXPECT_GE(r, 0.0);
    EXPECT_NEAR(nonconformity(a_neg, b), r, 1e-12);
    EXPECT_NEAR(nonconformity(a_scaled, b_scaled), 3.0 * r, 1e-12);
  }
}

TEST(Calibrate, HandExample)
{
  const auto c = calibrate({0.3, 0.1, 0.2}, 0.25);
  EXPECT_EQ(c.p, 3u);
  EXPECT_EQ(c.C, 0.3);
  EXPECT_FALSE(c.vacuous());
}

TEST(Calibrate, NinetyNineScores)
{
  std::vector<double> s;
  for (int k = 1; k <= 99; ++k) {
    s.push_back(0.01 * k);
  }
  const auto c = calibrate(s, 0.01);
  EXPECT_EQ(c.p, 99u);
  EXPECT_EQ(c.C, 0.99);
}

TEST(Calibrate, LowerEdgeAndSentinel)
{
  const auto low = calibrate({0.5, 0.2, 0.9}, 0.99);
  EXPECT_EQ(low.p, 1u);
  EXPECT_EQ(low.C, 0.2);
  const auto vac = calibrate({0.5, 0.2, 0.9}, 0.1);
  EXPECT_EQ(vac.p, 4u);
  EXPECT_TRUE(std::isinf(vac.C));
  EXPECT_TRUE(vac.vacuous());
  EXPECT_TRUE(std::isinf(vac.scores.back()));
}

TEST(Calibrate, RejectsBadInput)
{
  EXPECT_THROW(calibrate({}, 0.1), std::invalid_argument);
  EXPECT_THROW(calibrate({0.1}, 0.0), std::invalid_argument);
  EXPECT_THROW(calibrate({0.1}, 1.0), std::invalid_argument);
}

TEST(Calibrate, Monotone)
{
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(50);
    for (auto& v : s) {
      v = u(rng);
    }
    const double eps = 0.05 + 0.3 * u(rng);
    const auto base = calibrate(s, eps);
    auto more = s;
    more.push_back(base.C + u(rng));
    EXPECT_GE(calibrate(more, eps).C, base.C);
    EXPECT_GE(calibrate(s, eps * 0.5).C, base.C);
  }
}

TEST(Coverage, CalibrationSetCoversByConstruction)
{
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> s(500);
  for (auto& v : s) {
    v = e(rng);
  }
  for (const double eps : {0.01, 0.05, 0.2}) {
    EXPECT_GE(coverage(calibrate(s, eps), s), 1.0 - eps);
  }
}

TEST(Coverage, UniformScoresBinomialBand)
{
  // Coverage of 1000 fresh draws lies in [0.88, 0.94] with probability about 0.95.
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> cal(1000), test(1000);
    for (auto& v : cal) {
      v = u(rng);
    }
    for (auto& v : test) {
      v = u(rng);
    }
    const double c = coverage(calibrate(cal, 0.1), test);
    inside += (c >= 0.88 && c <= 0.94) ? 1 : 0;
  }
  EXPECT_GE(inside, 34);
}

TEST(Dataset, RowCountAndOrdering)
{
  DatasetOptions o;
  o.episodes = 2;
  o.steps = 50;
  const auto ds = generate_dataset(kCfg, o, heuristic());
  EXPECT_EQ(ds.samples.size(), 2u * 49u * 7u);
  for (std::size_t k = 1; k < ds.samples.size(); ++k) {
    const auto& a = ds.samples[k - 1];
    const auto& b = ds.samples[k];
    EXPECT_LT(std::tie(a.episode, a.step, a.vehicle), std::tie(b.episode, b.step, b.vehicle));
  }
  std::size_t cavs = 0;
  for (const auto& s : ds.samples) {
    cavs += s.role == Target::Cav ? 1 : 0;
    EXPECT_EQ(s.role == Target::Cav, kCfg.is_cav(s.vehicle));
  }
  EXPECT_EQ(cavs, 2u * 49u * 2u);
}

TEST(Dataset, NoiselessEquilibriumHasZeroAccelerations)
{
  DatasetOptions o;
  o.steps = 200;
  o.noise_std = 0.0;
  const auto ds = generate_dataset(kCfg, o, heuristic());
  for (const auto& s : ds.samples) {
    EXPECT_NEAR(s.accel, 0.0, 1e-12);
  }
}

TEST(Dataset, DeterministicForSeedAndRoundTripsThroughCsv)
{
  DatasetOptions o;
  o.episodes = 2;
  o.steps = 40;
  o.seed = 5;
  const auto a = generate_dataset(kCfg, o, heuristic());
  const auto b = generate_dataset(kCfg, o, heuristic());
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    EXPECT_EQ(a.samples[k].x, b.samples[k].x);
    EXPECT_EQ(a.samples[k].accel, b.samples[k].accel);
  }
  const auto path = std::filesystem::temp_directory_path() / "coopsafe_dataset_test.csv";
  write_dataset(a, path);
  const auto c = read_dataset(path);
  std::filesystem::remove(path);
  ASSERT_EQ(c.samples.size(), a.samples.size());
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    EXPECT_EQ(c.samples[k].x, a.samples[k].x);
    EXPECT_EQ(c.samples[k].accel, a.samples[k].accel);
    EXPECT_EQ(c.samples[k].role, a.samples[k].role);
  }
}

TEST(Dataset, FeatureLayout)
{
  auto x = PlatoonState::uniform(kCfg, 20.0, 15.0);
  x.vehicle(3) = {18.0, 16.0};
  x.vehicle(2) = {21.0, 14.0};
  const auto h = features(3, x, 0.7, Target::Hdv);
  EXPECT_EQ(h, (std::array<double, 4>{18.0, 16.0, 14.0, 0.0}));
  const auto c = features(2, x, 0.7, Target::Cav);
  EXPECT_EQ(c, (std::array<double, 4>{21.0, 14.0, 0.7, 15.0}));
}

TEST(Split, DisjointAndComplete)
{
  const auto s = split_episodes(20, 0.6, 0.2, 3);
  EXPECT_EQ(s.train.size(), 12u);
  EXPECT_EQ(s.calibration.size(), 4u);
  EXPECT_EQ(s.test.size(), 4u);
  std::set<std::size_t> all;
  for (const auto* v : {&s.train, &s.calibration, &s.test}) {
    all.insert(v->begin(), v->end());
  }
  EXPECT_EQ(all.size(), 20u);
  EXPECT_THROW(split_episodes(10, 0.8, 0.3, 1), std::invalid_argument);
}

TEST(TrainPredictor, ConstantZeroTarget)
{
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd x(3, 500);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    x.data()[k] = n01(rng);
  }
  TrainOptions o;
  o.epochs = 60;
  o.batch = 32;
  FitReport rep;
  const auto r = train_predictor(x, Eigen::VectorXd::Zero(500), o, &rep);
  EXPECT_LT(rep.epoch_mse.back(), 1e-4);
  EXPECT_LT(r.predict(x).cwiseAbs().maxCoeff(), 0.1);
}

TEST(TrainPredictor, LinearRelativeVelocityTarget)
{
  // a = 0.5 (v_prev - v) on (s, v, v_prev) features.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> s(10.0, 30.0), v(10.0, 20.0);
  auto make = [&](int n, Eigen::MatrixXd& x, Eigen::VectorXd& y) {
    x.resize(3, n);
    y.resize(n);
    for (int k = 0; k < n; ++k) {
      x(0, k) = s(rng);
      x(1, k) = v(rng);
      x(2, k) = v(rng);
      y(k) = 0.5 * (x(2, k) - x(1, k));
    }
  };
  Eigen::MatrixXd xt, xh;
  Eigen::VectorXd yt, yh;
  make(2000, xt, yt);
  make(500, xh, yh);
  TrainOptions o;
  o.epochs = 200;
  o.batch = 64;
  FitReport rep;
  const auto r = train_predictor(xt, yt, o, &rep);
  EXPECT_LT(rep.epoch_mse.back(), rep.epoch_mse.front());
  EXPECT_LT((r.predict(xh) - yh).squaredNorm() / 500.0, 1e-3);
}

TEST(TrainPredictor, MseTrendsDownOnFvdData)
{
  DatasetOptions o;
  o.episodes = 3;
  o.steps = 300;
  const auto ds = generate_dataset(kCfg, o, heuristic());
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  const std::vector<std::size_t> eps{0, 1, 2};
  ds.matrices(Target::Hdv, eps, x, y);
  TrainOptions t;
  t.epochs = 15;
  FitReport rep;
  train_predictor(x, y, t, &rep);
  ASSERT_EQ(rep.epoch_mse.size(), 16u);
  EXPECT_LT(rep.epoch_mse.back(), 0.5 * rep.epoch_mse.front());
  // Nonincreasing within per-epoch noise.
  for (std::size_t k = 1; k < rep.epoch_mse.size(); ++k) {
    EXPECT_LE(rep.epoch_mse[k], 1.5 * rep.epoch_mse[k - 1] + 1e-6);
  }
}

TEST(TrainPredictor, RejectsEmptyData)
{
  EXPECT_THROW(train_predictor(Eigen::MatrixXd(3, 0), Eigen::VectorXd(0), {}), std::invalid_argument);
}

TEST(PredictorDocument, RoundTripKeepsPredictionsAndThreshold)
{
  DatasetOptions o;
  o.episodes = 3;
  o.steps = 100;
  const auto ds = generate_dataset(kCfg, o, heuristic());
  const std::vector<std::size_t> train{0, 1};
  TrainOptions t;
  t.epochs = 3;
  PredictorDocument doc;
  doc.predictors = train_predictors(ds, train, t);
  const std::vector<std::size_t> cal{2};
  const auto scores = nonconformity_scores(ds, cal, doc.predictors, kCfg);
  doc.calibration = calibrate(scores, 0.01);
  doc.calibration_size = scores.size();

  const auto text = predictor_to_json(doc);
  EXPECT_EQ(predictor_to_json(predictor_from_json(text)), text);
  const auto back = predictor_from_json(text);
  ASSERT_TRUE(back.calibration.has_value());
  EXPECT_EQ(back.calibration->C, doc.calibration->C);
  const std::array<double, 4> x{18.0, 15.5, 0.2, 15.0};
  EXPECT_EQ(back.predictors.predict(Target::Cav, x), doc.predictors.predict(Target::Cav, x));
  EXPECT_EQ(back.predictors.predict(Target::Hdv, x), doc.predictors.predict(Target::Hdv, x));
  EXPECT_THROW(predictor_from_json("{\"format\": \"other\"}"), std::runtime_error);
}

TEST(Scores, OnePerEpisodeStepAndCav)
{
  DatasetOptions o;
  o.episodes = 2;
  o.steps = 60;
  const auto ds = generate_dataset(kCfg, o, heuristic());
  TrainOptions t;
  t.epochs = 2;
  const std::vector<std::size_t> all{0, 1};
  const auto pred = train_predictors(ds, all, t);
  const auto scores = nonconformity_scores(ds, all, pred, kCfg);
  EXPECT_EQ(scores.size(), 2u * 59u * 2u);
  EXPECT_TRUE(std::all_of(scores.begin(), scores.end(), [](double s) { return s >= 0.0 && std::isfinite(s); }));
}

TEST(EstimatedVehicles, GuardedHdvsAndOtherCavsInRange)
{
  EXPECT_EQ(estimated_vehicles(2, kCfg), (std::vector<std::size_t>{3, 4, 5}));
  EXPECT_EQ(estimated_vehicles(4, kCfg), (std::vector<std::size_t>{2, 5, 6, 7}));
}
