#include "coopsafe/pipeline.hpp"

#include "coopsafe/marl.hpp"

#include <stdexcept>

namespace coopsafe::harness {

conformal::PredictorDocument train_calibrated_predictor(const PlatoonConfig& cfg,
                                                        const PredictorSettings& settings,
                                                        const policy::NominalPolicy& cav_policy,
                                                        CalibrationReport* report)
{
  conformal::DatasetOptions dopt;
  dopt.episodes = settings.episodes;
  dopt.steps = settings.steps;
  dopt.noise_std = settings.noise_std;
  dopt.seed = settings.dataset_seed;
  const auto ds = conformal::generate_dataset(
      cfg, dopt, [&](const PlatoonState& s) { return cav_policy.act(s, cfg); });
  const auto split = conformal::split_episodes(
      settings.episodes, settings.train_fraction, settings.calibration_fraction, settings.split_seed);

  conformal::TrainOptions topt;
  topt.epochs = settings.epochs;
  topt.seed = settings.train_seed;
  conformal::FitReport fh, fc;
  auto predictors = conformal::train_predictors(ds, split.train, topt, &fh, &fc);

  const auto cal_scores = conformal::nonconformity_scores(ds, split.calibration, predictors, cfg);
  const auto test_scores = conformal::nonconformity_scores(ds, split.test, predictors, cfg);
  auto cal = conformal::calibrate(cal_scores, settings.epsilon);

  if (report != nullptr) {
    report->samples = ds.samples.size();
    report->train_episodes = split.train.size();
    report->calibration_scores = cal_scores.size();
    report->test_scores = test_scores.size();
    report->hdv_mse_initial = fh.epoch_mse.front();
    report->hdv_mse_final = fh.epoch_mse.back();
    report->cav_mse_initial = fc.epoch_mse.front();
    report->cav_mse_final = fc.epoch_mse.back();
    report->epsilon = settings.epsilon;
    report->C = cal.C;
    report->coverage = test_scores.empty() ? 0.0 : conformal::coverage(cal, test_scores);
  }

  conformal::PredictorDocument doc;
  doc.predictors = std::move(predictors);
  doc.calibration_size = cal_scores.size();
  doc.calibration = std::move(cal);
  return doc;
}

std::unique_ptr<policy::NominalPolicy> make_policy(const ExperimentConfig& cfg)
{
  if (cfg.policy.kind == PolicyKind::Checkpoint) {
    auto model = marl::read_checkpoint(cfg.policy.checkpoint);
    if (model.theta_cbf.size() != cfg.platoon.n) {
      throw std::invalid_argument("checkpoint was trained for a different platoon size");
    }
    return std::make_unique<marl::ActorPolicy>(std::move(model));
  }
  auto gains = cfg.policy.gains;
  gains.s_eq = cfg.scenario.s_eq;
  gains.v_eq = cfg.scenario.v_eq;
  gains.a_min = cfg.safety.a_min;
  gains.a_max = cfg.safety.a_max;
  return std::make_unique<policy::HeuristicPolicy>(gains);
}

Experiment::Experiment(ExperimentConfig cfg, bool with_predictor) : cfg_(std::move(cfg))
{
  cfg_.validate();
  nominal_ = make_policy(cfg_);
  params_ = cfg_.safety.params(cfg_.platoon);
  if (const auto* actor = dynamic_cast<const marl::ActorPolicy*>(nominal_.get())) {
    // Trained CBF gains travel with the checkpoint.
    params_ = actor->model().apply_gains(params_);
  }
  if (!with_predictor) {
    return;
  }
  if (!cfg_.predictor.path.empty()) {
    predictor_ = conformal::read_predictor(cfg_.predictor.path);
    if (!predictor_->calibration) {
      throw std::invalid_argument("predictor document " + cfg_.predictor.path.string() + " has no calibration");
    }
  } else {
    CalibrationReport rep;
    predictor_ = train_calibrated_predictor(cfg_.platoon, cfg_.predictor, *nominal_, &rep);
    report_ = rep;
  }
  estimator_ = std::make_unique<conformal::PredictorEstimator>(predictor_->predictors);
}

double Experiment::C() const
{
  return predictor_ && predictor_->calibration ? predictor_->calibration->C : 0.0;
}

ControllerSetup Experiment::setup() const
{
  ControllerSetup s;
  s.nominal = nominal_.get();
  s.estimator = estimator_.get();
  s.C = C();
  s.params = params_;
  return s;
}

RunRecord Experiment::run(const ScenarioSpec& spec, Benchmark benchmark) const
{
  return run_scenario(spec, benchmark, setup());
}

} // namespace coopsafe::harness
