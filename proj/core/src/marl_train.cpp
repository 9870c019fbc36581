#include "coopsafe/marl.hpp"

#include "coopsafe/safety_layer.hpp"
#include "coopsafe/scenario.hpp"
#include "coopsafe/text_format.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace coopsafe::marl {

TrainConfig TrainConfig::defaults()
{
  TrainConfig c;
  c.safety = safety::SafetyLayerParams::defaults(c.platoon);
  return c;
}

void TrainConfig::validate() const
{
  platoon.validate();
  safety.validate(platoon);
  rewards.validate(platoon);
  if (steps_per_episode == 0) {
    throw std::invalid_argument("train: steps_per_episode must be positive");
  }
  if (ppo_epochs < 1 || minibatch == 0) {
    throw std::invalid_argument("train: ppo_epochs and minibatch must be positive");
  }
  if (!(clip > 0.0) || !(discount > 0.0 && discount <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw std::invalid_argument("train: clip, discount or gae_lambda out of range");
  }
  if (!(actor_lr >= 0.0 && critic_lr >= 0.0 && gain_lr >= 0.0)) {
    throw std::invalid_argument("train: learning rates must be non-negative");
  }
  if (!(C >= 0.0) || !(gain_min > 0.0) || !(reward_scale > 0.0)) {
    throw std::invalid_argument("train: C must be >= 0, gain_min and reward_scale > 0");
  }
  const auto& d = disturbance;
  if (d.brake_min < 0.0 || d.brake_max < d.brake_min || d.duration_min < 0.0 || d.duration_max < d.duration_min ||
      d.start_min < 0.0 || d.start_max < d.start_min || d.spacing_noise < 0.0 || d.velocity_noise < 0.0) {
    throw std::invalid_argument("train: inconsistent disturbance ranges");
  }
}

double TrainResult::start_average(std::size_t window) const
{
  const std::size_t k = std::min(window, curve.size());
  if (k == 0) {
    return 0.0;
  }
  double s = 0.0;
  for (std::size_t e = 0; e < k; ++e) {
    s += curve[e].reward;
  }
  return s / static_cast<double>(k);
}

double TrainResult::end_average(std::size_t window) const
{
  const std::size_t k = std::min(window, curve.size());
  if (k == 0) {
    return 0.0;
  }
  double s = 0.0;
  for (std::size_t e = curve.size() - k; e < curve.size(); ++e) {
    s += curve[e].reward;
  }
  return s / static_cast<double>(k);
}

namespace {

void require_finite(double x, const char* what, std::size_t episode)
{
  if (!std::isfinite(x)) {
    throw std::runtime_error(std::string("train: non-finite ") + what + " in episode " + std::to_string(episode));
  }
}

/// Scales `g` in place so its 2-norm is at most `max_norm`; returns the norm before scaling.
double clip_norm(Eigen::VectorXd& g, double max_norm)
{
  const double norm = g.norm();
  if (max_norm > 0.0 && norm > max_norm) {
    g *= max_norm / norm;
  }
  return norm;
}

/// One episode's random start: braking event plus initial perturbation.
struct EpisodeDraw
{
  harness::ScenarioSpec spec;
  PlatoonState initial;
};

EpisodeDraw draw_episode(const TrainConfig& cfg, std::mt19937_64& rng)
{
  const auto& pc = cfg.platoon;
  const auto& d = cfg.disturbance;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Sequenced draws: argument evaluation order is unspecified.
  const double brake = uniform(d.brake_min, d.brake_max);
  const double duration = uniform(d.duration_min, d.duration_max);
  EpisodeDraw e{harness::braking_scenario(brake, duration), {}};
  e.spec.platoon = pc;
  e.spec.start = uniform(d.start_min, d.start_max);
  e.spec.horizon = static_cast<double>(cfg.steps_per_episode) * pc.dt;
  e.initial = e.spec.initial_state();
  for (auto& v : e.initial.vehicles) {
    v.spacing += d.spacing_noise * normal(rng);
    v.velocity = std::max(0.0, v.velocity + d.velocity_noise * normal(rng));
  }
  return e;
}

Rollout collect(const TrainConfig& cfg,
                const ActorCritic& model,
                const EpisodeDraw& draw,
                std::size_t episode,
                std::mt19937_64& rng)
{
  const auto& pc = cfg.platoon;
  const auto& spec = draw.spec;
  std::normal_distribution<double> normal(0.0, 1.0);
  PlatoonState state = draw.initial;

  const auto params = model.apply_gains(cfg.safety);
  const double log_std = model.clamped_log_std();
  const double sigma = std::exp(log_std);
  const std::size_t m = pc.cav_indices.size();
  safety::ModelEstimator estimator;

  Rollout out;
  out.stats.episode = episode;
  out.transitions.reserve(cfg.steps_per_episode * m);
  PlatoonState previous = state;
  std::vector<double> previous_accel(pc.n, 0.0);

  for (std::size_t k = 0; k < cfg.steps_per_episode; ++k) {
    std::vector<Observation> obs;
    std::vector<double> mu(m), sample(m), applied(m);
    for (std::size_t c = 0; c < m; ++c) {
      obs.push_back(observe(pc.cav_indices[c], state, pc));
      mu[c] = model.mean(obs[c]);
      sample[c] = mu[c] + sigma * normal(rng);
    }

    std::vector<std::optional<FilterSnapshot>> snaps(m);
    std::vector<double> filtered_mean = mu;
    if (cfg.safety_layer) {
      const safety::EstimationContext ctx{state, previous, previous_accel, sample, pc};
      const auto est = estimator.estimate(ctx);
      auto layer = safety::apply_safety_layer(state, sample, est, cfg.C, params, pc);
      out.stats.infeasible += static_cast<std::size_t>(layer.infeasible);
      for (std::size_t c = 0; c < m; ++c) {
        auto& r = layer.cavs[c];
        applied[c] = r.u;
        if (!r.fallback && !r.solution.active_set.empty()) {
          ++out.stats.active_filters;
        }
        snaps[c] = FilterSnapshot{std::move(r.qp), sample[c], params.gamma, params.a_min, params.a_max};
        filtered_mean[c] = filter_input(*snaps[c], mu[c], params.gamma).mean;
      }
    } else {
      for (std::size_t c = 0; c < m; ++c) {
        applied[c] = std::clamp(sample[c], cfg.safety.a_min, cfg.safety.a_max);
      }
    }

    const double head_accel = spec.head_accel(k, state.head_velocity);
    const auto overrides = spec.overrides(k);
    const auto accel = dynamics::accelerations(state, applied, pc, overrides);
    PlatoonState next = dynamics::integrate(state, accel, head_accel, pc.dt);
    const double reward = total_reward(next, pc, cfg.rewards);
    bool collided = false;
    for (const auto& v : next.vehicles) {
      collided = collided || v.spacing <= 0.0;
    }

    for (std::size_t c = 0; c < m; ++c) {
      Transition t;
      t.state = state;
      t.observation = std::move(obs[c]);
      t.cav = pc.cav_indices[c];
      t.u_rl = sample[c];
      // Without the filter the log-density is taken at the raw sample.
      t.u = cfg.safety_layer ? applied[c] : sample[c];
      t.reward = reward;
      t.next_state = next;
      // Episodes run to the horizon even after a collision: every per-step
      // reward is <= 0, so ending early would make crashing look attractive.
      t.terminal = false;
      t.log_prob = gaussian_log_prob(t.u, filtered_mean[c], log_std);
      t.filter = std::move(snaps[c]);
      out.transitions.push_back(std::move(t));
    }

    out.stats.reward += reward;
    ++out.stats.steps;
    previous = state;
    previous_accel = accel;
    state = std::move(next);
    out.stats.collision = out.stats.collision || collided;
  }
  return out;
}

} // namespace

void assign_advantages(const TrainConfig& cfg, const ActorCritic& model, std::vector<Transition>& tr)
{
  const std::size_t m = cfg.platoon.cav_indices.size();
  const std::size_t steps = tr.size() / m;
  if (steps == 0) {
    return;
  }
  std::vector<double> rewards(steps), values(steps + 1);
  for (std::size_t k = 0; k < steps; ++k) {
    rewards[k] = cfg.reward_scale * tr[k * m].reward;
    values[k] = model.value(tr[k * m].state);
  }
  const auto& last = tr[(steps - 1) * m];
  values[steps] = last.terminal ? 0.0 : model.value(last.next_state);
  const Advantages adv = gae(rewards, values, last.terminal, cfg.discount, cfg.gae_lambda);
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t c = 0; c < m; ++c) {
      auto& t = tr[k * m + c];
      t.value = values[k];
      t.advantage = adv.advantage[k];
      t.value_target = adv.value_target[k];
    }
  }
}

namespace {

struct Optimizers
{
  nn::Adam actor;  ///< actor weights followed by log_std
  nn::Adam critic;
  nn::Adam gains;
};

void update(const TrainConfig& cfg,
            ActorCritic& model,
            Optimizers& opt,
            const std::vector<Transition>& batch,
            double lr_scale,
            std::mt19937_64& rng,
            EpisodeStats& stats)
{
  const std::size_t total = batch.size();
  if (total == 0) {
    return;
  }
  opt.actor.set_learning_rate(cfg.actor_lr * lr_scale);
  opt.critic.set_learning_rate(cfg.critic_lr * lr_scale);
  opt.gains.set_learning_rate(cfg.gain_lr * lr_scale);

  // Normalized advantages.
  std::vector<double> adv(total);
  double mean = 0.0;
  for (std::size_t k = 0; k < total; ++k) {
    adv[k] = batch[k].advantage;
    mean += adv[k];
  }
  mean /= static_cast<double>(total);
  double var = 0.0;
  for (const double a : adv) {
    var += (a - mean) * (a - mean);
  }
  const double sd = std::sqrt(var / static_cast<double>(total));
  for (auto& a : adv) {
    a = (a - mean) / (sd + 1e-8);
  }

  const auto st_dim = static_cast<Eigen::Index>(model.critic.input_dim());
  const auto n_gain = static_cast<Eigen::Index>(model.theta_cbf.size());
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double actor_loss_sum = 0.0;
  double critic_loss_sum = 0.0;
  std::size_t minibatches = 0;

  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < total; begin += cfg.minibatch) {
      const std::size_t end = std::min(total, begin + cfg.minibatch);
      const auto b = static_cast<Eigen::Index>(end - begin);

      std::vector<Transition> mb;
      std::vector<double> a;
      mb.reserve(end - begin);
      a.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        mb.push_back(batch[order[k]]);
        a.push_back(adv[order[k]]);
      }
      ActorGradient ag = actor_gradient(model, mb, a, cfg.clip);
      const double actor_loss = ag.loss;
      require_finite(actor_loss, "actor loss", stats.episode);
      Eigen::VectorXd& d_gain = ag.d_gamma;
      const Eigen::Index n_actor = ag.d_actor.size();
      Eigen::VectorXd grad(n_actor + 1);
      grad.head(n_actor) = ag.d_actor;
      grad[n_actor] = ag.d_log_std;
      require_finite(grad.squaredNorm(), "actor gradient", stats.episode);
      require_finite(d_gain.squaredNorm(), "gain gradient", stats.episode);
      clip_norm(grad, cfg.max_grad_norm);

      Eigen::VectorXd flat(grad.size());
      flat.head(n_actor) = model.actor.params();
      flat[n_actor] = model.log_std;
      opt.actor.step(flat, grad);
      model.actor.set_params(flat.head(n_actor));
      model.log_std = std::clamp(flat[flat.size() - 1], kLogStdMin, kLogStdMax);

      stats.gain_grad_norm = std::max(stats.gain_grad_norm, d_gain.norm());
      if (cfg.safety_layer && cfg.train_gains) {
        Eigen::VectorXd gains = Eigen::Map<const Eigen::VectorXd>(model.theta_cbf.data(), n_gain);
        clip_norm(d_gain, cfg.max_grad_norm);
        opt.gains.step(gains, d_gain);
        for (Eigen::Index i = 0; i < n_gain; ++i) {
          model.theta_cbf[static_cast<std::size_t>(i)] = std::max(gains[i], cfg.gain_min);
        }
      }

      // Critic: regression on the GAE value targets.
      Eigen::MatrixXd xs(st_dim, b);
      Eigen::MatrixXd target(1, b);
      for (Eigen::Index c = 0; c < b; ++c) {
        const auto& t = batch[order[begin + static_cast<std::size_t>(c)]];
        xs.col(c) = encode_state(t.state, model.norm);
        target(0, c) = t.value_target;
      }
      nn::Mlp::Tape ctape;
      const Eigen::MatrixXd v = model.critic.forward(xs, ctape);
      const Eigen::MatrixXd err = v - target;
      const double closs = err.squaredNorm() / static_cast<double>(b);
      require_finite(closs, "critic loss", stats.episode);
      Eigen::VectorXd cgrad = Eigen::VectorXd::Zero(model.critic.num_params());
      model.critic.backward(ctape, err * (2.0 / static_cast<double>(b)), cgrad);
      clip_norm(cgrad, cfg.max_grad_norm);
      Eigen::VectorXd cflat = model.critic.params();
      opt.critic.step(cflat, cgrad);
      model.critic.set_params(cflat);

      actor_loss_sum += actor_loss;
      critic_loss_sum += closs;
      ++minibatches;
    }
  }
  stats.actor_loss = actor_loss_sum / static_cast<double>(minibatches);
  stats.critic_loss = critic_loss_sum / static_cast<double>(minibatches);
}

} // namespace

ActorGradient actor_gradient(const ActorCritic& model,
                             std::span<const Transition> batch,
                             std::span<const double> advantages,
                             double clip)
{
  if (batch.size() != advantages.size() || batch.empty()) {
    throw std::invalid_argument("actor_gradient: batch and advantages must be non-empty and of equal size");
  }
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto n_gain = static_cast<Eigen::Index>(model.theta_cbf.size());
  Eigen::MatrixXd x(model.actor.input_dim(), b);
  for (Eigen::Index c = 0; c < b; ++c) {
    x.col(c) = batch[static_cast<std::size_t>(c)].observation.encode(model.norm);
  }
  nn::Mlp::Tape tape;
  const Eigen::MatrixXd mu = model.actor.forward(x, tape);
  const double log_std = model.clamped_log_std();
  const double inv_var = std::exp(-2.0 * log_std);

  std::vector<double> logp(batch.size()), old(batch.size()), means(batch.size());
  std::vector<FilterSensitivity> sens(batch.size());
  ActorGradient out;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& t = batch[k];
    const double m = mu(0, static_cast<Eigen::Index>(k));
    if (t.filter) {
      const FilteredMean fm = filter_input(*t.filter, m, model.theta_cbf);
      means[k] = fm.mean;
      sens[k] = fm.sensitivity;
      out.degenerate += fm.sensitivity.degenerate ? 1 : 0;
    } else {
      means[k] = m;
      sens[k].du_safe_dgamma = Eigen::VectorXd::Zero(n_gain);
    }
    logp[k] = gaussian_log_prob(t.u, means[k], log_std);
    old[k] = t.log_prob;
  }
  std::vector<double> dlogp;
  out.loss = ppo_clip_loss(logp, old, advantages, clip, &dlogp);

  Eigen::MatrixXd d_mu(1, b);
  out.d_gamma = Eigen::VectorXd::Zero(n_gain);
  const bool log_std_free = model.log_std > kLogStdMin && model.log_std < kLogStdMax;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const double diff = batch[k].u - means[k];
    const double dl_dm = dlogp[k] * diff * inv_var;
    if (log_std_free) {
      out.d_log_std += dlogp[k] * (diff * diff * inv_var - 1.0);
    }
    const SafetyGradient g = backprop_through_safety(dl_dm, sens[k]);
    d_mu(0, static_cast<Eigen::Index>(k)) = g.d_u_rl;
    out.d_gamma += g.d_gamma;
  }
  out.d_actor = Eigen::VectorXd::Zero(model.actor.num_params());
  model.actor.backward(tape, d_mu, out.d_actor);
  return out;
}

Rollout rollout(const TrainConfig& cfg, const ActorCritic& model, std::mt19937_64& rng)
{
  return collect(cfg, model, draw_episode(cfg, rng), 0, rng);
}

TrainResult train(const TrainConfig& cfg)
{
  cfg.validate();
  TrainResult result;
  result.model = ActorCritic::create(cfg.platoon, cfg.safety, cfg.shape, cfg.seed);
  auto& model = result.model;

  // Environment and minibatch shuffling draw from a stream separate from the weight init.
  std::seed_seq seq{cfg.seed, std::uint64_t{0x9e3779b97f4a7c15ULL}};
  std::mt19937_64 rng(seq);
  Optimizers opt{nn::Adam(model.actor.num_params() + 1, cfg.actor_lr),
                 nn::Adam(model.critic.num_params(), cfg.critic_lr),
                 nn::Adam(static_cast<Eigen::Index>(model.theta_cbf.size()), cfg.gain_lr)};

  std::vector<EpisodeDraw> pool;
  for (std::size_t k = 0; k < cfg.disturbance.pool; ++k) {
    pool.push_back(draw_episode(cfg, rng));
  }

  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    const EpisodeDraw draw = pool.empty() ? draw_episode(cfg, rng) : pool[ep % pool.size()];
    Rollout r = collect(cfg, model, draw, ep, rng);
    assign_advantages(cfg, model, r.transitions);
    const double lr_scale =
        cfg.linear_decay ? 1.0 - static_cast<double>(ep) / static_cast<double>(cfg.episodes) : 1.0;
    update(cfg, model, opt, r.transitions, lr_scale, rng, r.stats);
    r.stats.log_std = model.log_std;
    require_finite(r.stats.reward, "episode reward", ep);
    result.curve.push_back(r.stats);
  }
  return result;
}

std::string curve_to_csv(std::span<const EpisodeStats> curve)
{
  std::string out = "episode,reward,steps,collision,active_filters,infeasible,actor_loss,critic_loss,gain_grad_norm,log_std\n";
  for (const auto& e : curve) {
    out += text::join_csv({std::to_string(e.episode),
                           text::format_double(e.reward),
                           std::to_string(e.steps),
                           e.collision ? "1" : "0",
                           std::to_string(e.active_filters),
                           std::to_string(e.infeasible),
                           text::format_double(e.actor_loss),
                           text::format_double(e.critic_loss),
                           text::format_double(e.gain_grad_norm),
                           text::format_double(e.log_std)});
    out += '\n';
  }
  return out;
}

} // namespace coopsafe::marl
