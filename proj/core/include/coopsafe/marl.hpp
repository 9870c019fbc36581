#pragma once

/**
 * @file
 * @brief Multi-agent PPO pieces: observations, rewards, actor/critic networks,
 *        clipped-surrogate and TD losses, and the gradient path through the
 *        safety QP.
 *
 * Both CAVs share one Gaussian actor. The log-probability of an applied input
 * u is evaluated under N(m, sigma^2), where m = mu + u_safe(mu, gamma) is the
 * policy mean pushed through the ego safety QP. Gradients therefore reach the
 * actor through (1 + du_safe/du_RL) and the barrier gains through du_safe/dgamma.
 */

#include "coopsafe/dynamics.hpp"
#include "coopsafe/nn.hpp"
#include "coopsafe/policy.hpp"
#include "coopsafe/qp.hpp"
#include "coopsafe/safety.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coopsafe::marl {

using dynamics::PlatoonConfig;
using dynamics::PlatoonState;

/// Reference point and scales used to normalize network inputs.
struct Normalization
{
  double s_ref = 20.0;
  double v_ref = 15.0;
  double s_scale = 10.0;
  double v_scale = 5.0;
};

/// Local view of one CAV: slots for offsets -R..R around the ego (front to
/// back), each holding (spacing, velocity) of that vehicle, plus the head velocity.
struct Observation
{
  std::size_t ego = 0;
  std::vector<double> spacing;  ///< per slot, 0 when invalid
  std::vector<double> velocity; ///< per slot, 0 when invalid
  std::vector<std::uint8_t> valid;
  double head_velocity = 0.0;
  bool head_valid = false;

  std::size_t slots() const { return spacing.size(); }
  /// Network input: per slot (normalized s, normalized v, mask), then head v and its mask.
  Eigen::VectorXd encode(const Normalization& norm) const;
};

Observation observe(std::size_t ego, const PlatoonState& state, const PlatoonConfig& cfg);

/// Length of Observation::encode() for the config.
int observation_dim(const PlatoonConfig& cfg);

/// Centralized critic input: normalized (s_i, v_i) for every vehicle, then v_0.
Eigen::VectorXd encode_state(const PlatoonState& state, const Normalization& norm);
int state_dim(const PlatoonConfig& cfg);

struct RewardWeights
{
  double w_global = 0.1;
  double w_local = 0.9;
  double w_efficiency = 1.0;
  double w_safety = 1.0;
  std::vector<double> k_stability; ///< entry i-1; empty means 1 for every vehicle

  double k(std::size_t i) const { return k_stability.empty() ? 1.0 : k_stability.at(i - 1); }
  void validate(const PlatoonConfig& cfg) const;
};

/// -(v_f - v_{f-1})^2 - sum k_j (v_j - v_{f-1})^2 over HDVs j outside the
/// preceding range of the first CAV f.
double global_reward(const PlatoonState& state, const PlatoonConfig& cfg, const RewardWeights& w = {});

/// -1 when the time headway s/v is at least 2.5 s (or v <= 0), else 0.
double efficiency_reward(double s, double v);

/// Time-to-collision below which safety_reward clips the logarithm.
inline constexpr double kMinTtc = 1e-3;

/// log(TTC/4) when 0 <= TTC <= 4 with TTC = -s/(v_prev - v), else 0.
/// TTC is floored at kMinTtc so a touching gap stays finite; s <= 0 (collision)
/// counts as TTC = 0.
double safety_reward(double s, double v, double v_prev);

double local_reward(std::size_t cav, const PlatoonState& state, const RewardWeights& w);

/// w_global R_global + w_local sum over CAVs of the local reward.
double total_reward(const PlatoonState& state, const PlatoonConfig& cfg, const RewardWeights& w = {});

/// Mean of min(r A, clip(r, 1-eps, 1+eps) A), negated, with r = exp(logp - logp_old).
/// Writes dloss/dlogp into `grad` when non-null.
double ppo_clip_loss(std::span<const double> logp,
                     std::span<const double> logp_old,
                     std::span<const double> advantages,
                     double epsilon,
                     std::vector<double>* grad = nullptr);

/// Mean squared TD error (r + gamma (1 - done) V(x') - V(x))^2.
double critic_loss(std::span<const double> rewards,
                   std::span<const double> values,
                   std::span<const double> next_values,
                   std::span<const std::uint8_t> terminal,
                   double gamma);

struct Advantages
{
  std::vector<double> advantage;
  std::vector<double> value_target; ///< advantage + value
};

/// Generalized advantage estimation over one trajectory. `values` has one
/// more entry than `rewards` (bootstrap value, ignored when `terminal_last`).
Advantages gae(std::span<const double> rewards,
               std::span<const double> values,
               bool terminal_last,
               double gamma,
               double lambda);

/// Diagonal Gaussian log-density.
double gaussian_log_prob(double x, double mean, double log_std);

/// Ego QP as solved at rollout time, kept so the filtered mean can be
/// recomputed for new (mu, gamma) by shifting q along its affine Jacobians.
struct FilterSnapshot
{
  safety::SafetyQp qp;
  double u_rl = 0.0;           ///< ego u_RL the stored q was built with
  std::vector<double> gamma;   ///< gains the stored q was built with (entry i-1)
  double a_min = -5.0;
  double a_max = 5.0;
};

/// Derivatives of the filtered input u = u_RL + u_safe.
struct FilterSensitivity
{
  double du_safe_du_rl = 0.0;
  Eigen::VectorXd du_safe_dgamma; ///< entry i-1 per vehicle
  bool active = false;      ///< some QP row binds
  bool degenerate = false;  ///< weakly active row, sensitivities are a subgradient
  bool infeasible = false;  ///< QP infeasible, clamp fallback used
};

struct FilteredMean
{
  double mean = 0.0; ///< u_RL + u_safe(u_RL, gamma)
  FilterSensitivity sensitivity;
};

/// Re-solves the snapshot QP with ego input `u_rl` and gains `gamma`.
/// Infeasible problems fall back to clamping (derivative 1 inside the bounds, 0 outside).
FilteredMean filter_input(const FilterSnapshot& snap, double u_rl, std::span<const double> gamma);

struct SafetyGradient
{
  double d_u_rl = 0.0;
  Eigen::VectorXd d_gamma;
  bool degenerate = false;
};

/// Chain rule through u = u_RL + u_safe(u_RL, gamma):
/// dl/du_RL = dl/du (1 + du_safe/du_RL), dl/dgamma = dl/du du_safe/dgamma.
SafetyGradient backprop_through_safety(double dl_du, const FilterSensitivity& s);

struct NetworkShape
{
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  double init_log_std = 0.0;
  double output_init_scale = 0.01; ///< shrinks the last actor layer so mu starts near 0
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct ActorCritic
{
  nn::Mlp actor;   ///< observation -> mean
  nn::Mlp critic;  ///< encoded global state -> value
  double log_std = 0.0;
  std::vector<double> theta_cbf; ///< gamma per vehicle (entry i-1)
  Normalization norm;

  static ActorCritic create(const PlatoonConfig& cfg,
                            const safety::SafetyLayerParams& params,
                            const NetworkShape& shape,
                            std::uint64_t seed);

  double clamped_log_std() const;
  double mean(const Observation& obs) const;
  double value(const PlatoonState& state) const;

  /// Safety parameters with gamma replaced by theta_cbf.
  safety::SafetyLayerParams apply_gains(safety::SafetyLayerParams params) const;
};

/// Checkpoint document ("coopsafe.policy", version 1).
std::string checkpoint_to_string(const ActorCritic& model);
ActorCritic checkpoint_from_string(const std::string& text);
void write_checkpoint(const ActorCritic& model, const std::filesystem::path& path);
ActorCritic read_checkpoint(const std::filesystem::path& path);

/// Deterministic execution of a trained actor: every CAV applies the mean.
class ActorPolicy final : public policy::NominalPolicy
{
public:
  explicit ActorPolicy(ActorCritic model) : model_(std::move(model)) {}
  std::vector<double> act(const PlatoonState& state, const PlatoonConfig& cfg) const override;
  std::string name() const override { return "actor"; }
  const ActorCritic& model() const { return model_; }

private:
  ActorCritic model_;
};

/// One agent-step of experience.
struct Transition
{
  PlatoonState state;
  Observation observation;
  std::size_t cav = 0;
  double u_rl = 0.0;    ///< sampled nominal input
  double u = 0.0;       ///< applied input u_RL + u_safe
  double reward = 0.0;  ///< shared team reward
  PlatoonState next_state;
  bool terminal = false;
  double log_prob = 0.0; ///< under the behaviour policy
  double value = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
  std::optional<FilterSnapshot> filter; ///< empty when trained without the safety layer
};

struct ActorGradient
{
  double loss = 0.0;
  Eigen::VectorXd d_actor;  ///< flat actor parameters
  double d_log_std = 0.0;
  Eigen::VectorXd d_gamma;  ///< entry i-1 per vehicle
  std::size_t degenerate = 0; ///< samples whose QP sensitivity is a subgradient
};

/// Clipped-surrogate loss of `batch` under `model` and its gradient. Samples
/// with a filter snapshot are scored around the filtered mean; the others
/// around the raw mean.
ActorGradient actor_gradient(const ActorCritic& model,
                             std::span<const Transition> batch,
                             std::span<const double> advantages,
                             double clip);

/// Random disturbance drawn for each training episode: a head braking event
/// followed by recovery, on top of a perturbed equilibrium start.
struct EpisodeDisturbance
{
  double brake_min = 0.5;     ///< m/s^2
  double brake_max = 3.0;
  double duration_min = 1.0;  ///< s
  double duration_max = 3.0;
  double start_min = 1.0;     ///< s
  double start_max = 6.0;
  double spacing_noise = 1.0; ///< std of the initial spacing perturbation (m)
  double velocity_noise = 0.5; ///< std of the initial velocity perturbation (m/s)
  /// Episodes cycle through this many pre-drawn disturbances (0 = fresh draw
  /// every episode). With a pool equal to the averaging window, moving
  /// averages of the reward curve compare the same set of disturbances.
  std::size_t pool = 10;
};

struct TrainConfig
{
  PlatoonConfig platoon;
  safety::SafetyLayerParams safety;
  RewardWeights rewards;
  NetworkShape shape;
  EpisodeDisturbance disturbance;

  std::size_t episodes = 50;
  std::size_t steps_per_episode = 1000;
  std::uint64_t seed = 1;
  bool safety_layer = true;
  double C = 0.0;                 ///< conformal margin used by the in-loop QPs
  bool train_gains = true;        ///< update theta_cbf
  double gain_min = 0.05;         ///< projection floor for theta_cbf

  int ppo_epochs = 10;
  std::size_t minibatch = 256;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double gain_lr = 3e-4;
  bool linear_decay = true;
  double clip = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  double max_grad_norm = 0.5;
  double reward_scale = 0.05;     ///< applied to rewards before GAE; the curve stays unscaled

  static TrainConfig defaults();
  void validate() const;
};

struct EpisodeStats
{
  std::size_t episode = 0;
  double reward = 0.0;       ///< undiscounted episode return
  std::size_t steps = 0;
  bool collision = false;
  std::size_t active_filters = 0; ///< agent-steps where a QP row bound
  std::size_t infeasible = 0;
  double actor_loss = 0.0;   ///< mean over minibatches
  double critic_loss = 0.0;
  double gain_grad_norm = 0.0; ///< max over minibatches of ||dl/dtheta_cbf||
  double log_std = 0.0;
};

struct TrainResult
{
  ActorCritic model;
  std::vector<EpisodeStats> curve;

  /// Mean of the first / last `window` episode rewards.
  double start_average(std::size_t window) const;
  double end_average(std::size_t window) const;
};

struct Rollout
{
  std::vector<Transition> transitions; ///< step-major, CAVs in cav_indices order
  EpisodeStats stats;
};

/// One training episode with a freshly drawn disturbance, collected with the
/// stochastic policy (and the safety layer when enabled).
Rollout rollout(const TrainConfig& cfg, const ActorCritic& model, std::mt19937_64& rng);

/// Fills value, advantage and value_target. All agents share the team reward
/// and the centralized value, so one GAE pass serves every agent.
void assign_advantages(const TrainConfig& cfg, const ActorCritic& model, std::vector<Transition>& transitions);

/// Runs PPO with the safety layer inside the interaction loop. Throws
/// std::runtime_error when a loss or gradient becomes non-finite.
TrainResult train(const TrainConfig& cfg);

/// Episode curve as CSV: episode,reward,steps,collision,active_filters,infeasible,actor_loss,critic_loss,gain_grad_norm,log_std.
std::string curve_to_csv(std::span<const EpisodeStats> curve);

} // namespace coopsafe::marl
