#include "coopsafe/marl.hpp"

#include "coopsafe/text_format.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace coopsafe::marl {

Eigen::VectorXd Observation::encode(const Normalization& norm) const
{
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * slots() + 2));
  for (std::size_t k = 0; k < slots(); ++k) {
    if (valid[k] == 0) {
      continue;
    }
    const auto o = static_cast<Eigen::Index>(3 * k);
    x[o] = (spacing[k] - norm.s_ref) / norm.s_scale;
    x[o + 1] = (velocity[k] - norm.v_ref) / norm.v_scale;
    x[o + 2] = 1.0;
  }
  if (head_valid) {
    x[x.size() - 2] = (head_velocity - norm.v_ref) / norm.v_scale;
    x[x.size() - 1] = 1.0;
  }
  return x;
}

Observation observe(std::size_t ego, const PlatoonState& state, const PlatoonConfig& cfg)
{
  if (!cfg.is_cav(ego)) {
    throw std::invalid_argument("observe: vehicle " + std::to_string(ego) + " is not a CAV");
  }
  const auto r = static_cast<long>(cfg.comm_range);
  const auto slots = static_cast<std::size_t>(2 * r + 1);
  Observation obs;
  obs.ego = ego;
  obs.spacing.assign(slots, 0.0);
  obs.velocity.assign(slots, 0.0);
  obs.valid.assign(slots, 0);
  for (long off = -r; off <= r; ++off) {
    const long j = static_cast<long>(ego) + off;
    if (j < 1 || j > static_cast<long>(cfg.n)) {
      continue;
    }
    const auto k = static_cast<std::size_t>(off + r);
    obs.spacing[k] = state.spacing(static_cast<std::size_t>(j));
    obs.velocity[k] = state.velocity(static_cast<std::size_t>(j));
    obs.valid[k] = 1;
  }
  if (ego <= cfg.comm_range) {
    obs.head_velocity = state.head_velocity;
    obs.head_valid = true;
  }
  return obs;
}

int observation_dim(const PlatoonConfig& cfg)
{
  return static_cast<int>(3 * (2 * cfg.comm_range + 1) + 2);
}

Eigen::VectorXd encode_state(const PlatoonState& state, const Normalization& norm)
{
  const auto n = static_cast<Eigen::Index>(state.size());
  Eigen::VectorXd x(2 * n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = state.vehicles[static_cast<std::size_t>(i)];
    x[2 * i] = (v.spacing - norm.s_ref) / norm.s_scale;
    x[2 * i + 1] = (v.velocity - norm.v_ref) / norm.v_scale;
  }
  x[2 * n] = (state.head_velocity - norm.v_ref) / norm.v_scale;
  return x;
}

int state_dim(const PlatoonConfig& cfg)
{
  return static_cast<int>(2 * cfg.n + 1);
}

void RewardWeights::validate(const PlatoonConfig& cfg) const
{
  if (w_global < 0.0 || w_local < 0.0 || w_efficiency < 0.0 || w_safety < 0.0) {
    throw std::invalid_argument("RewardWeights: weights must be non-negative");
  }
  if (std::abs(w_global + w_local - 1.0) > 1e-12) {
    throw std::invalid_argument("RewardWeights: w_global + w_local must equal 1");
  }
  if (!k_stability.empty()) {
    if (k_stability.size() != cfg.n) {
      throw std::invalid_argument("RewardWeights: k_stability needs one entry per vehicle");
    }
    for (const double k : k_stability) {
      if (k < 0.0 || k > 1.0) {
        throw std::invalid_argument("RewardWeights: k_stability entries must lie in [0, 1]");
      }
    }
  }
}

double global_reward(const PlatoonState& state, const PlatoonConfig& cfg, const RewardWeights& w)
{
  const std::size_t f = cfg.first_cav();
  const double v_ref = state.velocity(f - 1);
  const double d = state.velocity(f) - v_ref;
  double r = -d * d;
  const auto ahead = cfg.preceding_in_range(f);
  for (std::size_t j = 1; j <= cfg.n; ++j) {
    if (cfg.is_cav(j) || std::find(ahead.begin(), ahead.end(), j) != ahead.end()) {
      continue;
    }
    const double e = state.velocity(j) - v_ref;
    r -= w.k(j) * e * e;
  }
  return r;
}

double efficiency_reward(double s, double v)
{
  if (v <= 0.0) {
    return -1.0;
  }
  return s / v >= 2.5 ? -1.0 : 0.0;
}

double safety_reward(double s, double v, double v_prev)
{
  if (s <= 0.0) {
    // Overlapping vehicles: the formula's sign flips, but the gap is already gone.
    return std::log(kMinTtc / 4.0);
  }
  const double closing = v_prev - v;
  if (closing == 0.0) {
    return 0.0;
  }
  const double ttc = -s / closing;
  if (!(ttc >= 0.0 && ttc <= 4.0)) {
    return 0.0;
  }
  return std::log(std::max(ttc, kMinTtc) / 4.0);
}

double local_reward(std::size_t cav, const PlatoonState& state, const RewardWeights& w)
{
  const double s = state.spacing(cav);
  const double v = state.velocity(cav);
  return w.w_efficiency * efficiency_reward(s, v) + w.w_safety * safety_reward(s, v, state.velocity(cav - 1));
}

double total_reward(const PlatoonState& state, const PlatoonConfig& cfg, const RewardWeights& w)
{
  double local = 0.0;
  for (const auto j : cfg.cav_indices) {
    local += local_reward(j, state, w);
  }
  return w.w_global * global_reward(state, cfg, w) + w.w_local * local;
}

double ppo_clip_loss(std::span<const double> logp,
                     std::span<const double> logp_old,
                     std::span<const double> advantages,
                     double epsilon,
                     std::vector<double>* grad)
{
  if (logp.size() != logp_old.size() || logp.size() != advantages.size()) {
    throw std::invalid_argument("ppo_clip_loss: size mismatch");
  }
  if (logp.empty()) {
    throw std::invalid_argument("ppo_clip_loss: empty batch");
  }
  if (grad != nullptr) {
    grad->assign(logp.size(), 0.0);
  }
  const double count = static_cast<double>(logp.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logp.size(); ++k) {
    const double ratio = std::exp(logp[k] - logp_old[k]);
    const double a = advantages[k];
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * a;
    if (unclipped <= clipped) {
      sum += unclipped;
      if (grad != nullptr) {
        (*grad)[k] = -unclipped / count;
      }
    } else {
      sum += clipped;
    }
  }
  return -sum / count;
}

double critic_loss(std::span<const double> rewards,
                   std::span<const double> values,
                   std::span<const double> next_values,
                   std::span<const std::uint8_t> terminal,
                   double gamma)
{
  const auto n = rewards.size();
  if (values.size() != n || next_values.size() != n || terminal.size() != n) {
    throw std::invalid_argument("critic_loss: size mismatch");
  }
  if (n == 0) {
    throw std::invalid_argument("critic_loss: empty batch");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double boot = terminal[k] != 0 ? 0.0 : gamma * next_values[k];
    const double delta = rewards[k] + boot - values[k];
    sum += delta * delta;
  }
  return sum / static_cast<double>(n);
}

Advantages gae(std::span<const double> rewards,
               std::span<const double> values,
               bool terminal_last,
               double gamma,
               double lambda)
{
  const auto n = rewards.size();
  if (values.size() != n + 1) {
    throw std::invalid_argument("gae: values needs one bootstrap entry");
  }
  Advantages out;
  out.advantage.assign(n, 0.0);
  out.value_target.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const bool last = k + 1 == n;
    const double next = (last && terminal_last) ? 0.0 : values[k + 1];
    const double delta = rewards[k] + gamma * next - values[k];
    running = delta + ((last && terminal_last) ? 0.0 : gamma * lambda * running);
    out.advantage[k] = running;
    out.value_target[k] = running + values[k];
  }
  return out;
}

double gaussian_log_prob(double x, double mean, double log_std)
{
  const double z = (x - mean) * std::exp(-log_std);
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

FilteredMean filter_input(const FilterSnapshot& snap, double u_rl, std::span<const double> gamma)
{
  const auto& sqp = snap.qp;
  const std::size_t n = snap.gamma.size();
  if (gamma.size() != n) {
    throw std::invalid_argument("filter_input: gain vector has the wrong size");
  }
  qp::QpProblem p = sqp.problem;
  const Eigen::Index col = sqp.ego_u_rl_column();
  p.q += p.dq_du_rl.col(col) * (u_rl - snap.u_rl);
  for (std::size_t c = 0; c < sqp.theta_vehicles.size(); ++c) {
    const std::size_t v = sqp.theta_vehicles[c];
    p.q += p.dq_dtheta.col(static_cast<Eigen::Index>(c)) * (gamma[v - 1] - snap.gamma[v - 1]);
  }

  FilteredMean out;
  out.sensitivity.du_safe_dgamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const qp::QpSolution sol = qp::solve(p);
  if (!sol.optimal()) {
    out.mean = std::clamp(u_rl, snap.a_min, snap.a_max);
    out.sensitivity.infeasible = true;
    out.sensitivity.du_safe_du_rl = (u_rl > snap.a_min && u_rl < snap.a_max) ? 0.0 : -1.0;
    return out;
  }
  out.mean = u_rl + sol.w[sqp.ego_index()];
  if (sol.active_set.empty()) {
    return out;
  }
  out.sensitivity.active = true;
  const qp::Sensitivity sens = qp::differentiate(p, sol);
  out.sensitivity.degenerate = sens.degenerate || qp::weakly_active(p, sol);
  out.sensitivity.du_safe_du_rl = sens.dw_du_rl(sqp.ego_index(), col);
  for (std::size_t c = 0; c < sqp.theta_vehicles.size(); ++c) {
    out.sensitivity.du_safe_dgamma[static_cast<Eigen::Index>(sqp.theta_vehicles[c] - 1)] =
        sens.dw_dtheta(sqp.ego_index(), static_cast<Eigen::Index>(c));
  }
  return out;
}

SafetyGradient backprop_through_safety(double dl_du, const FilterSensitivity& s)
{
  SafetyGradient g;
  g.d_u_rl = dl_du * (1.0 + s.du_safe_du_rl);
  g.d_gamma = dl_du * s.du_safe_dgamma;
  g.degenerate = s.degenerate;
  return g;
}

ActorCritic ActorCritic::create(const PlatoonConfig& cfg,
                                const safety::SafetyLayerParams& params,
                                const NetworkShape& shape,
                                std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::vector<int> actor_sizes{observation_dim(cfg)};
  actor_sizes.insert(actor_sizes.end(), shape.actor_hidden.begin(), shape.actor_hidden.end());
  actor_sizes.push_back(1);
  std::vector<int> critic_sizes{state_dim(cfg)};
  critic_sizes.insert(critic_sizes.end(), shape.critic_hidden.begin(), shape.critic_hidden.end());
  critic_sizes.push_back(1);

  ActorCritic ac;
  ac.actor = nn::Mlp(actor_sizes, rng);
  ac.critic = nn::Mlp(critic_sizes, rng);
  const std::size_t last = ac.actor.layers() - 1;
  ac.actor.set_layer(last, ac.actor.weight(last) * shape.output_init_scale, ac.actor.bias(last));
  ac.log_std = std::clamp(shape.init_log_std, kLogStdMin, kLogStdMax);
  ac.theta_cbf = params.gamma;
  if (ac.theta_cbf.size() != cfg.n) {
    throw std::invalid_argument("ActorCritic::create: safety params have the wrong vehicle count");
  }
  return ac;
}

double ActorCritic::clamped_log_std() const
{
  return std::clamp(log_std, kLogStdMin, kLogStdMax);
}

double ActorCritic::mean(const Observation& obs) const
{
  return actor.forward_one(obs.encode(norm))[0];
}

double ActorCritic::value(const PlatoonState& state) const
{
  return critic.forward_one(encode_state(state, norm))[0];
}

safety::SafetyLayerParams ActorCritic::apply_gains(safety::SafetyLayerParams params) const
{
  if (params.gamma.size() != theta_cbf.size()) {
    throw std::invalid_argument("apply_gains: vehicle count mismatch");
  }
  params.gamma = theta_cbf;
  return params;
}

std::string checkpoint_to_string(const ActorCritic& model)
{
  nlohmann::json j;
  j["format"] = "coopsafe.policy";
  j["version"] = 1;
  j["log_std"] = model.log_std;
  j["theta_cbf"] = model.theta_cbf;
  j["normalization"] = {{"s_ref", model.norm.s_ref},
                        {"v_ref", model.norm.v_ref},
                        {"s_scale", model.norm.s_scale},
                        {"v_scale", model.norm.v_scale}};
  j["actor"] = detail::mlp_to_json(model.actor);
  j["critic"] = detail::mlp_to_json(model.critic);
  return j.dump(1) + "\n";
}

ActorCritic checkpoint_from_string(const std::string& text)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "coopsafe.policy") {
    throw std::runtime_error("not a policy checkpoint");
  }
  const int version = j.value("version", 0);
  if (version != 1) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  ActorCritic ac;
  ac.actor = detail::mlp_from_json(j.at("actor"));
  ac.critic = detail::mlp_from_json(j.at("critic"));
  ac.log_std = j.at("log_std").get<double>();
  ac.theta_cbf = j.at("theta_cbf").get<std::vector<double>>();
  const auto& nj = j.at("normalization");
  ac.norm = Normalization{nj.at("s_ref").get<double>(),
                          nj.at("v_ref").get<double>(),
                          nj.at("s_scale").get<double>(),
                          nj.at("v_scale").get<double>()};
  if (ac.actor.output_dim() != 1 || ac.critic.output_dim() != 1) {
    throw std::runtime_error("checkpoint: actor and critic must have one output");
  }
  return ac;
}

void write_checkpoint(const ActorCritic& model, const std::filesystem::path& path)
{
  text::write_file(path, checkpoint_to_string(model));
}

ActorCritic read_checkpoint(const std::filesystem::path& path)
{
  return checkpoint_from_string(text::read_file(path));
}

std::vector<double> ActorPolicy::act(const PlatoonState& state, const PlatoonConfig& cfg) const
{
  if (model_.actor.input_dim() != observation_dim(cfg)) {
    throw std::invalid_argument("ActorPolicy: checkpoint does not match the platoon's observation size");
  }
  std::vector<double> u;
  u.reserve(cfg.cav_indices.size());
  for (const auto j : cfg.cav_indices) {
    u.push_back(model_.mean(observe(j, state, cfg)));
  }
  return u;
}

} // namespace coopsafe::marl
