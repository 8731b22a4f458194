#include "msg/compose.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <stdexcept>

namespace msg {

namespace {

const char* const kStrategyNames[] = {"ensemble", "flow", "flow-mcmc"};
const char* const kWeightingNames[] = {"constant",   "threshold",      "linear",        "exponential",
                                       "logvar-full", "logvar-grouped", "particle-full", "particle-grouped"};

}  // namespace

std::string to_string(Strategy s) { return kStrategyNames[static_cast<int>(s)]; }

Strategy strategy_from_string(const std::string& s) {
  for (int i = 0; i < 3; ++i) {
    if (s == kStrategyNames[i]) return static_cast<Strategy>(i);
  }
  throw std::invalid_argument("unknown strategy '" + s + "' (expected ensemble, flow or flow-mcmc)");
}

std::string to_string(Weighting w) { return kWeightingNames[static_cast<int>(w)]; }

Weighting weighting_from_string(const std::string& s) {
  for (int i = 0; i < 8; ++i) {
    if (s == kWeightingNames[i]) return static_cast<Weighting>(i);
  }
  std::string valid;
  for (const char* n : kWeightingNames) valid += std::string(valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown weighting '" + s + "' (expected one of: " + valid + ")");
}

const std::vector<Weighting>& all_weightings() {
  static const std::vector<Weighting> all = {
      Weighting::kConstant,   Weighting::kThreshold,      Weighting::kLinear,       Weighting::kExponential,
      Weighting::kLogvarFull, Weighting::kLogvarGrouped, Weighting::kParticleFull, Weighting::kParticleGrouped};
  return all;
}

CompositionConfig CompositionConfig::make(Strategy s, Weighting w) {
  CompositionConfig c;
  c.strategy = s;
  c.mcmc_steps = s == Strategy::kFlowMcmc ? 4 : 0;
  c.weighting.kind = w;
  return c;
}

void CompositionConfig::validate() const {
  if (flow_steps < 1) throw std::invalid_argument("flow steps must be >= 1");
  if ((strategy == Strategy::kFlowMcmc) != (mcmc_steps >= 1)) {
    throw std::invalid_argument("MCMC steps must be >= 1 exactly when the strategy is flow-mcmc");
  }
  if (mcmc_steps < 0 || !(mcmc_step_scale >= 0.0) || !(mcmc_noise >= 0.0)) {
    throw std::invalid_argument("invalid MCMC parameters");
  }
  if (matched_steps && strategy != Strategy::kFlow) {
    throw std::invalid_argument("matched steps apply to plain flow composition only");
  }
  if (is_particle(weighting.kind) && weighting.particles < 2) {
    throw std::invalid_argument("particle weighting needs at least 2 particles");
  }
  if (!(switch_threshold > 0.0 && switch_threshold <= 1.0)) throw std::invalid_argument("switch threshold outside (0, 1]");
}

nlohmann::json CompositionConfig::to_json() const {
  return {{"strategy", to_string(strategy)},
          {"flow_steps", flow_steps},
          {"mcmc_steps", mcmc_steps},
          {"mcmc_step_scale", mcmc_step_scale},
          {"mcmc_noise", mcmc_noise},
          {"weighting", to_string(weighting.kind)},
          {"particles", weighting.particles},
          {"sample_matching", sample_matching},
          {"matched_steps", matched_steps},
          {"virtual_poses", virtual_poses},
          {"switch_threshold", switch_threshold}};
}

CompositionConfig CompositionConfig::from_json(const nlohmann::json& j, CompositionConfig c) {
  if (j.contains("strategy")) {
    c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    if (!j.contains("mcmc_steps")) c.mcmc_steps = c.strategy == Strategy::kFlowMcmc ? 4 : 0;
  }
  c.flow_steps = j.value("flow_steps", c.flow_steps);
  c.mcmc_steps = j.value("mcmc_steps", c.mcmc_steps);
  c.mcmc_step_scale = j.value("mcmc_step_scale", c.mcmc_step_scale);
  c.mcmc_noise = j.value("mcmc_noise", c.mcmc_noise);
  if (j.contains("weighting")) c.weighting.kind = weighting_from_string(j.at("weighting").get<std::string>());
  c.weighting.particles = j.value("particles", c.weighting.particles);
  c.sample_matching = j.value("sample_matching", c.sample_matching);
  c.matched_steps = j.value("matched_steps", c.matched_steps);
  c.virtual_poses = j.value("virtual_poses", c.virtual_poses);
  c.switch_threshold = j.value("switch_threshold", c.switch_threshold);
  c.validate();
  return c;
}

std::vector<VectorXd> compute_weights(const WeightingStrategy& strategy, const StateSpace& space, int streams,
                                      double progress, std::span<const VectorXd> logvars,
                                      std::span<const VectorXd> variances) {
  if (streams < 1) throw std::invalid_argument("weights for zero streams");
  const int d = space.tangent_dim();
  const Weighting kind = strategy.kind;

  if (is_schedule(kind)) {
    if (streams == 1) return {VectorXd::Ones(d)};
    if (streams != 2) throw std::invalid_argument(to_string(kind) + " schedule needs exactly 2 streams");
    const double p = std::clamp(progress, 0.0, 1.0);
    double w1 = 0.5;
    if (kind == Weighting::kThreshold) w1 = p < 0.5 ? 1.0 : 0.0;
    if (kind == Weighting::kLinear) w1 = p;
    if (kind == Weighting::kExponential) w1 = std::pow(1.0 - p, 4);
    return {VectorXd::Constant(d, w1), VectorXd::Constant(d, 1.0 - w1)};
  }

  const bool logvar = is_logvar(kind);
  std::span<const VectorXd> inputs = logvar ? logvars : variances;
  if (static_cast<int>(inputs.size()) != streams) {
    throw std::invalid_argument(to_string(kind) + " weighting needs " + (logvar ? "log variances" : "particle variances") +
                                " for every stream");
  }
  // Per-stream variance proxies, then optional grouping.
  std::vector<VectorXd> var(streams);
  for (int f = 0; f < streams; ++f) {
    if (inputs[f].size() != d) {
      throw std::invalid_argument(to_string(kind) + " weighting input has " + std::to_string(inputs[f].size()) +
                                  " entries, expected " + std::to_string(d));
    }
    var[f] = logvar ? VectorXd(inputs[f].array().max(kLogvarMin).min(kLogvarMax).exp()) : inputs[f];
    // A non-finite variance is a diverged population, not a caller error.
    if (!var[f].allFinite()) throw std::runtime_error("non-finite variance input");
    if ((var[f].array() < 0.0).any()) throw std::invalid_argument("negative variance input");
  }
  if (is_grouped(kind)) {
    for (auto& v : var) {
      VectorXd grouped = v;
      for (int g = 0; g < space.group_count(); ++g) {
        double sum = 0.0;
        int count = 0;
        for (int i = 0; i < d; ++i) {
          if (space.group_of(i) == g) {
            sum += v[i];
            ++count;
          }
        }
        for (int i = 0; i < d; ++i) {
          if (space.group_of(i) == g) grouped[i] = sum / count;
        }
      }
      v = grouped;
    }
  }

  std::vector<VectorXd> w(streams, VectorXd::Zero(d));
  for (int i = 0; i < d; ++i) {
    if (logvar) {
      // exp(-psi) normalised; shifted by the smallest psi for range.
      double lo = std::log(var[0][i]);
      for (int f = 1; f < streams; ++f) lo = std::min(lo, std::log(var[f][i]));
      double total = 0.0;
      for (int f = 0; f < streams; ++f) total += w[f][i] = std::exp(lo - std::log(var[f][i]));
      for (int f = 0; f < streams; ++f) w[f][i] /= total;
      continue;
    }
    bool all_zero = true;
    for (int f = 0; f < streams; ++f) all_zero = all_zero && var[f][i] < kZeroVariance;
    if (all_zero) {
      for (int f = 0; f < streams; ++f) w[f][i] = 1.0 / streams;
      continue;
    }
    double total = 0.0;
    for (int f = 0; f < streams; ++f) total += w[f][i] = 1.0 / std::max(var[f][i], kZeroVariance);
    for (int f = 0; f < streams; ++f) w[f][i] /= total;
  }
  return w;
}

VectorXd world_logvar(const StateSpace& space, const Frame& frame, const VectorXd& local_logvar) {
  const int d = space.tangent_dim();
  if (local_logvar.size() == 0) return {};
  const VectorXd clamped = local_logvar.array().max(kLogvarMin).min(kLogvarMax).matrix();
  if (clamped.size() == space.group_count() && clamped.size() != d) {
    // Grouped heads: isotropic within a group, so rotation leaves them unchanged.
    VectorXd out(d);
    for (int i = 0; i < d; ++i) out[i] = clamped[space.group_of(i)];
    return out;
  }
  if (clamped.size() != d) throw std::invalid_argument("logvar head size does not match the state space");
  return space.variance_to_global(clamped.array().exp().matrix(), frame).array().log().matrix();
}

namespace {

const StateSpace& common_space(std::span<const Stream> streams) {
  if (streams.empty()) throw std::invalid_argument("composition needs at least one stream");
  const StateSpace& s = streams.front().model->space;
  for (const auto& st : streams) {
    if (!st.model) throw std::invalid_argument("stream '" + st.frame.id + "' has no model");
    if (!(st.model->space == s)) throw std::invalid_argument("streams use different state spaces");
  }
  return s;
}

// Share of a stream in the composed progress: its mean weight over the
// position dimensions. Sums to one over streams.
double progress_weight(const StateSpace& space, const VectorXd& w) {
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < space.tangent_dim(); ++i) {
    if (space.group_of(i) == 0) {
      sum += w[i];
      ++count;
    }
  }
  return sum / count;
}

struct Evaluation {
  VectorXd velocity;  // world
  double progress = 0.0;
  std::vector<VectorXd> weights;
};

// Weighted world velocity of all streams, each queried at its own world state.
Evaluation evaluate(std::span<const Stream> streams, const StateSpace& space, std::span<const VectorXd> states,
                    std::span<const VectorXd> local_conditions, double t, const ComposeInput& input,
                    const CompositionConfig& config) {
  const int n = static_cast<int>(streams.size());
  std::vector<VectorXd> velocities(n);
  std::vector<VectorXd> logvars;
  std::vector<double> progress(n);
  for (int f = 0; f < n; ++f) {
    const Stream& s = streams[f];
    const nn::Prediction p = s.model->predict(space.to_local(states[f], s.frame), local_conditions[f], t, s.context);
    velocities[f] = space.tangent_to_global(p.velocity, s.frame);
    progress[f] = p.progress;
    if (is_logvar(config.weighting.kind)) logvars.push_back(world_logvar(space, s.frame, p.logvar));
  }
  Evaluation e;
  e.weights = input.fixed_weights ? *input.fixed_weights
                                  : compute_weights(config.weighting, space, n, input.progress, logvars);
  e.velocity = VectorXd::Zero(space.tangent_dim());
  for (int f = 0; f < n; ++f) {
    e.velocity += e.weights[f].cwiseProduct(velocities[f]);
    e.progress += progress_weight(space, e.weights[f]) * progress[f];
  }
  return e;
}

std::vector<VectorXd> local_conditions(std::span<const Stream> streams, const StateSpace& space,
                                       const VectorXd& condition) {
  std::vector<VectorXd> out;
  for (const auto& s : streams) out.push_back(space.to_local(condition, s.frame));
  return out;
}

// Local start states: matched (one world draw) or independent per stream.
std::vector<VectorXd> start_states(std::span<const Stream> streams, const StateSpace& space,
                                   const VectorXd& condition, std::span<const VectorXd> conds, bool matched,
                                   Rng& rng) {
  if (matched) return sample_matched_priors(streams, space, condition, rng).local;
  std::vector<VectorXd> out;
  for (std::size_t f = 0; f < streams.size(); ++f) {
    out.push_back(sample_prior(streams[f].model->prior, space, &conds[f], rng));
  }
  return out;
}

}  // namespace

MatchedPriors sample_matched_priors(std::span<const Stream> streams, const StateSpace& space,
                                    const VectorXd& condition, Rng& rng) {
  common_space(streams);
  const Prior& prior = streams.front().model->prior;
  MatchedPriors m;
  if (prior.kind == PriorKind::kPoseCentric) {
    m.global = space.sample_around(condition, prior.sigma_position, prior.sigma_rotation, rng);
  } else {
    m.global = space.sample_around(space.origin(), 1.0, 1.0, rng);
  }
  for (const auto& s : streams) m.local.push_back(space.to_local(m.global, s.frame));
  return m;
}

ComposeResult ensemble_compose(std::span<const Stream> streams, const ComposeInput& input,
                               const CompositionConfig& config, Rng& rng) {
  config.validate();
  if (config.strategy != Strategy::kEnsemble) throw std::invalid_argument("ensemble_compose needs the ensemble strategy");
  const StateSpace& space = common_space(streams);
  const int n = static_cast<int>(streams.size());
  const auto conds = local_conditions(streams, space, input.condition);
  const auto z0 = start_states(streams, space, input.condition, conds, config.sample_matching, rng);

  ComposeResult r;
  std::vector<double> progress(n);
  std::vector<VectorXd> logvars;
  for (int f = 0; f < n; ++f) {
    const IntegrateResult ir = integrate(*streams[f].model, z0[f], conds[f], config.integration_steps(), streams[f].context);
    r.stream_states.push_back(space.to_global(ir.state, streams[f].frame));
    progress[f] = ir.progress;
    if (is_logvar(config.weighting.kind)) logvars.push_back(world_logvar(space, streams[f].frame, ir.logvar));
  }
  r.weights = input.fixed_weights ? *input.fixed_weights
                                  : compute_weights(config.weighting, space, n, input.progress, logvars);
  r.state = space.weighted_mean(r.stream_states, r.weights);
  for (int f = 0; f < n; ++f) r.progress += progress_weight(space, r.weights[f]) * progress[f];
  return r;
}

ComposeResult flow_compose(std::span<const Stream> streams, const ComposeInput& input,
                           const CompositionConfig& config, Rng& rng) {
  config.validate();
  if (config.strategy == Strategy::kEnsemble) throw std::invalid_argument("flow_compose needs a flow strategy");
  const StateSpace& space = common_space(streams);
  const int n = static_cast<int>(streams.size());
  const auto conds = local_conditions(streams, space, input.condition);
  const auto z0 = start_states(streams, space, input.condition, conds, config.sample_matching, rng);

  // One world state per stream; they coincide under sample matching.
  std::vector<VectorXd> states;
  for (int f = 0; f < n; ++f) states.push_back(space.to_global(z0[f], streams[f].frame));

  const int steps = config.integration_steps();
  const double dt = 1.0 / steps;
  Evaluation e;
  for (int k = 0; k < steps; ++k) {
    e = evaluate(streams, space, states, conds, k * dt, input, config);
    for (auto& s : states) s = space.retract(s, e.velocity, dt);

    const double t = (k + 1) * dt;
    for (int m = 0; m < config.mcmc_steps; ++m) {
      const Evaluation c = evaluate(streams, space, states, conds, t, input, config);
      const VectorXd noise = config.mcmc_noise * (1.0 - t) * standard_normal(space.tangent_dim(), rng);
      for (auto& s : states) {
        s = space.retract(s, c.velocity, config.mcmc_step_scale * dt);
        // Body-frame noise: same isotropic law, and a common frame change commutes with the step.
        const VectorXd n = space.is_pose() ? space.tangent_to_global(noise, {StateSpace::as_pose(s), "state"}) : noise;
        s = space.retract(s, n, 1.0);
      }
    }
    for (const auto& s : states) {
      if (!s.allFinite()) throw std::runtime_error("non-finite state during flow composition");
    }
  }

  ComposeResult r;
  r.weights = e.weights;
  r.progress = e.progress;
  r.stream_states = states;
  r.state = space.weighted_mean(states, e.weights);
  return r;
}

ComposeResult compose(std::span<const Stream> streams, const ComposeInput& input, const CompositionConfig& config,
                      Rng& rng) {
  return config.strategy == Strategy::kEnsemble ? ensemble_compose(streams, input, config, rng)
                                                : flow_compose(streams, input, config, rng);
}

std::vector<ComposeResult> compose_samples(std::span<const Stream> streams, const ComposeInput& input,
                                           const CompositionConfig& config, std::uint64_t seed, int n,
                                           Execution exec) {
  std::vector<ComposeResult> out(static_cast<std::size_t>(std::max(n, 0)));
  if (exec == Execution::kSerial) {
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      out[i] = compose(streams, input, config, rng);
    }
    return out;
  }
  std::vector<std::exception_ptr> errors(out.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < n; ++i) {
    try {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      out[i] = compose(streams, input, config, rng);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

ParticlePopulation init_population(std::span<const Stream> streams, int particles, Rng& rng) {
  if (particles < 2) throw std::invalid_argument("particle population needs at least 2 particles");
  std::size_t available = std::numeric_limits<std::size_t>::max();
  for (const auto& s : streams) available = std::min(available, s.initial_poses.size());
  if (streams.empty() || available == 0) throw std::invalid_argument("streams carry no initial poses for particles");
  std::uniform_int_distribution<std::size_t> pick(0, available - 1);
  ParticlePopulation pop;
  for (int k = 0; k < particles; ++k) {
    // One training start per particle, seen from every stream.
    const std::size_t idx = pick(rng);
    std::vector<VectorXd> poses;
    for (const auto& s : streams) poses.push_back(s.initial_poses[idx]);
    pop.virtual_poses.push_back(std::move(poses));
  }
  return pop;
}

VectorXd tangent_variance(const StateSpace& space, std::span<const VectorXd> states) {
  if (states.empty()) throw std::invalid_argument("variance of zero states");
  const std::vector<VectorXd> w(states.size(), VectorXd::Ones(space.tangent_dim()));
  const VectorXd mean = space.weighted_mean(states, w);
  VectorXd var = VectorXd::Zero(space.tangent_dim());
  for (const auto& s : states) var += space.displacement(mean, s).cwiseAbs2();
  return var / static_cast<double>(states.size());
}

ParticleStep particle_rollout_step(const ParticlePopulation& population, std::span<const Stream> streams,
                                   const ComposeInput& input, const CompositionConfig& config, Rng& rng) {
  config.validate();
  if (population.size() < 2) throw std::invalid_argument("particle population needs at least 2 particles");
  const StateSpace& space = common_space(streams);
  const int n = static_cast<int>(streams.size());
  const int k_count = population.size();
  const auto true_conds = local_conditions(streams, space, input.condition);

  ParticleStep out;
  out.population.virtual_poses.assign(k_count, std::vector<VectorXd>(n));
  for (int f = 0; f < n; ++f) {
    std::vector<VectorXd> world(k_count);
    for (int k = 0; k < k_count; ++k) {
      const VectorXd& cond = config.virtual_poses ? population.virtual_poses[k].at(f) : true_conds[f];
      const VectorXd z0 = sample_prior(streams[f].model->prior, space, &cond, rng);
      const IntegrateResult ir = integrate(*streams[f].model, z0, cond, config.integration_steps(), streams[f].context);
      out.population.virtual_poses[k][f] = ir.state;
      world[k] = space.to_global(ir.state, streams[f].frame);
    }
    out.variances.push_back(tangent_variance(space, world));
  }
  WeightingStrategy ws = config.weighting;
  if (!is_particle(ws.kind)) ws.kind = Weighting::kParticleFull;
  out.weights = compute_weights(ws, space, n, input.progress, {}, out.variances);

  ComposeInput fixed = input;
  fixed.fixed_weights = out.weights;
  out.composed = compose(streams, fixed, config, rng);
  return out;
}

namespace {

double population_std(const ParticlePopulation& pop, std::span<const Stream> streams, const StateSpace& space) {
  double total = 0.0;
  for (std::size_t f = 0; f < streams.size(); ++f) {
    std::vector<VectorXd> world;
    for (const auto& p : pop.virtual_poses) world.push_back(space.to_global(p[f], streams[f].frame));
    total += tangent_variance(space, world).cwiseSqrt().mean();
  }
  return total / static_cast<double>(streams.size());
}

}  // namespace

RolloutResult rollout(std::span<const std::vector<Stream>> skills, const VectorXd& start,
                      const CompositionConfig& config, int max_steps, std::uint64_t seed) {
  config.validate();
  if (skills.empty()) throw std::invalid_argument("rollout needs at least one skill");
  const StateSpace& space = common_space(skills.front());
  space.check(start);
  const bool particles = is_particle(config.weighting.kind);

  RolloutResult r;
  int skill = 0;
  double progress = 0.0;
  VectorXd state = start;
  ParticlePopulation pop;
  auto reset_population = [&](int step) {
    Rng init(derive_seed(seed, static_cast<std::uint64_t>(step), 1));
    pop = init_population(skills[skill], config.weighting.particles, init);
    r.particle_std.push_back(population_std(pop, skills[skill], space));
  };
  if (particles) reset_population(0);

  for (int step = 0; step < max_steps; ++step) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(step)));
    ComposeInput input{state, progress, std::nullopt};
    ComposeResult res;
    try {
      if (particles) {
        ParticleStep ps = particle_rollout_step(pop, skills[skill], input, config, rng);
        pop = std::move(ps.population);
        res = std::move(ps.composed);
        r.particle_std.push_back(population_std(pop, skills[skill], space));
      } else {
        res = compose(skills[skill], input, config, rng);
      }
      space.check(res.state);
    } catch (const std::runtime_error&) {
      r.diverged = true;
    }
    // A policy that leaves the manifold ends the episode unfinished.
    if (r.diverged) break;
    state = res.state;
    r.trajectory.push_back({step, skill, state, res.weights, res.progress});

    if (res.progress > config.switch_threshold) {
      r.switch_steps.push_back(step);
      if (skill + 1 == static_cast<int>(skills.size())) {
        r.finished = true;
        break;
      }
      ++skill;
      progress = 0.0;
      if (particles) reset_population(step + 1);
    } else {
      progress = res.progress;
    }
  }
  return r;
}

nlohmann::json trajectory_record_json(const TrajectoryRecord& r) {
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& w : r.weights) weights.push_back(std::vector<double>(w.data(), w.data() + w.size()));
  return {{"step", r.step},
          {"skill", r.skill},
          {"pose", std::vector<double>(r.state.data(), r.state.data() + r.state.size())},
          {"weights", weights},
          {"progress", r.progress}};
}

}  // namespace msg
