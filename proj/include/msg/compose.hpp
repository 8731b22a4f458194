#pragma once

// Inference-time composition of object-centric streams.
//
// All composed quantities live in the world frame. A stream sees states and
// its conditioning in its own frame; its velocities and log variances are
// mapped back to the world before weighting. Weights are per tangent
// dimension and sum to one over streams in every dimension.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "msg/flowmatch.hpp"
#include "msg/kernels.hpp"

namespace msg {

enum class Strategy { kEnsemble, kFlow, kFlowMcmc };
enum class Weighting {
  kConstant,
  kThreshold,
  kLinear,
  kExponential,
  kLogvarFull,
  kLogvarGrouped,
  kParticleFull,
  kParticleGrouped,
};

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& s);
const std::vector<Weighting>& all_weightings();

inline bool is_schedule(Weighting w) { return w <= Weighting::kExponential; }
inline bool is_logvar(Weighting w) { return w == Weighting::kLogvarFull || w == Weighting::kLogvarGrouped; }
inline bool is_particle(Weighting w) { return w == Weighting::kParticleFull || w == Weighting::kParticleGrouped; }
inline bool is_grouped(Weighting w) { return w == Weighting::kLogvarGrouped || w == Weighting::kParticleGrouped; }

struct WeightingStrategy {
  Weighting kind = Weighting::kExponential;
  int particles = 8;  // particle variants only
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 4.0;
inline constexpr double kZeroVariance = 1e-12;

struct CompositionConfig {
  Strategy strategy = Strategy::kFlow;
  int flow_steps = 10;
  int mcmc_steps = 0;  // >= 1 exactly for flow-mcmc
  double mcmc_step_scale = 0.1;
  double mcmc_noise = 0.1;  // corrector noise eps0 (1 - t)
  WeightingStrategy weighting;
  bool sample_matching = true;
  // Integrate N (1 + M_ref) plain flow steps instead of running the corrector.
  bool matched_steps = false;
  int matched_steps_reference = 4;
  // Particle weighting: condition each particle on its own previous state.
  bool virtual_poses = true;
  double switch_threshold = 0.98;

  static CompositionConfig make(Strategy s, Weighting w = Weighting::kExponential);
  int integration_steps() const { return matched_steps ? flow_steps * (1 + matched_steps_reference) : flow_steps; }
  void validate() const;
  nlohmann::json to_json() const;
  static CompositionConfig from_json(const nlohmann::json& j, CompositionConfig base);
};

struct Stream {
  Frame frame;
  std::shared_ptr<const FlowModel> model;
  // Local start poses seen in training; seeds the particle population.
  std::vector<VectorXd> initial_poses;
  VectorXd context;  // extra conditioning features, when the model takes them
};

// Per-stream weight vectors over the tangent dimensions.
//   schedules: 2 streams (1 stream gets weight 1), scalar broadcast
//   logvar:    w ~ exp(-psi), psi world-frame, clamped to [kLogvarMin, kLogvarMax]
//   particle:  w ~ 1 / variance; dimensions where every stream is below
//              kZeroVariance get uniform weights
// Grouped variants pool position and orientation dims separately. Throws
// std::invalid_argument when a variant's inputs are missing.
std::vector<VectorXd> compute_weights(const WeightingStrategy& strategy, const StateSpace& space, int streams,
                                      double progress, std::span<const VectorXd> logvars = {},
                                      std::span<const VectorXd> variances = {});

// Log variance head output (local, 0/2/6 or d entries) as a world-frame
// tangent-dimension vector.
VectorXd world_logvar(const StateSpace& space, const Frame& frame, const VectorXd& local_logvar);

struct MatchedPriors {
  VectorXd global;
  std::vector<VectorXd> local;
};

// One world-frame draw mapped into every stream's frame. Pose-centric
// streams draw about the conditioning state; otherwise the draw is standard
// about the world origin.
MatchedPriors sample_matched_priors(std::span<const Stream> streams, const StateSpace& space,
                                    const VectorXd& condition, Rng& rng);

struct ComposeInput {
  VectorXd condition;   // world conditioning state
  double progress = 0;  // conditioning-time progress estimate (schedules)
  // Particle weighting: precomputed weights used for every evaluation.
  std::optional<std::vector<VectorXd>> fixed_weights;
};

struct ComposeResult {
  VectorXd state;
  double progress = 0.0;
  std::vector<VectorXd> weights;        // last weights applied
  std::vector<VectorXd> stream_states;  // world-frame per-stream end states
};

ComposeResult ensemble_compose(std::span<const Stream> streams, const ComposeInput& input,
                               const CompositionConfig& config, Rng& rng);
ComposeResult flow_compose(std::span<const Stream> streams, const ComposeInput& input,
                           const CompositionConfig& config, Rng& rng);
ComposeResult compose(std::span<const Stream> streams, const ComposeInput& input, const CompositionConfig& config,
                      Rng& rng);

// n independent composed samples; sample i uses derive_seed(seed, i), so the
// serial and parallel variants agree exactly.
std::vector<ComposeResult> compose_samples(std::span<const Stream> streams, const ComposeInput& input,
                                           const CompositionConfig& config, std::uint64_t seed, int n,
                                           Execution exec = Execution::kParallel);

struct ParticlePopulation {
  std::vector<std::vector<VectorXd>> virtual_poses;  // [particle][stream], stream-local

  int size() const { return static_cast<int>(virtual_poses.size()); }
};

// K start poses per stream drawn from each stream's initial_poses.
ParticlePopulation init_population(std::span<const Stream> streams, int particles, Rng& rng);

// World-frame per-dimension tangent variance of a set of states about their mean.
VectorXd tangent_variance(const StateSpace& space, std::span<const VectorXd> states);

struct ParticleStep {
  ParticlePopulation population;
  std::vector<VectorXd> variances;  // per stream, world frame
  std::vector<VectorXd> weights;
  ComposeResult composed;
};

// Integrates every particle through every stream (conditioned on its virtual
// pose, or on the true pose when config.virtual_poses is false), weights the
// streams by the particle variance and composes the executed state with
// those weights. Throws std::invalid_argument for fewer than 2 particles.
ParticleStep particle_rollout_step(const ParticlePopulation& population, std::span<const Stream> streams,
                                   const ComposeInput& input, const CompositionConfig& config, Rng& rng);

struct TrajectoryRecord {
  int step = 0;
  int skill = 0;
  VectorXd state;
  std::vector<VectorXd> weights;
  double progress = 0.0;
};

struct RolloutResult {
  std::vector<TrajectoryRecord> trajectory;
  bool finished = false;             // final skill reached the switch threshold
  bool diverged = false;             // a step produced an invalid state
  std::vector<int> switch_steps;     // step index at which each skill ended
  std::vector<double> particle_std;  // mean population tangent std per step (particle variants)
};

// Receding-horizon loop: compose the next state, move there, re-condition.
// Each step uses its own derived RNG stream. A step that throws a geometry
// or non-finite-state error stops the rollout with diverged set.
RolloutResult rollout(std::span<const std::vector<Stream>> skills, const VectorXd& start,
                      const CompositionConfig& config, int max_steps, std::uint64_t seed);

nlohmann::json trajectory_record_json(const TrajectoryRecord& r);

}  // namespace msg
