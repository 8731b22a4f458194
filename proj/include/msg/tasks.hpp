#pragma once

// Scripted desk-scale tasks and 2D composition toys.
//
// Kinematic tasks live on the pose manifold with yaw-only object frames. Each
// episode samples frame poses, scripts a demonstration through waypoints
// defined relative to those frames, and scores rollouts by the distance of
// the final pose to the goal-relative target. The ee starts at the
// "ee_init" frame.

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msg/compose.hpp"
#include "msg/flowmatch.hpp"
#include "msg/gaussref.hpp"
#include "msg/streams.hpp"

namespace msg {

struct FrameRange {
  Vec3 nominal = Vec3::Zero();
  double nominal_yaw = 0.0;
  double position_range = 0.0;  // half-width of the xy box
  double yaw_range = 0.0;        // half-width
  double height_range = 0.0;     // half-width of z
};

struct TaskSpec {
  std::string name;
  std::map<std::string, FrameRange> frames;           // includes "ee_init"
  std::vector<std::vector<std::string>> skill_frames;  // stream frames per skill, target frame last
  int skills = 1;
  double step_length = 0.05;   // scripted translation per step
  double demo_noise = 0.004;   // amplitude of the smooth demo perturbation
  double demo_jitter = 0.01;   // per-step position noise std
  double demo_jitter_rotation = 0.03;  // per-step rotation noise std (rad)
  int dwell_steps = 1;                 // extra steps holding each skill target
  double tolerance_position = 0.05;
  double tolerance_rotation = 0.2;
  int max_steps = 150;
  // Composed progress level ending a skill in rollouts of this task. Skills of
  // about 15 steps put the second-to-last progress label near 0.93.
  double switch_threshold = 0.95;

  bool is_toy() const { return frames.empty(); }
  void validate() const;
  nlohmann::json to_json() const;
  // Overrides numeric fields present in `j`.
  void apply_json(const nlohmann::json& j);
};

const std::vector<std::string>& task_names();
const std::vector<std::string>& toy_names();
// Throws std::invalid_argument listing the valid names.
TaskSpec task_spec(const std::string& name);

struct TaskInstance {
  std::map<std::string, Pose> frames;
  Pose start() const { return frames.at("ee_init"); }
  Frame frame(const std::string& id) const { return {frames.at(id), id}; }
};

TaskInstance sample_instance(const TaskSpec& spec, Rng& rng);

struct Waypoint {
  Pose pose;
  int skill = 0;
};

// Waypoints after the start pose; the last waypoint of each skill is its target.
std::vector<Waypoint> task_waypoints(const TaskSpec& spec, const TaskInstance& instance);
Pose skill_target(const TaskSpec& spec, const TaskInstance& instance, int skill);

Demonstration script_demo(const TaskSpec& spec, const TaskInstance& instance, Rng& rng);
std::vector<Demonstration> generate_demos(const TaskSpec& spec, int n, std::uint64_t seed);

// ---- Policies -------------------------------------------------------------

enum class FrameMode {
  kObject,    // the task frame itself
  kGlobal,    // world frame, object poses as extra conditioning
  kOriented,  // task frame with x towards the start ee
};

struct StreamModel {
  std::string frame_id;
  FrameMode mode = FrameMode::kObject;
  std::shared_ptr<const FlowModel> model;
  std::vector<VectorXd> initial_poses;  // local start poses from training
};

// Streams per skill.
using Policy = std::vector<std::vector<StreamModel>>;

enum class Method { kMsg, kObjectFrame, kGlobal, kAcpl };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct PolicyTraining {
  Method method = Method::kMsg;
  Prior prior = Prior::pose_centric();
  bool mixture_prior = false;  // build the mixture prior from the demo frames
  bool conditioned = true;
  int logvar_dim = 6;
  int trajectory_bins = 10;
  TrainConfig train;
};

// Training settings sized for the desk tasks: a small net, cosine decay and
// conditioning noise against compounding rollout error.
TrainConfig desk_train_config();
// Training settings for the 2D toys.
TrainConfig toy_train_config();

struct TrainedStream {
  int skill = 0;
  StreamModel stream;
  std::vector<EpochLoss> curve;
};

// Frames each skill uses under `method`.
std::vector<std::pair<std::string, FrameMode>> method_frames(const TaskSpec& spec, Method method, int skill);

// World object poses (all frames but ee_init, sorted by id) as features.
VectorXd object_context(const TaskSpec& spec, const std::map<std::string, Pose>& frames);

std::vector<TrainedStream> train_policy(const TaskSpec& spec, std::span<const Demonstration> demos,
                                        const PolicyTraining& training);
Policy assemble_policy(std::span<const TrainedStream> trained);

std::vector<std::vector<Stream>> instantiate(const TaskSpec& spec, const Policy& policy,
                                             const TaskInstance& instance);

// ---- Evaluation -----------------------------------------------------------

struct EpisodeResult {
  bool success = false;
  bool finished = false;
  bool reached_first = false;
  double position_error = 0.0;
  double rotation_error = 0.0;
  int steps = 0;
  RolloutResult rollout;
};

struct EvalResult {
  double success_rate = 0.0;
  std::vector<EpisodeResult> episodes;
};

// Success: final pose within tolerance of the final target and, for
// multi-skill tasks, some state within tolerance of the first target.
// Running out of steps near the target still counts.
EpisodeResult score_episode(const TaskSpec& spec, const TaskInstance& instance, RolloutResult rollout);

// Episode i uses derive_seed(seed, i) for its instance and rollout.
EvalResult evaluate(const TaskSpec& spec, const Policy& policy, const CompositionConfig& config, int episodes,
                    std::uint64_t seed, Execution exec = Execution::kParallel);

// ---- 2D composition toys ----------------------------------------------------

struct ToyStream {
  Frame frame;
  std::vector<DiagGaussian> local_modes;  // equal-weight mixture in the frame
  Prior prior;
};

struct Toy {
  std::string name;
  std::vector<ToyStream> streams;
  std::vector<VectorXd> mode_centers;  // world
  double mode_std = 0.0;
  // Logvar heads are supervised with the known per-dimension mode variance.
  bool logvar_supervision = false;
};

Toy make_toy(const std::string& name);
// Two equal-weight world modes for bimodal-2d.
Toy bimodal_toy();

VectorXd sample_toy_stream(const ToyStream& s, Rng& rng);
// World samples of the target of stream `index`.
std::vector<VectorXd> sample_toy_target(const Toy& toy, std::size_t index, int n, Rng& rng);

FlowDataset toy_dataset(const Toy& toy, std::size_t index, int n, std::uint64_t seed);

std::vector<Stream> train_toy_streams(const Toy& toy, const TrainConfig& config, int samples);

// Product of the world-frame stream Gaussians (single-mode streams only).
DiagGaussian toy_product(const Toy& toy);

// Fraction of states within `radius` of some mode center.
double mode_agreement(std::span<const VectorXd> states, std::span<const VectorXd> centers, double radius);

}  // namespace msg
