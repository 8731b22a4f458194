#include "msg/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <stdexcept>

namespace msg {

namespace {

constexpr double kPi = std::numbers::pi;

FrameRange range(Vec3 nominal, double pos, double yaw, double height = 0.0) {
  return {nominal, 0.0, pos, yaw, height};
}

// Pose expressed in a frame's coordinates, mapped to the world.
Pose at(const Pose& frame, double x, double y, double z) { return compose(frame, planar_pose(x, y, 0.0, z)); }

std::uint64_t string_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

void TaskSpec::validate() const {
  if (!(tolerance_position > 0.0 && tolerance_rotation > 0.0)) throw std::invalid_argument("tolerances must be positive");
  if (is_toy()) return;
  if (!frames.contains("ee_init")) throw std::invalid_argument("task needs an ee_init frame");
  for (const auto& [id, r] : frames) {
    if (r.position_range < 0.0 || r.yaw_range < 0.0 || r.height_range < 0.0) {
      throw std::invalid_argument("frame '" + id + "' has a negative range");
    }
  }
  if (static_cast<int>(skill_frames.size()) != skills) throw std::invalid_argument("one frame list per skill required");
  for (const auto& fs : skill_frames) {
    for (const auto& f : fs) {
      if (!frames.contains(f)) throw std::invalid_argument("skill uses unknown frame '" + f + "'");
    }
  }
  if (!(switch_threshold > 0.0 && switch_threshold < 1.0)) throw std::invalid_argument("switch threshold must lie in (0, 1)");
  if (!(step_length > 0.0) || max_steps < 1 || dwell_steps < 0) throw std::invalid_argument("invalid step settings");
}

nlohmann::json TaskSpec::to_json() const {
  nlohmann::json fr = nlohmann::json::object();
  for (const auto& [id, r] : frames) {
    fr[id] = {{"nominal", {r.nominal.x(), r.nominal.y(), r.nominal.z()}},
              {"nominal_yaw", r.nominal_yaw},
              {"position_range", r.position_range},
              {"yaw_range", r.yaw_range},
              {"height_range", r.height_range}};
  }
  return {{"name", name},
          {"frames", fr},
          {"skill_frames", skill_frames},
          {"step_length", step_length},
          {"demo_noise", demo_noise},
          {"demo_jitter", demo_jitter},
          {"demo_jitter_rotation", demo_jitter_rotation},
          {"dwell_steps", dwell_steps},
          {"tolerance_position", tolerance_position},
          {"tolerance_rotation", tolerance_rotation},
          {"max_steps", max_steps},
          {"switch_threshold", switch_threshold}};
}

void TaskSpec::apply_json(const nlohmann::json& j) {
  step_length = j.value("step_length", step_length);
  demo_noise = j.value("demo_noise", demo_noise);
  demo_jitter = j.value("demo_jitter", demo_jitter);
  demo_jitter_rotation = j.value("demo_jitter_rotation", demo_jitter_rotation);
  dwell_steps = j.value("dwell_steps", dwell_steps);
  tolerance_position = j.value("tolerance_position", tolerance_position);
  tolerance_rotation = j.value("tolerance_rotation", tolerance_rotation);
  max_steps = j.value("max_steps", max_steps);
  switch_threshold = j.value("switch_threshold", switch_threshold);
  if (j.contains("frames")) {
    for (const auto& [id, r] : j.at("frames").items()) {
      auto it = frames.find(id);
      if (it == frames.end()) throw std::invalid_argument("task '" + name + "' has no frame '" + id + "'");
      it->second.position_range = r.value("position_range", it->second.position_range);
      it->second.yaw_range = r.value("yaw_range", it->second.yaw_range);
      it->second.height_range = r.value("height_range", it->second.height_range);
    }
  }
  validate();
}

const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {"reach", "drawer", "place"};
  return names;
}

const std::vector<std::string>& toy_names() {
  static const std::vector<std::string> names = {"bimodal-2d", "gaussian-2d", "pog-2d", "unimodal-2d"};
  return names;
}

TaskSpec task_spec(const std::string& name) {
  TaskSpec s;
  s.name = name;
  const FrameRange ee = range({0.0, 0.0, 0.3}, 0.15, 0.5, 0.05);
  if (name == "reach") {
    s.frames = {{"ee_init", ee}, {"goal", range({0.45, 0.0, 0.0}, 0.15, 1.5)}};
    s.skill_frames = {{"ee_init", "goal"}, {"ee_init", "goal"}};
    s.skills = 2;
  } else if (name == "drawer") {
    s.frames = {{"ee_init", ee}, {"drawer", range({0.5, 0.0, 0.15}, 0.12, 0.6, 0.05)}};
    s.skill_frames = {{"ee_init", "drawer"}, {"ee_init", "drawer"}};
    s.skills = 2;
  } else if (name == "place") {
    s.frames = {{"ee_init", ee},
                {"cup", range({0.4, 0.25, 0.0}, 0.1, 0.6, 0.05)},
                {"base", range({0.4, -0.25, 0.0}, 0.1, 1.0, 0.05)}};
    s.skill_frames = {{"ee_init", "cup"}, {"cup", "base"}};
    s.skills = 2;
    s.max_steps = 200;
  } else if (std::find(toy_names().begin(), toy_names().end(), name) != toy_names().end()) {
    s.skills = 1;
  } else {
    throw std::invalid_argument("unknown task '" + name + "' (valid: " + join(task_names()) + ", " +
                                join(toy_names()) + ")");
  }
  s.validate();
  return s;
}

TaskInstance sample_instance(const TaskSpec& spec, Rng& rng) {
  if (spec.is_toy()) throw std::invalid_argument("toys have no task instances");
  TaskInstance inst;
  for (const auto& [id, r] : spec.frames) {
    const double x = r.nominal.x() + uniform(rng, -1.0, 1.0) * r.position_range;
    const double y = r.nominal.y() + uniform(rng, -1.0, 1.0) * r.position_range;
    const double yaw = r.nominal_yaw + uniform(rng, -1.0, 1.0) * r.yaw_range;
    const double z = r.nominal.z() + uniform(rng, -1.0, 1.0) * r.height_range;
    inst.frames[id] = planar_pose(x, y, yaw, z);
  }
  return inst;
}

std::vector<Waypoint> task_waypoints(const TaskSpec& spec, const TaskInstance& inst) {
  const Pose start = inst.start();
  // Back away along the ee's own x-axis and rise before heading for the object.
  const Pose clearance = at(start, -0.08, 0.0, 0.08);
  // Position from `frame`, orientation from `keep`.
  auto mixed = [](const Pose& frame, double x, double y, double z, const Pose& keep) {
    return Pose{at(frame, x, y, z).position, keep.orientation};
  };
  if (spec.name == "reach") {
    // A symmetric object: the gripper keeps its start orientation.
    const Pose& g = inst.frames.at("goal");
    return {{clearance, 0},
            {mixed(g, 0.0, 0.0, 0.12, start), 0},
            {mixed(g, 0.0, 0.0, 0.02, start), 0},
            {mixed(g, 0.0, 0.0, 0.22, start), 1}};
  }
  if (spec.name == "drawer") {
    const Pose& d = inst.frames.at("drawer");
    return {{clearance, 0}, {at(d, -0.1, 0.0, 0.0), 0}, {at(d, 0.0, 0.0, 0.0), 0}, {at(d, -0.25, 0.0, 0.0), 1}};
  }
  if (spec.name == "place") {
    // The cup is grasped along its handle axis and carried without turning.
    const Pose& c = inst.frames.at("cup");
    const Pose& b = inst.frames.at("base");
    return {{clearance, 0},
            {at(c, 0.0, 0.0, 0.12), 0},
            {at(c, 0.0, 0.0, 0.02), 0},
            {at(c, 0.0, 0.0, 0.15), 1},
            {mixed(b, 0.0, 0.0, 0.15, c), 1},
            {mixed(b, 0.0, 0.0, 0.05, c), 1}};
  }
  throw std::invalid_argument("task '" + spec.name + "' has no scripted waypoints");
}

Pose skill_target(const TaskSpec& spec, const TaskInstance& inst, int skill) {
  const auto wps = task_waypoints(spec, inst);
  for (auto it = wps.rbegin(); it != wps.rend(); ++it) {
    if (it->skill == skill) return it->pose;
  }
  throw std::out_of_range("skill has no waypoints");
}

Demonstration script_demo(const TaskSpec& spec, const TaskInstance& inst, Rng& rng) {
  Demonstration d;
  d.frames = inst.frames;
  Pose current = inst.start();
  d.steps.push_back({current, 0.0});
  int skill = 0;
  const std::vector<Waypoint> wps = task_waypoints(spec, inst);
  for (std::size_t w = 0; w < wps.size(); ++w) {
    const Waypoint& wp = wps[w];
    if (wp.skill != skill) {
      d.skill_splits.push_back(static_cast<int>(d.steps.size()));
      skill = wp.skill;
    }
    const double dist = std::max((wp.pose.position - current.position).norm(),
                                 0.25 * rotation_distance(current.orientation, wp.pose.orientation));
    const int n = std::max(1, static_cast<int>(std::ceil(dist / spec.step_length)));
    // Smooth bump that vanishes at both waypoints.
    const Vec3 bump = spec.demo_noise * standard_normal(3, rng);
    // Skill targets are held for dwell_steps extra steps.
    const bool skill_end = w + 1 == wps.size() || wps[w + 1].skill != wp.skill;
    const int total = n + (skill_end ? spec.dwell_steps : 0);
    for (int i = 1; i <= total; ++i) {
      const double u = std::min(1.0, static_cast<double>(i) / n);
      Pose p = geodesic_interpolate(current, wp.pose, u);
      if (u < 1.0) p.position += std::sin(kPi * u) * bump;
      p.position += spec.demo_jitter * standard_normal(3, rng);
      p = retract(p, {Vec3::Zero(), spec.demo_jitter_rotation * standard_normal(3, rng)}, 1.0);
      d.steps.push_back({p, skill > 0 ? 1.0 : 0.0});
    }
    current = wp.pose;
  }
  d.validate();
  return d;
}

std::vector<Demonstration> generate_demos(const TaskSpec& spec, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("demo count must be >= 1");
  spec.validate();
  std::vector<Demonstration> demos;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const TaskInstance inst = sample_instance(spec, rng);
    demos.push_back(script_demo(spec, inst, rng));
  }
  return demos;
}

// ---- Policies ---------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::kMsg: return "msg";
    case Method::kObjectFrame: return "object-frame";
    case Method::kGlobal: return "global";
    case Method::kAcpl: return "acpl";
  }
  return "msg";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kMsg, Method::kObjectFrame, Method::kGlobal, Method::kAcpl}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + s + "' (expected msg, object-frame, global or acpl)");
}

TrainConfig desk_train_config() {
  TrainConfig c;
  c.epochs = 800;
  c.steps_per_epoch = 20;
  c.batch_size = 128;
  c.learning_rate = 3e-3;
  c.final_lr_scale = 0.02;
  c.condition_noise = 0.03;
  c.hidden = {64, 64};
  c.loss_weights.progress = 1.0;
  return c;
}

TrainConfig toy_train_config() {
  TrainConfig c;
  c.epochs = 200;
  c.steps_per_epoch = 8;
  c.batch_size = 256;
  c.learning_rate = 3e-3;
  c.final_lr_scale = 0.05;
  c.hidden = {64, 64};
  return c;
}

std::vector<std::pair<std::string, FrameMode>> method_frames(const TaskSpec& spec, Method method, int skill) {
  const auto& fs = spec.skill_frames.at(skill);
  switch (method) {
    case Method::kMsg: {
      std::vector<std::pair<std::string, FrameMode>> out;
      for (const auto& f : fs) out.emplace_back(f, FrameMode::kObject);
      return out;
    }
    case Method::kObjectFrame: return {{fs.back(), FrameMode::kObject}};
    case Method::kGlobal: return {{"world", FrameMode::kGlobal}};
    case Method::kAcpl: return {{fs.back(), FrameMode::kOriented}};
  }
  return {};
}

VectorXd object_context(const TaskSpec& spec, const std::map<std::string, Pose>& frames) {
  const StateSpace space = StateSpace::pose();
  std::vector<double> out;
  for (const auto& [id, r] : spec.frames) {
    if (id == "ee_init") continue;
    double f[9];
    space.features(StateSpace::from_pose(frames.at(id)), f);
    out.insert(out.end(), f, f + 9);
  }
  return Eigen::Map<const VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

namespace {

Pose stream_frame_pose(FrameMode mode, const std::string& id, const std::map<std::string, Pose>& frames,
                       const Pose& start) {
  switch (mode) {
    case FrameMode::kObject: return frames.at(id);
    case FrameMode::kGlobal: return Pose::identity();
    case FrameMode::kOriented: return orient_frame({frames.at(id), id}, start).pose;
  }
  return Pose::identity();
}

std::string mode_key(const std::string& id, FrameMode mode) {
  switch (mode) {
    case FrameMode::kObject: return id;
    case FrameMode::kGlobal: return "world";
    case FrameMode::kOriented: return id + "_oriented";
  }
  return id;
}

}  // namespace

std::vector<TrainedStream> train_policy(const TaskSpec& spec, std::span<const Demonstration> demos,
                                        const PolicyTraining& training) {
  if (demos.empty()) throw std::invalid_argument("no demonstrations");
  std::vector<TrainedStream> out;
  for (int skill = 0; skill < spec.skills; ++skill) {
    for (const auto& [id, mode] : method_frames(spec, training.method, skill)) {
      const std::string key = mode_key(id, mode);
      std::vector<Demonstration> framed(demos.begin(), demos.end());
      for (auto& d : framed) d.frames[key] = stream_frame_pose(mode, id, d.frames, d.steps.front().ee);

      const LocalDataset ds = to_local_dataset(framed, key);
      const GaussianTrajectoryModel gtm = fit_gaussian_trajectory(ds, training.trajectory_bins);
      FlowDataset data = make_flow_dataset(ds, skill, &gtm, training.logvar_dim);

      StreamModel sm;
      sm.frame_id = id;
      sm.mode = mode;
      int context_dim = 0;
      std::size_t e = 0;
      for (const auto& r : ds.records) {
        if (r.skill != skill) continue;
        if (mode == FrameMode::kGlobal) data.examples[e].context = object_context(spec, framed[r.demo].frames);
        ++e;
      }
      if (mode == FrameMode::kGlobal) context_dim = static_cast<int>(data.examples.front().context.size());
      // Start of the skill in each demo, as seen from this frame.
      std::vector<bool> seen(framed.size(), false);
      for (const auto& r : ds.records) {
        if (r.skill == skill && !seen[r.demo]) {
          seen[r.demo] = true;
          sm.initial_poses.push_back(StateSpace::from_pose(r.local_condition));
        }
      }

      Prior prior = training.prior;
      if (training.mixture_prior) {
        std::vector<VectorXd> comps;
        for (const auto& d : framed) comps.push_back(StateSpace::from_pose(to_local(Pose::identity(), d.frame(key))));
        prior = Prior::mixture(std::move(comps), 1.0);
      }
      TrainConfig tc = training.train;
      tc.seed = derive_seed(training.train.seed, static_cast<std::uint64_t>(skill), string_hash(key));
      FlowModel model = make_model(StateSpace::pose(), training.conditioned, training.logvar_dim, prior, tc, context_dim);
      TrainResult tr = train(std::move(model), data, tc);
      sm.model = std::make_shared<const FlowModel>(std::move(tr.model));
      out.push_back({skill, std::move(sm), std::move(tr.curve)});
    }
  }
  return out;
}

Policy assemble_policy(std::span<const TrainedStream> trained) {
  Policy p;
  for (const auto& t : trained) {
    if (t.skill >= static_cast<int>(p.size())) p.resize(t.skill + 1);
    p[t.skill].push_back(t.stream);
  }
  return p;
}

std::vector<std::vector<Stream>> instantiate(const TaskSpec& spec, const Policy& policy, const TaskInstance& inst) {
  std::vector<std::vector<Stream>> out;
  for (const auto& skill : policy) {
    std::vector<Stream> streams;
    for (const auto& sm : skill) {
      Stream s;
      s.frame = {stream_frame_pose(sm.mode, sm.frame_id, inst.frames, inst.start()), mode_key(sm.frame_id, sm.mode)};
      s.model = sm.model;
      s.initial_poses = sm.initial_poses;
      if (sm.mode == FrameMode::kGlobal) s.context = object_context(spec, inst.frames);
      streams.push_back(std::move(s));
    }
    out.push_back(std::move(streams));
  }
  return out;
}

// ---- Evaluation ---------------------------------------------------------------

EpisodeResult score_episode(const TaskSpec& spec, const TaskInstance& inst, RolloutResult rollout) {
  EpisodeResult r;
  r.finished = rollout.finished;
  r.steps = static_cast<int>(rollout.trajectory.size());
  if (rollout.trajectory.empty()) {
    r.position_error = r.rotation_error = std::numeric_limits<double>::infinity();
    r.rollout = std::move(rollout);
    return r;
  }
  const Pose target = skill_target(spec, inst, spec.skills - 1);
  const Pose final_pose = StateSpace::as_pose(rollout.trajectory.back().state);
  r.position_error = (final_pose.position - target.position).norm();
  r.rotation_error = rotation_distance(final_pose.orientation, target.orientation);
  r.reached_first = spec.skills == 1;
  if (!r.reached_first) {
    const Pose first = skill_target(spec, inst, 0);
    for (const auto& rec : rollout.trajectory) {
      const Pose p = StateSpace::as_pose(rec.state);
      if ((p.position - first.position).norm() <= spec.tolerance_position &&
          rotation_distance(p.orientation, first.orientation) <= spec.tolerance_rotation) {
        r.reached_first = true;
        break;
      }
    }
  }
  r.success = r.reached_first && r.position_error <= spec.tolerance_position &&
              r.rotation_error <= spec.tolerance_rotation;
  r.rollout = std::move(rollout);
  return r;
}

EvalResult evaluate(const TaskSpec& spec, const Policy& policy, const CompositionConfig& config, int episodes,
                    std::uint64_t seed, Execution exec) {
  if (episodes < 1) throw std::invalid_argument("episode count must be >= 1");
  config.validate();
  EvalResult out;
  out.episodes.resize(static_cast<std::size_t>(episodes));
  std::vector<std::exception_ptr> errors(out.episodes.size());
  auto run = [&](int i) {
    try {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0));
      const TaskInstance inst = sample_instance(spec, rng);
      const auto skills = instantiate(spec, policy, inst);
      RolloutResult rr = rollout(skills, StateSpace::from_pose(inst.start()), config, spec.max_steps,
                                 derive_seed(seed, static_cast<std::uint64_t>(i), 1));
      out.episodes[i] = score_episode(spec, inst, std::move(rr));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (exec == Execution::kSerial) {
    for (int i = 0; i < episodes; ++i) run(i);
  } else {
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < episodes; ++i) run(i);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  int wins = 0;
  for (const auto& e : out.episodes) wins += e.success ? 1 : 0;
  out.success_rate = static_cast<double>(wins) / episodes;
  return out;
}

// ---- Toys -------------------------------------------------------------------------

namespace {

DiagGaussian gaussian2(double mx, double my, double vx, double vy) {
  DiagGaussian g;
  g.mean = Eigen::Vector2d(mx, my);
  g.variance = Eigen::Vector2d(vx, vy);
  return g;
}

Frame planar_frame(double x, double y, double yaw, const std::string& id) { return {planar_pose(x, y, yaw), id}; }

// Standard normal about the world origin, seen from `f`.
Prior world_standard_prior(const Frame& f) {
  const StateSpace s = StateSpace::euclidean(2);
  return Prior::mixture({s.to_local(VectorXd::Zero(2), f)}, 1.0);
}

ToyStream local_copy(const Frame& f, std::span<const DiagGaussian> world_modes, const Prior& prior) {
  const StateSpace s = StateSpace::euclidean(2);
  ToyStream ts{f, {}, prior};
  Frame inv{inverse(f.pose), f.id};
  for (const auto& m : world_modes) ts.local_modes.push_back({s.to_local(m.mean, f), s.variance_to_global(m.variance, inv)});
  return ts;
}

}  // namespace

Toy bimodal_toy() {
  Toy t;
  t.name = "bimodal-2d";
  t.mode_std = 0.25;
  const double v = t.mode_std * t.mode_std;
  const std::vector<DiagGaussian> modes = {gaussian2(-2.0, 0.0, v, v), gaussian2(2.0, 0.0, v, v)};
  for (const auto& m : modes) t.mode_centers.push_back(m.mean);
  t.streams.push_back(local_copy(planar_frame(1.0, 1.0, kPi / 6, "a"), modes, Prior::standard()));
  t.streams.push_back(local_copy(planar_frame(-1.0, -1.0, -kPi / 4, "b"), modes, Prior::standard()));
  return t;
}

Toy make_toy(const std::string& name) {
  if (name == "bimodal-2d") return bimodal_toy();
  Toy t;
  t.name = name;
  if (name == "gaussian-2d") {
    t.mode_std = 0.5;
    const Frame f = planar_frame(0.0, 0.0, 0.0, "world");
    t.streams.push_back({f, {gaussian2(1.0, -0.5, 0.25, 0.25)}, Prior::standard()});
    t.mode_centers.push_back(Eigen::Vector2d(1.0, -0.5));
    return t;
  }
  if (name == "pog-2d") {
    // Overlapping anisotropic streams; the world-frame product is the oracle.
    t.logvar_supervision = true;
    const Frame a = planar_frame(0.5, 0.0, 0.0, "a");
    const Frame b = planar_frame(0.0, -0.5, kPi / 2, "b");
    t.streams.push_back({a, {gaussian2(-0.5, 0.3, 0.09, 0.25)}, world_standard_prior(a)});
    t.streams.push_back({b, {gaussian2(0.5, -0.3, 0.09, 0.25)}, world_standard_prior(b)});
    const DiagGaussian p = toy_product(t);
    t.mode_centers.push_back(p.mean);
    t.mode_std = std::sqrt(p.variance.maxCoeff());
    return t;
  }
  if (name == "unimodal-2d") {
    const Frame a = planar_frame(0.5, 0.5, kPi / 6, "a");
    const Frame b = planar_frame(-0.5, 0.2, -kPi / 3, "b");
    const std::vector<DiagGaussian> target = {gaussian2(0.3, 0.3, 0.04, 0.16)};
    t.streams.push_back(local_copy(a, target, world_standard_prior(a)));
    t.streams.push_back(local_copy(b, target, world_standard_prior(b)));
    t.mode_centers.push_back(target.front().mean);
    t.mode_std = 0.4;
    return t;
  }
  throw std::invalid_argument("unknown toy '" + name + "' (valid: " + join(toy_names()) + ")");
}

VectorXd sample_toy_stream(const ToyStream& s, Rng& rng) {
  std::size_t m = 0;
  if (s.local_modes.size() > 1) {
    std::uniform_int_distribution<std::size_t> pick(0, s.local_modes.size() - 1);
    m = pick(rng);
  }
  return sample(s.local_modes[m], rng, 1).front();
}

std::vector<VectorXd> sample_toy_target(const Toy& toy, std::size_t index, int n, Rng& rng) {
  const ToyStream& s = toy.streams.at(index);
  const StateSpace space = StateSpace::euclidean(2);
  std::vector<VectorXd> out;
  for (int i = 0; i < n; ++i) out.push_back(space.to_global(sample_toy_stream(s, rng), s.frame));
  return out;
}

FlowDataset toy_dataset(const Toy& toy, std::size_t index, int n, std::uint64_t seed) {
  const ToyStream& s = toy.streams.at(index);
  Rng rng(seed);
  FlowDataset data;
  data.space = StateSpace::euclidean(2);
  for (int i = 0; i < n; ++i) {
    FlowExample e;
    e.target = sample_toy_stream(s, rng);
    e.condition = VectorXd::Zero(2);
    if (toy.logvar_supervision) e.logvar = s.local_modes.front().variance.array().log().matrix();
    data.examples.push_back(std::move(e));
  }
  return data;
}

std::vector<Stream> train_toy_streams(const Toy& toy, const TrainConfig& config, int samples) {
  std::vector<Stream> out;
  for (std::size_t i = 0; i < toy.streams.size(); ++i) {
    const ToyStream& s = toy.streams[i];
    TrainConfig tc = config;
    tc.seed = derive_seed(config.seed, i, string_hash(toy.name));
    const FlowDataset data = toy_dataset(toy, i, samples, derive_seed(tc.seed, 7));
    FlowModel model = make_model(StateSpace::euclidean(2), false, toy.logvar_supervision ? 2 : 0, s.prior, tc);
    TrainResult tr = train(std::move(model), data, tc);
    Stream st;
    st.frame = s.frame;
    st.model = std::make_shared<const FlowModel>(std::move(tr.model));
    out.push_back(std::move(st));
  }
  return out;
}

DiagGaussian toy_product(const Toy& toy) {
  std::vector<DiagGaussian> world;
  for (const auto& s : toy.streams) {
    if (s.local_modes.size() != 1) throw std::invalid_argument("product oracle needs single-mode streams");
    world.push_back(transform(s.local_modes.front(), s.frame));
  }
  return product(world);
}

double mode_agreement(std::span<const VectorXd> states, std::span<const VectorXd> centers, double radius) {
  if (states.empty()) return 0.0;
  int hits = 0;
  for (const auto& s : states) {
    for (const auto& c : centers) {
      if ((s - c).norm() <= radius) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(states.size());
}

}  // namespace msg
