#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "msg/demo_io.hpp"
#include "msg/io_util.hpp"
#include "msg/svg.hpp"
#include "msg/tasks.hpp"

namespace msg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Config -------------------------------------------------------------------

RunConfig RunConfig::from_json(const json& j) {
  static const std::vector<std::string> known = {
      "task",     "demos",       "seed",       "seeds",       "methods", "method", "prior",
      "conditioned", "episodes", "strategies", "weightings",  "ablations", "toy_samples",
      "toy_train_samples", "train", "composition", "task_overrides", "out"};
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  RunConfig c;
  c.task = j.value("task", c.task);
  c.demos = j.value("demos", c.demos);
  if (j.contains("seed")) c.seeds = {j.at("seed").get<std::uint64_t>()};
  c.seeds = j.value("seeds", c.seeds);
  if (j.contains("method")) c.methods = {j.at("method").get<std::string>()};
  c.methods = j.value("methods", c.methods);
  c.prior = j.value("prior", c.prior);
  c.conditioned = j.value("conditioned", c.conditioned);
  c.episodes = j.value("episodes", c.episodes);
  c.strategies = j.value("strategies", c.strategies);
  c.weightings = j.value("weightings", c.weightings);
  c.ablations = j.value("ablations", c.ablations);
  c.toy_samples = j.value("toy_samples", c.toy_samples);
  c.toy_train_samples = j.value("toy_train_samples", c.toy_train_samples);
  c.train = j.value("train", c.train);
  c.composition = j.value("composition", c.composition);
  c.task_overrides = j.value("task_overrides", c.task_overrides);
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  return c;
}

json RunConfig::to_json() const {
  return {{"task", task},
          {"demos", demos},
          {"seeds", seeds},
          {"methods", methods},
          {"prior", prior},
          {"conditioned", conditioned},
          {"episodes", episodes},
          {"strategies", strategies},
          {"weightings", weightings},
          {"ablations", ablations},
          {"toy_samples", toy_samples},
          {"toy_train_samples", toy_train_samples},
          {"train", train},
          {"composition", composition},
          {"task_overrides", task_overrides},
          {"out", out.string()}};
}

fs::path resolve_out(const fs::path& flag, const fs::path& config) {
  if (!flag.empty()) return flag;
  if (!config.empty()) return config;
  if (const char* env = std::getenv("MSG_OUT_ROOT"); env && *env) return env;
  return "msg_out";
}

namespace {

// ---- Layout -------------------------------------------------------------------

fs::path task_dir(const RunConfig& c) { return c.out / c.task; }
fs::path seed_dir(const RunConfig& c, std::uint64_t seed) { return task_dir(c) / ("seed_" + std::to_string(seed)); }
fs::path demos_path(const RunConfig& c, std::uint64_t seed) { return seed_dir(c, seed) / "demos.jsonl"; }

struct PolicyVariant {
  Method method = Method::kMsg;
  std::string prior = "pose-centric";
  bool conditioned = true;

  std::string name() const {
    std::string n = to_string(method);
    if (prior != "pose-centric") n += "-" + prior;
    if (!conditioned) n += "-unconditioned";
    return n;
  }
};

fs::path policy_dir(const RunConfig& c, std::uint64_t seed, const PolicyVariant& v) {
  return seed_dir(c, seed) / v.name();
}

std::string stream_key(int skill, const std::string& frame_id, FrameMode mode) {
  std::string id = frame_id;
  if (mode == FrameMode::kGlobal) id = "world";
  if (mode == FrameMode::kOriented) id += "_oriented";
  return "skill" + std::to_string(skill) + "_" + id;
}

std::string mode_name(FrameMode m) {
  switch (m) {
    case FrameMode::kObject: return "object";
    case FrameMode::kGlobal: return "global";
    case FrameMode::kOriented: return "oriented";
  }
  return "object";
}

FrameMode mode_from_name(const std::string& s) {
  if (s == "object") return FrameMode::kObject;
  if (s == "global") return FrameMode::kGlobal;
  if (s == "oriented") return FrameMode::kOriented;
  throw std::runtime_error("unknown frame mode '" + s + "' in manifest");
}

// ---- Shared helpers -------------------------------------------------------------

TaskSpec load_task(const RunConfig& c) {
  TaskSpec spec = task_spec(c.task);
  if (!c.task_overrides.empty()) {
    spec.apply_json(c.task_overrides);
    spec.validate();
  }
  return spec;
}

void require_task(const TaskSpec& spec) {
  if (spec.is_toy()) throw std::invalid_argument("'" + spec.name + "' is a toy; use the toy command");
}

void require_seeds(const RunConfig& c) {
  if (c.seeds.empty()) throw std::invalid_argument("no seeds given");
}

Prior prior_from_name(const std::string& name) {
  if (name == "pose-centric") return Prior::pose_centric();
  if (name == "standard" || name == "mixture") return Prior::standard();
  throw std::invalid_argument("unknown prior '" + name + "' (expected pose-centric, standard or mixture)");
}

std::string csv_number(double v) { return format_double(v); }

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation; 0 for a single value.
MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

std::vector<Demonstration> load_demos(const RunConfig& c, std::uint64_t seed) {
  const fs::path p = demos_path(c, seed);
  if (!fs::exists(p)) throw std::runtime_error("missing demonstrations " + p.string() + " (run gen first)");
  return read_demos(p);
}

void train_variant(const RunConfig& c, const TaskSpec& spec, std::uint64_t seed, const PolicyVariant& v,
                   bool overwrite) {
  const fs::path dir = policy_dir(c, seed, v);
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path) && !overwrite) {
    throw std::runtime_error("checkpoints already exist in " + dir.string() + " (pass --overwrite to retrain)");
  }
  const auto demos = load_demos(c, seed);

  PolicyTraining pt;
  pt.method = v.method;
  pt.prior = prior_from_name(v.prior);
  pt.mixture_prior = v.prior == "mixture";
  pt.conditioned = v.conditioned;
  pt.train = TrainConfig::from_json(c.train, desk_train_config());
  pt.train.seed = seed;
  const auto trained = train_policy(spec, demos, pt);

  json streams = json::array();
  for (const auto& t : trained) {
    const std::string key = stream_key(t.skill, t.stream.frame_id, t.stream.mode);
    const fs::path ckpt = fs::path("streams") / (key + ".ckpt");
    const fs::path loss = fs::path("loss") / (key + ".csv");
    json initial = json::array();
    for (const auto& p : t.stream.initial_poses) initial.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    save_model(*t.stream.model, dir / ckpt,
               {{"skill", t.skill}, {"frame", t.stream.frame_id}, {"mode", mode_name(t.stream.mode)},
                {"initial_poses", initial}});
    write_file_atomic(dir / loss, loss_curve_csv(t.curve));
    streams.push_back({{"skill", t.skill},
                       {"frame", t.stream.frame_id},
                       {"mode", mode_name(t.stream.mode)},
                       {"checkpoint", ckpt.generic_string()},
                       {"loss_curve", loss.generic_string()}});
  }
  const json manifest = {{"task", spec.name},
                         {"method", to_string(v.method)},
                         {"prior", v.prior},
                         {"conditioned", v.conditioned},
                         {"seed", seed},
                         {"demos", demos.size()},
                         {"train", pt.train.to_json()},
                         {"streams", streams}};
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

Policy load_policy(const RunConfig& c, std::uint64_t seed, const PolicyVariant& v) {
  const fs::path dir = policy_dir(c, seed, v);
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("missing checkpoints for policy '" + v.name() + "' seed " + std::to_string(seed) +
                             ": " + manifest_path.string() + " not found (run train first)");
  }
  const json manifest = json::parse(read_file(manifest_path));
  Policy policy;
  for (const auto& s : manifest.at("streams")) {
    const int skill = s.at("skill").get<int>();
    StreamModel sm;
    sm.frame_id = s.at("frame").get<std::string>();
    sm.mode = mode_from_name(s.at("mode").get<std::string>());
    const fs::path ckpt = dir / s.at("checkpoint").get<std::string>();
    const std::string label = "skill " + std::to_string(skill) + " frame '" + sm.frame_id + "'";
    if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint for stream " + label + ": " + ckpt.string());
    json extra;
    try {
      sm.model = std::make_shared<const FlowModel>(load_model(ckpt, &extra));
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot load checkpoint for stream " + label + ": " + e.what());
    }
    for (const auto& p : extra.at("initial_poses")) {
      const auto v = p.get<std::vector<double>>();
      sm.initial_poses.push_back(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    if (skill >= static_cast<int>(policy.size())) policy.resize(skill + 1);
    policy[skill].push_back(std::move(sm));
  }
  return policy;
}

Policy load_or_train(const RunConfig& c, const TaskSpec& spec, std::uint64_t seed, const PolicyVariant& v) {
  if (!fs::exists(policy_dir(c, seed, v) / "manifest.json")) train_variant(c, spec, seed, v, false);
  return load_policy(c, seed, v);
}

CompositionConfig composition_for(const RunConfig& c, const TaskSpec& spec, Strategy s, Weighting w) {
  CompositionConfig cfg = CompositionConfig::make(s, w);
  if (!spec.is_toy()) cfg.switch_threshold = spec.switch_threshold;
  return CompositionConfig::from_json(c.composition, cfg);
}

bool single_stream(const Policy& p) {
  return std::all_of(p.begin(), p.end(), [](const auto& skill) { return skill.size() == 1; });
}

std::uint64_t eval_seed(std::uint64_t seed) { return derive_seed(seed, 1000); }

template <typename T, typename F>
std::vector<T> parse_list(const std::vector<std::string>& names, F parse) {
  std::vector<T> out;
  for (const auto& n : names) out.push_back(parse(n));
  return out;
}

// ---- Plots ----------------------------------------------------------------------

std::string trajectory_plot(const TaskSpec& spec, const EvalResult& ev, std::uint64_t seed, const std::string& title) {
  svg::Chart chart;
  chart.title = title;
  chart.x_label = "x";
  chart.y_label = "y";
  chart.equal_aspect = true;
  const int shown = std::min<int>(6, static_cast<int>(ev.episodes.size()));
  std::map<std::string, svg::Series> frames;
  for (int i = 0; i < shown; ++i) {
    svg::Series s;
    s.label = "episode " + std::to_string(i) + (ev.episodes[i].success ? " (success)" : " (failure)");
    s.color = svg::palette(static_cast<std::size_t>(i));
    s.line = true;
    for (const auto& rec : ev.episodes[i].rollout.trajectory) s.points.emplace_back(rec.state[0], rec.state[1]);
    chart.series.push_back(std::move(s));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0));
    const TaskInstance inst = sample_instance(spec, rng);
    for (const auto& [id, pose] : inst.frames) {
      auto& f = frames[id];
      f.label = "frame " + id;
      f.points.emplace_back(pose.position.x(), pose.position.y());
    }
  }
  std::size_t k = static_cast<std::size_t>(shown);
  for (auto& [id, s] : frames) {
    s.color = svg::palette(k++);
    chart.series.push_back(std::move(s));
  }
  return svg::render(chart);
}

// ---- Toy helpers ------------------------------------------------------------------

struct SampleMoments {
  VectorXd mean;
  VectorXd std;
};

SampleMoments moments(const std::vector<VectorXd>& xs) {
  SampleMoments m;
  m.mean = VectorXd::Zero(xs.front().size());
  for (const auto& x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  VectorXd ss = VectorXd::Zero(m.mean.size());
  for (const auto& x : xs) ss += (x - m.mean).cwiseAbs2();
  m.std = (ss / static_cast<double>(xs.size())).cwiseSqrt();
  return m;
}

}  // namespace

// ---- Commands -------------------------------------------------------------------

void cmd_gen(const RunConfig& c) {
  const TaskSpec spec = load_task(c);
  require_task(spec);
  require_seeds(c);
  if (c.demos < 1) throw std::invalid_argument("demo count must be >= 1");
  for (std::uint64_t seed : c.seeds) {
    const auto demos = generate_demos(spec, c.demos, seed);
    write_demos(demos_path(c, seed), demos);
    std::cout << "wrote " << demos.size() << " demonstrations to " << demos_path(c, seed).string() << "\n";
  }
}

void cmd_train(const RunConfig& c) {
  const TaskSpec spec = load_task(c);
  require_task(spec);
  require_seeds(c);
  for (std::uint64_t seed : c.seeds) {
    for (const auto& m : c.methods) {
      const PolicyVariant v{method_from_string(m), c.prior, c.conditioned};
      train_variant(c, spec, seed, v, c.overwrite);
      std::cout << "trained " << v.name() << " seed " << seed << " in " << policy_dir(c, seed, v).string() << "\n";
    }
  }
}

void cmd_eval(const RunConfig& c) {
  const TaskSpec spec = load_task(c);
  require_task(spec);
  require_seeds(c);
  const auto strategies = parse_list<Strategy>(c.strategies.empty() ? std::vector<std::string>{"flow"} : c.strategies,
                                               strategy_from_string);
  const auto weightings = parse_list<Weighting>(
      c.weightings.empty() ? std::vector<std::string>{"logvar-full"} : c.weightings, weighting_from_string);

  struct Row {
    std::string method, strategy, weighting;
    std::vector<double> rates;
  };
  std::vector<Row> rows;
  std::ostringstream csv;
  csv << "task,method,strategy,weighting,seed,episodes,success_rate,std\n";
  std::ostringstream log;
  std::string trajectories_svg;
  svg::Chart weights_chart;
  weights_chart.title = spec.name + ": weight of the first stream";
  weights_chart.x_label = "composed progress";
  weights_chart.y_label = "mean position weight";

  for (const auto& m : c.methods) {
    const PolicyVariant v{method_from_string(m), c.prior, c.conditioned};
    for (std::uint64_t seed : c.seeds) {
      const Policy policy = load_policy(c, seed, v);
      const bool single = single_stream(policy);
      // A single stream ignores the weighting, so it gets one row labelled by the method.
      std::vector<std::pair<Strategy, Weighting>> grid;
      if (single) {
        grid.emplace_back(Strategy::kFlow, Weighting::kConstant);
      } else {
        for (Strategy s : strategies) {
          for (Weighting w : weightings) grid.emplace_back(s, w);
        }
      }
      for (const auto& [s, w] : grid) {
        const CompositionConfig cfg = composition_for(c, spec, s, w);
        const std::string sname = single ? v.name() : to_string(s);
        const std::string wname = single ? v.name() : to_string(w);
        const EvalResult ev = evaluate(spec, policy, cfg, c.episodes, eval_seed(seed));
        csv << spec.name << ',' << v.name() << ',' << sname << ',' << wname << ',' << seed << ',' << c.episodes << ','
            << csv_number(ev.success_rate) << ",\n";
        auto it = std::find_if(rows.begin(), rows.end(), [&](const Row& r) {
          return r.method == v.name() && r.strategy == sname && r.weighting == wname;
        });
        if (it == rows.end()) {
          rows.push_back({v.name(), sname, wname, {}});
          it = rows.end() - 1;
        }
        it->rates.push_back(ev.success_rate);

        for (std::size_t i = 0; i < ev.episodes.size(); ++i) {
          const auto& e = ev.episodes[i];
          json traj = json::array();
          for (const auto& rec : e.rollout.trajectory) traj.push_back(trajectory_record_json(rec));
          log << json{{"task", spec.name},
                      {"method", v.name()},
                      {"strategy", sname},
                      {"weighting", wname},
                      {"seed", seed},
                      {"episode", i},
                      {"success", e.success},
                      {"position_error", e.position_error},
                      {"rotation_error", e.rotation_error},
                      {"steps", e.steps},
                      {"trajectory", traj}}
                     .dump()
              << "\n";
        }
        if (trajectories_svg.empty()) {
          trajectories_svg = trajectory_plot(spec, ev, eval_seed(seed),
                                             spec.name + ": " + v.name() + " " + sname + " " + wname);
        }
        if (seed == c.seeds.front() && !single && !ev.episodes.empty()) {
          svg::Series series;
          series.label = sname + " / " + wname;
          series.color = svg::palette(weights_chart.series.size());
          series.line = true;
          for (const auto& rec : ev.episodes.front().rollout.trajectory) {
            if (rec.weights.empty()) continue;
            series.points.emplace_back(rec.progress, rec.weights.front().head(3).mean());
          }
          weights_chart.series.push_back(std::move(series));
        }
      }
    }
  }
  for (const auto& r : rows) {
    const MeanStd ms = mean_std(r.rates);
    csv << spec.name << ',' << r.method << ',' << r.strategy << ',' << r.weighting << ",mean," << c.episodes << ','
        << csv_number(ms.mean) << ',' << csv_number(ms.std) << "\n";
  }
  const fs::path dir = task_dir(c) / "eval";
  write_file_atomic(dir / "results.csv", csv.str());
  write_file_atomic(dir / "trajectories.jsonl", log.str());
  write_file_atomic(dir / "trajectories.svg", trajectories_svg.empty() ? svg::render({}) : trajectories_svg);
  write_file_atomic(dir / "weights.svg", svg::render(weights_chart));
  write_file_atomic(dir / "config.json", c.to_json().dump(2) + "\n");
  std::cout << csv.str();
}

void cmd_ablate(const RunConfig& c) {
  const TaskSpec spec = load_task(c);
  require_task(spec);
  require_seeds(c);
  const Strategy base = strategy_from_string(c.strategies.empty() ? "flow-mcmc" : c.strategies.front());
  const auto weightings = parse_list<Weighting>(
      c.weightings.empty() ? std::vector<std::string>{"logvar-full"} : c.weightings, weighting_from_string);

  std::ostringstream csv;
  csv << "task,ablation,strategy,weighting,seeds,success_rate,std\n";
  for (const auto& flag : c.ablations) {
    PolicyVariant v{Method::kMsg, "pose-centric", true};
    Strategy s = base;
    bool matching = true;
    bool matched_steps = false;
    if (flag == "full") {
    } else if (flag == "no-custom-prior") {
      v.prior = "standard";
    } else if (flag == "no-sample-matching") {
      matching = false;
    } else if (flag == "no-conditioning") {
      v.conditioned = false;
    } else if (flag == "mcmc-matched-steps") {
      s = Strategy::kFlow;
      matched_steps = true;
    } else if (flag == "mixture-prior") {
      v.prior = "mixture";
    } else {
      throw std::invalid_argument("unknown ablation '" + flag +
                                  "' (expected full, no-custom-prior, no-sample-matching, no-conditioning, "
                                  "mcmc-matched-steps or mixture-prior)");
    }
    for (Weighting w : weightings) {
      std::vector<double> rates;
      for (std::uint64_t seed : c.seeds) {
        // The pose-centric policy must already exist; other priors are trained on demand.
        const Policy policy = v.name() == "msg" ? load_policy(c, seed, v) : load_or_train(c, spec, seed, v);
        CompositionConfig cfg = composition_for(c, spec, s, w);
        cfg.sample_matching = matching;
        cfg.matched_steps = matched_steps;
        cfg.validate();
        rates.push_back(evaluate(spec, policy, cfg, c.episodes, eval_seed(seed)).success_rate);
      }
      const MeanStd ms = mean_std(rates);
      csv << spec.name << ',' << flag << ',' << to_string(s) << ',' << to_string(w) << ',' << rates.size() << ','
          << csv_number(ms.mean) << ',' << csv_number(ms.std) << "\n";
    }
  }
  write_file_atomic(task_dir(c) / "ablate" / "ablation.csv", csv.str());
  std::cout << csv.str();
}

void cmd_toy(const RunConfig& c) {
  const TaskSpec spec = load_task(c);
  if (!spec.is_toy()) throw std::invalid_argument("'" + spec.name + "' is not a toy (valid: bimodal-2d, gaussian-2d, pog-2d, unimodal-2d)");
  require_seeds(c);
  if (c.toy_samples < 2) throw std::invalid_argument("toy sample count must be >= 2");
  const Toy toy = make_toy(spec.name);
  const auto strategies = parse_list<Strategy>(
      c.strategies.empty() ? std::vector<std::string>{"ensemble", "flow", "flow-mcmc"} : c.strategies,
      strategy_from_string);
  const Weighting weighting = weighting_from_string(
      !c.weightings.empty() ? c.weightings.front() : (toy.logvar_supervision ? "logvar-full" : "constant"));
  if (is_particle(weighting)) throw std::invalid_argument("particle weighting needs a rollout; toys sample one step");

  std::ostringstream csv;
  csv << "toy,strategy,weighting,seed,samples,mean_x,mean_y,std_x,std_y,mode_agreement\n";
  const double radius = 3.0 * toy.mode_std;
  const fs::path dir = task_dir(c) / "toy";
  for (std::uint64_t seed : c.seeds) {
    TrainConfig tc = TrainConfig::from_json(c.train, toy_train_config());
    tc.seed = seed;
    const auto streams = train_toy_streams(toy, tc, c.toy_train_samples);
    ComposeInput input;
    input.condition = VectorXd::Zero(2);
    for (Strategy s : strategies) {
      const CompositionConfig cfg = composition_for(c, spec, s, weighting);
      const auto results = compose_samples(streams, input, cfg, derive_seed(seed, 2000), c.toy_samples);
      std::vector<VectorXd> xs;
      for (const auto& r : results) xs.push_back(r.state);
      const SampleMoments m = moments(xs);
      csv << toy.name << ',' << to_string(s) << ',' << to_string(weighting) << ',' << seed << ',' << xs.size() << ','
          << csv_number(m.mean[0]) << ',' << csv_number(m.mean[1]) << ',' << csv_number(m.std[0]) << ','
          << csv_number(m.std[1]) << ',' << csv_number(mode_agreement(xs, toy.mode_centers, radius)) << "\n";
      if (seed != c.seeds.front()) continue;
      svg::Chart chart;
      chart.title = toy.name + ": " + to_string(s);
      chart.x_label = "x";
      chart.y_label = "y";
      chart.equal_aspect = true;
      Rng rng(derive_seed(seed, 3000));
      for (std::size_t i = 0; i < toy.streams.size(); ++i) {
        svg::Series target;
        target.label = "stream " + toy.streams[i].frame.id + " target";
        target.color = svg::palette(i + 1);
        for (const auto& p : sample_toy_target(toy, i, 200, rng)) target.points.emplace_back(p[0], p[1]);
        chart.series.push_back(std::move(target));
      }
      svg::Series composed;
      composed.label = "composed";
      composed.color = svg::palette(0);
      for (const auto& x : xs) composed.points.emplace_back(x[0], x[1]);
      chart.series.push_back(std::move(composed));
      svg::Series centers;
      centers.label = "mode centers";
      centers.color = "#000000";
      for (const auto& p : toy.mode_centers) centers.points.emplace_back(p[0], p[1]);
      chart.series.push_back(std::move(centers));
      write_file_atomic(dir / ("scatter_" + to_string(s) + ".svg"), svg::render(chart));
    }
  }
  write_file_atomic(dir / "results.csv", csv.str());
  std::cout << csv.str();
}

}  // namespace msg::cli
