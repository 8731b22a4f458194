// Acceptance checks. Usage: acceptance [criterion...]; no arguments runs all.
// Prints one "criterion N: PASS|FAIL ..." line per criterion and exits
// nonzero when any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "msg/compose.hpp"
#include "msg/io_util.hpp"
#include "msg/manifold.hpp"
#include "msg/nn.hpp"
#include "msg/tasks.hpp"

using namespace msg;
namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double quat_gap(const Quat& a, const Quat& b) {
  return std::min((a.coeffs() - b.coeffs()).norm(), (a.coeffs() + b.coeffs()).norm());
}

double pose_gap(const Pose& a, const Pose& b) {
  return (a.position - b.position).norm() + quat_gap(a.orientation, b.orientation);
}

Pose random_pose(Rng& rng) {
  Pose p;
  p.position = 2.0 * standard_normal(3, rng);
  p.orientation = canonical(Quat(standard_normal(4, rng).data()));
  return p;
}

// ---- 1: geometry ----------------------------------------------------------

Outcome geometry() {
  Rng rng(1);
  double roundtrip = 0.0, norms = 0.0, ends = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Pose p = random_pose(rng);
    const Frame f{random_pose(rng), "f"};
    roundtrip = std::max(roundtrip, pose_gap(to_global(to_local(p, f), f), p));
    const Tangent v = Tangent::from_stacked(standard_normal(6, rng));
    const Tangent w = transform_tangent(v, f);
    norms = std::max({norms, std::abs(w.linear.norm() - v.linear.norm()), std::abs(w.angular.norm() - v.angular.norm())});
    const Pose q = random_pose(rng);
    ends = std::max({ends, pose_gap(geodesic_interpolate(p, q, 0.0), p), pose_gap(geodesic_interpolate(p, q, 1.0), q)});
  }
  const double worst = std::max({roundtrip, norms, ends});
  return {worst < 1e-9, fmt("round trip %.1e, tangent norms %.1e, geodesic endpoints %.1e over 1e4 cases", roundtrip,
                            norms, ends)};
}

// ---- 2: gradients ---------------------------------------------------------

double linear_loss(const nn::Network& net, const MatrixXd& x, const nn::OutputAdjoint& adj) {
  const nn::Outputs out = nn::forward(net, x);
  double l = (out.velocity.array() * adj.velocity.array()).sum() + (out.progress.array() * adj.progress.array()).sum();
  if (adj.logvar.size() > 0) l += (out.logvar.array() * adj.logvar.array()).sum();
  return l;
}

Outcome gradients() {
  Rng rng(2);
  double worst = 0.0;
  auto normal = [&] { return standard_normal(1, rng)[0]; };
  for (int k = 0; k < 20; ++k) {
    nn::Architecture a;
    a.state_features = 2 + k % 8;
    a.condition_features = k % 3 == 0 ? 0 : a.state_features;
    a.time_features = 4;
    a.velocity_dim = k % 2 ? 6 : 2;
    a.logvar_dim = k % 3 == 0 ? 0 : (k % 3 == 1 ? 2 : a.velocity_dim);
    a.hidden = std::vector<int>(1 + k % 3, 4 + k % 5);
    a.activation = k % 2 ? nn::Activation::kTanh : nn::Activation::kSilu;
    nn::Network net(a, 100 + k);
    const int batch = 3;
    const MatrixXd x = MatrixXd::NullaryExpr(a.input_dim(), batch, normal);
    const nn::OutputAdjoint adj{MatrixXd::NullaryExpr(a.velocity_dim, batch, normal),
                                RowVectorXd::NullaryExpr(batch, normal),
                                MatrixXd::NullaryExpr(a.logvar_dim, batch, normal)};
    nn::ForwardCache cache;
    nn::forward(net, x, &cache);
    std::vector<double> grad(net.size(), 0.0);
    nn::gradient(net, cache, adj, grad);
    double err = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < net.size(); ++i) {
      const double keep = net.params()[i];
      net.params()[i] = keep + 1e-5;
      const double up = linear_loss(net, x, adj);
      net.params()[i] = keep - 1e-5;
      const double down = linear_loss(net, x, adj);
      net.params()[i] = keep;
      const double fd = (up - down) / 2e-5;
      err += (grad[i] - fd) * (grad[i] - fd);
      norm += fd * fd;
    }
    worst = std::max(worst, std::sqrt(err / norm));
  }
  return {worst < 1e-4, fmt("worst relative gradient error %.2e over 20 networks", worst)};
}

// ---- 3-6: toys ------------------------------------------------------------

struct Moments {
  Eigen::Vector2d mean;
  Eigen::Vector2d std;
};

Moments moments(const std::vector<ComposeResult>& rs) {
  Moments m{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  for (const auto& r : rs) m.mean += r.state;
  m.mean /= static_cast<double>(rs.size());
  for (const auto& r : rs) m.std += (r.state - m.mean).cwiseAbs2();
  m.std = (m.std / static_cast<double>(rs.size())).cwiseSqrt();
  return m;
}

std::vector<Stream> toy_streams(const Toy& toy, std::uint64_t seed) {
  TrainConfig tc = toy_train_config();
  tc.seed = seed;
  return train_toy_streams(toy, tc, 2048);
}

ComposeInput toy_input() { return {VectorXd::Zero(2), 0.0, {}}; }

Outcome single_stream() {
  const Toy toy = make_toy("gaussian-2d");
  const DiagGaussian target = toy_product(toy);
  const Eigen::Vector2d sigma = target.variance.cwiseSqrt();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    CompositionConfig cfg = CompositionConfig::make(Strategy::kFlow, Weighting::kConstant);
    cfg.flow_steps = 50;
    const Moments m = moments(compose_samples(toy_streams(toy, seed), toy_input(), cfg, seed, 1000));
    const double mean_err = ((m.mean - target.mean).cwiseAbs().cwiseQuotient(sigma)).maxCoeff();
    const double std_err = ((m.std - sigma).cwiseAbs().cwiseQuotient(sigma)).maxCoeff();
    ok = ok && mean_err <= 0.1 && std_err <= 0.15;
    detail += fmt("seed %d mean err %.3f sigma, std err %.1f%%; ", static_cast<int>(seed), mean_err, 100 * std_err);
  }
  return {ok, detail + "50 Euler steps"};
}

Outcome product_oracle() {
  const Toy toy = make_toy("pog-2d");
  const DiagGaussian prod = toy_product(toy);
  const Eigen::Vector2d sd = prod.variance.cwiseSqrt();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto streams = toy_streams(toy, seed);
    for (Strategy s : {Strategy::kEnsemble, Strategy::kFlow}) {
      const auto rs = compose_samples(streams, toy_input(), CompositionConfig::make(s, Weighting::kLogvarFull), seed, 1000);
      const double err = (moments(rs).mean - prod.mean).cwiseAbs().cwiseQuotient(sd).maxCoeff();
      ok = ok && err <= 0.15;
      detail += fmt("seed %d %s %.3f; ", static_cast<int>(seed), to_string(s).c_str(), err);
    }
  }
  return {ok, detail + "mean error in composite std"};
}

Outcome mode_agreement_check() {
  const Toy toy = bimodal_toy();
  std::map<Strategy, double> rate;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto streams = toy_streams(toy, seed);
    for (Strategy s : {Strategy::kEnsemble, Strategy::kFlow, Strategy::kFlowMcmc}) {
      const auto rs = compose_samples(streams, toy_input(), CompositionConfig::make(s, Weighting::kConstant), seed, 500);
      std::vector<VectorXd> xs;
      for (const auto& r : rs) xs.push_back(r.state);
      rate[s] += mode_agreement(xs, toy.mode_centers, 3 * toy.mode_std) / 3.0;
    }
  }
  const double ens = rate[Strategy::kEnsemble], flow = rate[Strategy::kFlow], mcmc = rate[Strategy::kFlowMcmc];
  return {flow - ens >= 0.20 && mcmc >= flow,
          fmt("common-mode rate ensemble %.3f, flow %.3f, flow-mcmc %.3f (500 samples x 3 seeds)", ens, flow, mcmc)};
}

Outcome variance_contraction() {
  const Toy toy = make_toy("unimodal-2d");
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto streams = toy_streams(toy, seed);
    const Moments flow =
        moments(compose_samples(streams, toy_input(), CompositionConfig::make(Strategy::kFlow, Weighting::kConstant), seed, 1000));
    const Moments mcmc = moments(
        compose_samples(streams, toy_input(), CompositionConfig::make(Strategy::kFlowMcmc, Weighting::kConstant), seed, 1000));
    ok = ok && (mcmc.std.array() <= flow.std.array()).all();
    detail += fmt("seed %d std flow (%.3f, %.3f) mcmc (%.3f, %.3f); ", static_cast<int>(seed), flow.std[0], flow.std[1],
                  mcmc.std[0], mcmc.std[1]);
  }
  return {ok, detail};
}

// ---- 7, 8, 10: desk tasks -------------------------------------------------

Policy train_desk(const TaskSpec& spec, std::uint64_t seed, PolicyTraining pt) {
  pt.train = desk_train_config();
  pt.train.seed = seed;
  const auto demos = generate_demos(spec, 5, seed);
  return assemble_policy(train_policy(spec, demos, pt));
}

double success(const TaskSpec& spec, const Policy& policy, Strategy s, Weighting w, std::uint64_t seed,
               bool matching = true) {
  CompositionConfig cfg = CompositionConfig::make(s, w);
  cfg.switch_threshold = spec.switch_threshold;
  cfg.sample_matching = matching;
  return evaluate(spec, policy, cfg, 50, derive_seed(seed, 1000)).success_rate;
}

Outcome multi_stream() {
  bool ok = true;
  std::string detail;
  for (const std::string task : {"reach", "place"}) {
    const TaskSpec spec = task_spec(task);
    std::map<std::string, double> mean;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      PolicyTraining pt;
      pt.method = Method::kMsg;
      const Policy msg = train_desk(spec, seed, pt);
      for (Strategy s : {Strategy::kEnsemble, Strategy::kFlow, Strategy::kFlowMcmc}) {
        for (Weighting w : {Weighting::kLogvarFull, Weighting::kLogvarGrouped}) {
          mean["msg/" + to_string(s) + "/" + to_string(w)] += success(spec, msg, s, w, seed) / 3.0;
        }
      }
      for (Method m : {Method::kObjectFrame, Method::kGlobal, Method::kAcpl}) {
        pt.method = m;
        mean[to_string(m)] += success(spec, train_desk(spec, seed, pt), Strategy::kFlow, Weighting::kConstant, seed) / 3.0;
      }
    }
    std::string best_name;
    double best = -1.0;
    for (const auto& [k, v] : mean) {
      if (k.rfind("msg/", 0) == 0 && v > best) best = v, best_name = k;
    }
    const double object = mean["object-frame"], global = mean["global"], acpl = mean["acpl"];
    const bool global_last = global < std::min({best, object, acpl});
    ok = ok && best - object >= 0.10 && global_last;
    detail += fmt("%s: best %s %.3f, object-frame %.3f, global %.3f, acpl %.3f; ", task.c_str(), best_name.c_str(), best,
                  object, global, acpl);
  }
  return {ok, detail};
}

Outcome ablations() {
  const TaskSpec spec = task_spec("reach");
  const Weighting w = Weighting::kLogvarFull;
  double flow = 0, unmatched = 0, flow_std = 0, flow_mix = 0, mcmc = 0, mcmc_std = 0, mcmc_mix = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    PolicyTraining pt;
    const Policy custom = train_desk(spec, seed, pt);
    flow += success(spec, custom, Strategy::kFlow, w, seed) / 3;
    unmatched += success(spec, custom, Strategy::kFlow, w, seed, false) / 3;
    mcmc += success(spec, custom, Strategy::kFlowMcmc, w, seed) / 3;
    pt.prior = Prior::standard();
    const Policy standard = train_desk(spec, seed, pt);
    flow_std += success(spec, standard, Strategy::kFlow, w, seed) / 3;
    mcmc_std += success(spec, standard, Strategy::kFlowMcmc, w, seed) / 3;
    pt.mixture_prior = true;
    const Policy mixture = train_desk(spec, seed, pt);
    flow_mix += success(spec, mixture, Strategy::kFlow, w, seed) / 3;
    mcmc_mix += success(spec, mixture, Strategy::kFlowMcmc, w, seed) / 3;
  }
  const bool matching = flow - unmatched >= 0.15;
  const bool prior = mcmc_std < mcmc;
  const bool mix_flow = flow_mix > flow_std;
  const bool mix_mcmc = mcmc_mix <= mcmc;
  return {matching && prior && mix_flow && mix_mcmc,
          fmt("flow matched %.3f vs unmatched %.3f; mcmc custom %.3f vs standard %.3f; flow mixture %.3f vs standard "
              "%.3f; mcmc mixture %.3f vs custom %.3f",
              flow, unmatched, mcmc, mcmc_std, flow_mix, flow_std, mcmc_mix, mcmc)};
}

Outcome particle_retention() {
  const TaskSpec spec = task_spec("reach");
  PolicyTraining pt;
  pt.prior = Prior::pose_centric(0.0, 0.0);
  const Policy policy = train_desk(spec, 0, pt);
  bool ok = true;
  std::string detail;
  for (int ep = 0; ep < 3; ++ep) {
    Rng rng(derive_seed(7, ep, 0));
    const TaskInstance inst = sample_instance(spec, rng);
    const auto skills = instantiate(spec, policy, inst);
    for (bool virtual_poses : {true, false}) {
      CompositionConfig cfg = CompositionConfig::make(Strategy::kFlow, Weighting::kParticleFull);
      cfg.virtual_poses = virtual_poses;
      cfg.switch_threshold = 0.999;
      const RolloutResult r = rollout(skills, StateSpace::from_pose(inst.start()), cfg, 10, derive_seed(7, ep, 1));
      const double ratio = r.particle_std.back() / r.particle_std.front();
      // Entry 0 is the initial population; a skill switch would add a reset entry.
      ok = ok && r.particle_std.size() == 11 && (virtual_poses ? ratio >= 0.10 : ratio < 0.01);
      detail += fmt("ep %d %s %.3f; ", ep, virtual_poses ? "virtual" : "true", ratio);
    }
  }
  return {ok, detail + "std after 10 steps / initial, degenerate pose-centric prior"};
}

// ---- 9: weights -----------------------------------------------------------

Outcome weight_exactness() {
  const StateSpace pose = StateSpace::pose();
  double worst = 0.0;
  bool exact = true;
  auto first = [&](Weighting w, double p) { return compute_weights({w, 8}, pose, 2, p)[0][0]; };
  for (double p : {0.0, 0.5, 1.0}) {
    exact = exact && first(Weighting::kConstant, p) == 0.5;
    exact = exact && first(Weighting::kThreshold, p) == (p < 0.5 ? 1.0 : 0.0);
    exact = exact && first(Weighting::kLinear, p) == p;
    exact = exact && first(Weighting::kExponential, p) == (1 - p) * (1 - p) * (1 - p) * (1 - p);
  }
  auto check = [&](const std::vector<VectorXd>& w, const std::vector<double>& expect) {
    for (std::size_t f = 0; f < expect.size(); ++f) worst = std::max(worst, (w[f].array() - expect[f]).abs().maxCoeff());
  };
  // Logvars ln 1, ln 2, ln 4: weights proportional to 1, 1/2, 1/4.
  const std::vector<VectorXd> lv = {VectorXd::Zero(6), VectorXd::Constant(6, std::log(2.0)),
                                    VectorXd::Constant(6, std::log(4.0))};
  check(compute_weights({Weighting::kLogvarFull, 8}, pose, 3, 0, lv), {4.0 / 7, 2.0 / 7, 1.0 / 7});
  check(compute_weights({Weighting::kLogvarGrouped, 8}, pose, 3, 0, lv), {4.0 / 7, 2.0 / 7, 1.0 / 7});
  const std::vector<VectorXd> var = {VectorXd::Constant(6, 1.0), VectorXd::Constant(6, 3.0)};
  check(compute_weights({Weighting::kParticleFull, 8}, pose, 2, 0, {}, var), {0.75, 0.25});
  // Grouped: position variances (1, 2, 3) pool to 2 against 1, orientation 1 against 1.
  VectorXd a = VectorXd::Ones(6);
  a.head<3>() << 1, 2, 3;
  const std::vector<VectorXd> grouped_in = {a, VectorXd::Ones(6)};
  const auto g = compute_weights({Weighting::kParticleGrouped, 8}, pose, 2, 0, {}, grouped_in);
  worst = std::max({worst, std::abs(g[0][1] - 1.0 / 3), std::abs(g[1][1] - 2.0 / 3), std::abs(g[0][4] - 0.5)});
  return {exact && worst <= 1e-12, fmt("schedules exact: %s; worst normalized-weight error %.1e", exact ? "yes" : "no", worst)};
}

// ---- 11: reproducibility --------------------------------------------------

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = std::string(MSG_CLI_PATH) + " " + args + " --config " + (dir / "run.json").string() +
                          " --out " + (dir / "out").string() + " > " + (dir / "log.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "msg_acceptance_repro";
  std::vector<std::string> csv;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "run.json") << R"({"task": "reach", "demos": 5, "seeds": [0, 1],
      "train": {"epochs": 40, "steps_per_epoch": 10}, "episodes": 10,
      "methods": ["msg", "object-frame"], "strategies": ["ensemble", "flow", "flow-mcmc"],
      "weightings": ["logvar-full", "particle-grouped"]})";
    for (const char* cmd : {"gen", "train", "eval"}) {
      if (run_cli(dir, cmd) != 0) return {false, std::string(cmd) + " failed: " + read_file(dir / "log.txt")};
    }
    csv.push_back(read_file(dir / "out/reach/eval/results.csv"));
  }
  fs::remove_all(dir);
  const int rows = static_cast<int>(std::count(csv[0].begin(), csv[0].end(), '\n'));
  return {!csv[0].empty() && csv[0] == csv[1], fmt("two eval runs, %d CSV lines, byte-identical: %s", rows,
                                                   csv[0] == csv[1] ? "yes" : "no")};
}

struct Criterion {
  std::function<Outcome()> run;
  double budget_s;  // runtime limit; 0 when none is stated
};

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, Criterion> criteria = {
      {1, {geometry, 5}},
      {2, {gradients, 30}},
      {3, {single_stream, 180}},
      {4, {product_oracle, 300}},
      {5, {mode_agreement_check, 0}},
      {6, {variance_contraction, 0}},
      {7, {multi_stream, 1200}},
      {8, {ablations, 0}},
      {9, {weight_exactness, 0}},
      {10, {particle_retention, 0}},
      {11, {reproducibility, 0}},
  };
  std::vector<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.push_back(std::atoi(argv[i]));
  if (chosen.empty()) {
    for (const auto& [n, c] : criteria) chosen.push_back(n);
  }
  bool all = true;
  for (int n : chosen) {
    const auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::printf("criterion %d: FAIL unknown criterion\n", n);
      all = false;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double budget = it->second.budget_s;
    if (budget > 0 && s > budget) {
      o.pass = false;
      o.detail += fmt(" over the %.0f s budget;", budget);
    }
    std::printf("criterion %d: %s %s (%.1f s)\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), s);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
