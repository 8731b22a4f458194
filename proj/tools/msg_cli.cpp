#include <cstdint>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"
#include "msg/io_util.hpp"

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Flags {
  std::string config;
  std::string seed;
  std::string task;
  std::string method;
  std::string prior;
  std::string strategy;
  std::string weighting;
  std::string ablations;
  std::string out;
  int demos = -1;
  int episodes = -1;
  int samples = -1;
  bool overwrite = false;
};

msg::cli::RunConfig resolve(const Flags& f) {
  msg::cli::RunConfig c;
  if (!f.config.empty()) c = msg::cli::RunConfig::from_json(nlohmann::json::parse(msg::read_file(f.config)));
  if (!f.task.empty()) c.task = f.task;
  if (!f.seed.empty()) {
    c.seeds.clear();
    for (const auto& s : split(f.seed)) c.seeds.push_back(std::stoull(s));
  }
  if (!f.method.empty()) c.methods = split(f.method);
  if (!f.prior.empty()) c.prior = f.prior;
  if (!f.strategy.empty()) c.strategies = split(f.strategy);
  if (!f.weighting.empty()) c.weightings = split(f.weighting);
  if (!f.ablations.empty()) c.ablations = split(f.ablations);
  if (f.demos >= 0) c.demos = f.demos;
  if (f.episodes >= 0) c.episodes = f.episodes;
  if (f.samples >= 0) c.toy_samples = f.samples;
  c.overwrite = f.overwrite;
  c.out = msg::cli::resolve_out(f.out, c.out);
  return c;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON run config; flags override its fields")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "seed or comma-separated seeds");
  sub->add_option("--task", f.task, "task or toy name");
  sub->add_option("--out", f.out, "output root (default: $MSG_OUT_ROOT, else ./msg_out)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stream flow-matching policies: demos, training, composition and evaluation"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen", "write scripted demonstrations");
  add_common(gen, f);
  gen->add_option("--demos", f.demos, "demonstrations per seed");

  auto* train = app.add_subcommand("train", "train one checkpoint per (skill, frame) stream");
  add_common(train, f);
  train->add_option("--method", f.method, "msg, object-frame, global or acpl (comma-separated)");
  train->add_option("--prior", f.prior, "pose-centric, standard or mixture");
  train->add_flag("--overwrite", f.overwrite, "replace existing checkpoints");

  auto* eval = app.add_subcommand("eval", "evaluate trained policies; writes results.csv and plots");
  add_common(eval, f);
  eval->add_option("--method", f.method, "msg, object-frame, global or acpl (comma-separated)");
  eval->add_option("--prior", f.prior, "prior of the policy to load");
  eval->add_option("--strategy", f.strategy, "ensemble, flow or flow-mcmc (comma-separated)");
  eval->add_option("--weighting", f.weighting, "weighting strategies (comma-separated)");
  eval->add_option("--episodes", f.episodes, "episodes per seed");

  auto* ablate = app.add_subcommand("ablate", "ablation grid over flags and weightings");
  add_common(ablate, f);
  ablate->add_option("--strategy", f.strategy, "base strategy (default flow-mcmc)");
  ablate->add_option("--weighting", f.weighting, "weighting strategies (comma-separated)");
  ablate->add_option("--ablations", f.ablations, "ablation flags (comma-separated)");
  ablate->add_option("--episodes", f.episodes, "episodes per seed");

  auto* toy = app.add_subcommand("toy", "train and compose a 2D toy; writes results.csv and scatter plots");
  add_common(toy, f);
  toy->add_option("--strategy", f.strategy, "strategies (comma-separated; default all)");
  toy->add_option("--weighting", f.weighting, "weighting strategy");
  toy->add_option("--samples", f.samples, "composed samples per strategy");

  CLI11_PARSE(app, argc, argv);

  try {
    const msg::cli::RunConfig c = resolve(f);
    if (gen->parsed()) msg::cli::cmd_gen(c);
    if (train->parsed()) msg::cli::cmd_train(c);
    if (eval->parsed()) msg::cli::cmd_eval(c);
    if (ablate->parsed()) msg::cli::cmd_ablate(c);
    if (toy->parsed()) msg::cli::cmd_toy(c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
