#pragma once

// Command implementations behind msg_cli. Every command writes below
// <out>/<task>/ and throws on error.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace msg::cli {

struct RunConfig {
  std::string task = "reach";
  int demos = 5;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<std::string> methods = {"msg"};
  std::string prior = "pose-centric";  // pose-centric, standard or mixture
  bool conditioned = true;
  int episodes = 50;
  std::vector<std::string> strategies;  // empty: command default
  std::vector<std::string> weightings;  // empty: command default
  std::vector<std::string> ablations = {"full",        "no-custom-prior",    "no-sample-matching",
                                        "no-conditioning", "mcmc-matched-steps", "mixture-prior"};
  int toy_samples = 500;
  int toy_train_samples = 2048;
  nlohmann::json train = nlohmann::json::object();        // TrainConfig overrides
  nlohmann::json composition = nlohmann::json::object();  // CompositionConfig overrides
  nlohmann::json task_overrides = nlohmann::json::object();
  std::filesystem::path out;
  bool overwrite = false;

  // Fields absent from `j` keep their defaults. Unknown keys throw.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// --out, then the config's "out", then $MSG_OUT_ROOT, then ./msg_out.
std::filesystem::path resolve_out(const std::filesystem::path& flag, const std::filesystem::path& config);

void cmd_gen(const RunConfig& c);
void cmd_train(const RunConfig& c);
void cmd_eval(const RunConfig& c);
void cmd_ablate(const RunConfig& c);
void cmd_toy(const RunConfig& c);

}  // namespace msg::cli
