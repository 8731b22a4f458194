#include "msg/demo_io.hpp"

#include <sstream>
#include <stdexcept>

#include "msg/io_util.hpp"

namespace msg {

nlohmann::json pose_to_json(const Pose& p) { return p.to_array(); }

Pose pose_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 7) throw std::invalid_argument("pose needs 7 scalars");
  return Pose::from_array(std::span<const double, 7>(v.data(), 7));
}

nlohmann::json demo_to_json(const Demonstration& d) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : d.steps) steps.push_back({{"pose", pose_to_json(s.ee)}, {"gripper", s.gripper}});
  nlohmann::json frames = nlohmann::json::object();
  for (const auto& [id, p] : d.frames) frames[id] = pose_to_json(p);
  return {{"steps", steps}, {"frames", frames}, {"skill_splits", d.skill_splits}};
}

Demonstration demo_from_json(const nlohmann::json& j) {
  Demonstration d;
  for (const auto& s : j.at("steps")) d.steps.push_back({pose_from_json(s.at("pose")), s.value("gripper", 0.0)});
  for (const auto& [id, p] : j.at("frames").items()) d.frames[id] = pose_from_json(p);
  if (j.contains("skill_splits")) d.skill_splits = j.at("skill_splits").get<std::vector<int>>();
  d.validate();
  return d;
}

std::string demos_to_jsonl(std::span<const Demonstration> demos) {
  std::string out;
  for (const auto& d : demos) {
    out += demo_to_json(d).dump();
    out += '\n';
  }
  return out;
}

void write_demos(const std::filesystem::path& path, std::span<const Demonstration> demos) {
  write_file_atomic(path, demos_to_jsonl(demos));
}

std::vector<Demonstration> read_demos(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Demonstration> demos;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      demos.push_back(demo_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (demos.empty()) throw std::runtime_error(path.string() + ": no demonstrations");
  return demos;
}

}  // namespace msg
