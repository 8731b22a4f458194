#pragma once

// Line-delimited JSON demonstration files, one episode per line:
//   {"steps":[{"pose":[x,y,z,w,qx,qy,qz],"gripper":g},...],
//    "frames":{"id":[x,y,z,w,qx,qy,qz],...},"skill_splits":[...]}

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msg/streams.hpp"

namespace msg {

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

nlohmann::json demo_to_json(const Demonstration& d);
Demonstration demo_from_json(const nlohmann::json& j);

std::string demos_to_jsonl(std::span<const Demonstration> demos);
void write_demos(const std::filesystem::path& path, std::span<const Demonstration> demos);
// Throws std::runtime_error naming the file and line on malformed input.
std::vector<Demonstration> read_demos(const std::filesystem::path& path);

}  // namespace msg
