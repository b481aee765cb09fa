#pragma once

#include <map>
#include <string>

#include <json.hpp>

namespace fnri::manifest {

inline constexpr const char* kToolVersion = "fnri 1.0.0";

// Written before a command starts work. The resolved config plus seeds are
// sufficient to reproduce every artifact bit-identically; the timestamp is
// informational only and never flows into artifacts.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  uint64_t config_hash = 0;
  std::string version = kToolVersion;
  std::string timestamp;
  std::map<std::string, std::string> artifacts;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

void write_manifest(const std::string& path, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

std::string now_iso8601();

}  // namespace fnri::manifest
