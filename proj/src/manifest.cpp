#include "fnri/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "fnri/nn.hpp"
#include "fnri/tensor.hpp"

namespace fnri::manifest {

using nlohmann::json;

json RunManifest::to_json() const {
  return json{{"command", command},     {"config", config},       {"config_hash", config_hash},
              {"version", version},     {"timestamp", timestamp}, {"artifacts", artifacts}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.config_hash = j.at("config_hash").get<uint64_t>();
  m.version = j.at("version").get<std::string>();
  m.timestamp = j.at("timestamp").get<std::string>();
  m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  return m;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ContractError("manifest: cannot open " + path + " for writing");
  f << m.to_json().dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("manifest: cannot open " + path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ContractError("manifest: unparsable JSON in " + path);
  return RunManifest::from_json(j);
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&tt, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace fnri::manifest
