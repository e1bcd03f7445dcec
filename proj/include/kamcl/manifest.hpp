#pragma once

// Run manifest written by every CLI command. It is the only output that
// carries wall-clock data, so all other artifacts stay byte-reproducible.
//
//   run.command = train
//   run.seed = 1
//   run.git = v0.1-3-gabc123
//   run.started = 2026-01-01T00:00:00Z
//   config.<key> = ...
//   data.<file> = <fnv1a hash>
//   output.<n> = <path>
//   time.<phase> = <seconds>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kamcl/kv.hpp"
#include "kamcl/text.hpp"

namespace kamcl {

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string git_describe;
  std::string started;
  KvList config;
  std::vector<std::pair<std::string, std::string>> data_hashes;
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, double>> timings;

  KvList to_kv() const {
    KvList out{{"run.command", command},
               {"run.seed", std::to_string(seed)},
               {"run.git", git_describe},
               {"run.started", started}};
    for (const auto& e : config) out.push_back({"config." + e.key, e.value});
    for (const auto& [f, h] : data_hashes) out.push_back({"data." + f, h});
    for (std::size_t k = 0; k < outputs.size(); ++k) out.push_back({"output." + std::to_string(k), outputs[k]});
    for (const auto& [name, secs] : timings) out.push_back({"time." + name, format_double(secs)});
    return out;
  }

  static RunManifest from_kv(const KvList& entries) {
    RunManifest m;
    auto after = [](const std::string& key, const char* prefix) { return key.substr(std::string(prefix).size()); };
    auto starts = [](const std::string& key, const char* prefix) { return key.rfind(prefix, 0) == 0; };
    for (const auto& e : entries) {
      if (e.key == "run.command") m.command = e.value;
      else if (e.key == "run.seed") m.seed = kv::to_uint(e);
      else if (e.key == "run.git") m.git_describe = e.value;
      else if (e.key == "run.started") m.started = e.value;
      else if (starts(e.key, "config.")) m.config.push_back({after(e.key, "config."), e.value, e.line});
      else if (starts(e.key, "data.")) m.data_hashes.emplace_back(after(e.key, "data."), e.value);
      else if (starts(e.key, "output.")) m.outputs.push_back(e.value);
      else if (starts(e.key, "time.")) m.timings.emplace_back(after(e.key, "time."), kv::to_double(e));
      else throw ValidationError("manifest: unknown key '" + e.key + "' at line " + std::to_string(e.line));
    }
    return m;
  }

  bool operator==(const RunManifest&) const = default;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Seconds since construction.
class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace kamcl
