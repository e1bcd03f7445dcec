#pragma once

// Process-wide diagnostic sink. Library code reports recoverable conditions
// (deduplicated rows, empty contrastive batches, skipped users) here instead
// of throwing; the CLI decides what reaches stderr.

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace kamcl::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

using Sink = std::function<void(Level, const std::string&)>;

namespace detail {
struct State {
  std::mutex mu;
  Level threshold = Level::warn;
  Sink sink = [](Level lvl, const std::string& msg) {
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::cerr << "[kamcl " << names[static_cast<int>(lvl)] << "] " << msg << '\n';
  };
};
inline State& state() {
  static State s;
  return s;
}
}  // namespace detail

inline void set_level(Level lvl) {
  std::lock_guard lock(detail::state().mu);
  detail::state().threshold = lvl;
}

inline Level level() {
  std::lock_guard lock(detail::state().mu);
  return detail::state().threshold;
}

/// Replaces the sink and returns the previous one.
inline Sink set_sink(Sink sink) {
  std::lock_guard lock(detail::state().mu);
  return std::exchange(detail::state().sink, std::move(sink));
}

inline void write(Level lvl, const std::string& msg) {
  auto& s = detail::state();
  std::lock_guard lock(s.mu);
  if (lvl < s.threshold || !s.sink) return;
  s.sink(lvl, msg);
}

inline void debug(const std::string& msg) { write(Level::debug, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void warn(const std::string& msg) { write(Level::warn, msg); }
inline void error(const std::string& msg) { write(Level::error, msg); }

/// RAII capture of every message at or above `min_level`; used by tests.
class Capture {
 public:
  explicit Capture(Level min_level = Level::debug) {
    prev_level_ = level();
    set_level(min_level);
    prev_sink_ = set_sink([this](Level lvl, const std::string& m) { messages_.emplace_back(lvl, m); });
  }
  ~Capture() {
    set_sink(std::move(prev_sink_));
    set_level(prev_level_);
  }
  Capture(const Capture&) = delete;
  Capture& operator=(const Capture&) = delete;

  const std::vector<std::pair<Level, std::string>>& messages() const { return messages_; }
  bool contains(const std::string& needle) const {
    for (const auto& [lvl, m] : messages_)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }

 private:
  std::vector<std::pair<Level, std::string>> messages_;
  Sink prev_sink_;
  Level prev_level_;
};

}  // namespace kamcl::log
