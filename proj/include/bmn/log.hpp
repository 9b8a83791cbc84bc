#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace bmn::log {

/// Level from BMN_LOG_LEVEL (error|info|debug); defaults to info.
inline spdlog::level::level_enum level_from_env() {
  const char* raw = std::getenv("BMN_LOG_LEVEL");
  if (raw == nullptr) return spdlog::level::info;
  const std::string v(raw);
  if (v == "error") return spdlog::level::err;
  if (v == "debug") return spdlog::level::debug;
  return spdlog::level::info;
}

/// Shared stderr logger so stdout stays free for command output.
inline spdlog::logger& get() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto existing = spdlog::get("bmn");
    auto l = existing ? existing : spdlog::stderr_color_mt("bmn");
    l->set_level(level_from_env());
    l->set_pattern("[%l] %v");
    return l;
  }();
  return *logger;
}

template <typename... Args>
void info(fmt::format_string<Args...> fmt, Args&&... args) {
  get().info(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void warn(fmt::format_string<Args...> fmt, Args&&... args) {
  get().warn(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void error(fmt::format_string<Args...> fmt, Args&&... args) {
  get().error(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void debug(fmt::format_string<Args...> fmt, Args&&... args) {
  get().debug(fmt, std::forward<Args>(args)...);
}

}  // namespace bmn::log
