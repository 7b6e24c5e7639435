#include "alure/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>

namespace alure {

void init_logging() {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::stderr_logger_mt("alure");
    spdlog::set_default_logger(logger);
    done = true;
  }
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("ALURE_LOG")) {
    const std::string v(env);
    if (v == "error") level = spdlog::level::err;
    else if (v == "warn") level = spdlog::level::warn;
    else if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
  }
  spdlog::set_level(level);
}

}  // namespace alure
