#pragma once

#include <spdlog/spdlog.h>

namespace alure {

/// Routes the default logger to standard error and applies the level named by
/// the ALURE_LOG environment variable (error, warn, info, debug). Unset means
/// warn.
void init_logging();

}  // namespace alure
