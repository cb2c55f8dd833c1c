#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace avatarforge {

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string stdout_text;
  std::string stderr_text;
};

// Runs `command` through /bin/sh -c, capturing both output streams.
// The child is killed when `timeout` elapses.
ProcessResult run_command(const std::string& command,
                          std::chrono::milliseconds timeout = std::chrono::seconds(300));

// Single-quotes `arg` for safe interpolation into a /bin/sh command line.
std::string shell_quote(std::string_view arg);

}  // namespace avatarforge
