#pragma once

#include <chrono>
#include <map>
#include <string>
#include <string_view>

namespace avr {

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  /// Combined stdout and stderr, truncated to the last 16 KiB.
  std::string output;
};

/// Runs `command` through /bin/sh -c in its own process group. On timeout
/// the whole group is killed and `timed_out` is set.
ProcessResult run_shell(const std::string& command, std::chrono::milliseconds timeout);

/// POSIX single-quote escaping.
std::string shell_quote(std::string_view text);

/// Replaces each {name} in `pattern` with the shell-quoted value of
/// vars[name]. Unknown placeholders throw std::invalid_argument.
std::string expand_command(std::string_view pattern, const std::map<std::string, std::string>& vars);

}  // namespace avr
