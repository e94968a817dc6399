#pragma once

namespace enlfcn::cli {

/// Process exit codes, one per failure class.
enum ExitCode : int {
  ok = 0,
  failure = 1,
  bad_arguments = 2,
  config_error = 3,
  format_error = 4,
  resource_error = 5,
  numeric_error = 6,
  split_error = 7,
  undefined_value = 8,
  usage_error = 9,
};

/// Entry point shared by the executable and the tests. Diagnostics go to stderr.
int run(int argc, const char* const* argv);

}  // namespace enlfcn::cli
