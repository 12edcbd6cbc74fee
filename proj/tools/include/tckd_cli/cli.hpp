// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace tckd::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kIoError = 3,
  kDivergence = 4,
  kArtifactMismatch = 5,
};

/// Entry point of the `tckd` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace tckd::cli
