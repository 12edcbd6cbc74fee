// SPDX-License-Identifier: Apache-2.0
#include "tckd_cli/cli.hpp"

int main(int argc, char** argv) { return tckd::cli::run_cli(argc, argv); }
