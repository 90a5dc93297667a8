// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/cli.hpp"

int main(int argc, char** argv) { return ddtrack::cli_main(argc, argv); }
