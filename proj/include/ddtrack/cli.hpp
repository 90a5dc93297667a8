// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace ddtrack {

// Entry point of the ddtrack command-line tool (kept in the library so the
// argument handling is unit-testable).  Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage or configuration error.
int cli_main(int argc, char** argv);

}  // namespace ddtrack
