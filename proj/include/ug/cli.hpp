#pragma once

namespace ug {

// Full command-line surface. Exit codes: 0 success, 1 runtime failure,
// 2 configuration/usage error (in which case nothing has been started).
int cli_run(int argc, const char* const* argv);

}  // namespace ug
