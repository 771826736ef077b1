#pragma once

namespace msdn {

// Entry point behind the msdn binary; exposed so tests can drive commands
// in-process. Returns the process exit code: 0 success, 1 config error,
// 2 data error.
int cli_main(int argc, const char* const* argv);

}  // namespace msdn
