#pragma once

namespace clotseg {

/// Entry point shared by the clotseg binary and the CLI tests. Exit codes:
/// 0 success, 1 validation/usage error, 2 runtime failure.
int dispatch(int argc, const char* const* argv);

}  // namespace clotseg
