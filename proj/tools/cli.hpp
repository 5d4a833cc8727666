#pragma once

#include <iosfwd>

namespace xbar::cli {

/// Entry point of the xbarmap command line tool. Reports go to `out` (or the
/// --out file), diagnostics to `err`. Returns the process exit code:
/// 0 on success, 1 on a failed command, 2 on a usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace xbar::cli
