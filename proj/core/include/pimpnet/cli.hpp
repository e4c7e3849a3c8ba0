#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pimpnet {

// Subcommands: generate, pretrain, train, evaluate, explain. Returns the
// process exit code: 0 on success, 1 on runtime failures (I/O, corrupt or
// mismatched artifacts), 2 on usage and config errors. Diagnostics go to err,
// one summary line per successful run goes to out.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// argv wrapper for main(); argv[0] is skipped.
int run_command(int argc, const char* const* argv);

}  // namespace pimpnet
