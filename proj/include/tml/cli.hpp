#pragma once

#include <ostream>

namespace tml {

// The `tml` command line: synth, train, ablate, eval and gradcheck. Returns
// the process exit code (0 success, 1 usage, 2 data/integrity, 3 numerical).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tml
