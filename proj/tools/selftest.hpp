#pragma once

#include <ostream>

namespace sfit::tools {

/// Prints one PASS/FAIL line per check; true when every check passes.
bool run_selftest(std::ostream& out);

}  // namespace sfit::tools
