#pragma once

#include <string>
#include <vector>

namespace adhdnet {

/// Non-fatal conditions (e.g. a pooling window that truncates input) are
/// collected here so callers and tests can inspect them. Thread-safe.
void record_warning(std::string message);
std::vector<std::string> take_warnings();

}  // namespace adhdnet
