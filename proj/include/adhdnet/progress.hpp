#pragma once

#include <functional>

#include "json.hpp"

namespace adhdnet {

/// Receives structured progress events (fold start/end, BO iteration, epoch
/// loss). The default sink discards everything.
using ProgressSink = std::function<void(const nlohmann::json&)>;

void set_progress_sink(ProgressSink sink);
void emit_progress(const nlohmann::json& event);

}  // namespace adhdnet
