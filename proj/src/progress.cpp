#include "adhdnet/progress.hpp"

#include <mutex>

namespace adhdnet {
namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

ProgressSink& sink() {
    static ProgressSink s;
    return s;
}

}  // namespace

void set_progress_sink(ProgressSink s) {
    std::lock_guard lock(sink_mutex());
    sink() = std::move(s);
}

void emit_progress(const nlohmann::json& event) {
    std::lock_guard lock(sink_mutex());
    if (sink()) sink()(event);
}

}  // namespace adhdnet
