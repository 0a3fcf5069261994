#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adhdnet/data.hpp"
#include "adhdnet/evaluate.hpp"
#include "adhdnet/explain.hpp"
#include "adhdnet/model.hpp"
#include "json.hpp"

namespace adhdnet {

/// Everything a subcommand needs to re-execute. Serialised as
/// run_config.json in the output directory.
struct RunConfig {
    std::string command;         // synth | train | tune | evaluate | ablate | explain
    std::string data;            // manifest path or "synth:subjects=..,seconds=..,separation=.."
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string out;
    nlohmann::json model = "full";  // preset name, or {"preset": name, ...overrides}
    std::string mode = "no-da";     // evaluate only
    ProtocolSettings protocol;
    nlohmann::json combos = nullptr;  // null selects the whole sweep
    ExplainSettings explain;
    std::string weights;  // explain input
    // synth only
    std::size_t subjects = 40;  // total, split evenly between classes
    double seconds = 120.0;
    double separation = 0.8;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
};

/// "full" (default widths) or "desk"; an object may override any field.
ModelConfig resolve_model(const nlohmann::json& spec);

/// Parses "synth:subjects=40,seconds=120,separation=0.8".
SyntheticSpec parse_synth_spec(const std::string& spec, std::uint64_t seed);

/// Loads a manifest or generates synthetic data.
Dataset resolve_data(const std::string& source, std::uint64_t seed);

/// Runs a fully specified configuration. Writes run_config.json plus the
/// command's outputs under config.out.
void execute(const RunConfig& config);

/// Entry point: 0 success, 1 user error, 2 internal error.
int run_cli(int argc, const char* const* argv);

}  // namespace adhdnet
