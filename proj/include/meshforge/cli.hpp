#pragma once

#include <filesystem>
#include <string>

#include "meshforge/cloth_sim.hpp"
#include "meshforge/recover_net.hpp"
#include "meshforge/scene_gen.hpp"

namespace meshforge {

struct RunConfig {
  SceneConfig scene;
  SimConfig sim;
  TrainConfig train;
};

// Parses a JSON config file with optional sections scene/sim/train, applies
// documented defaults (each applied default is logged), and rejects unknown
// keys with a nearest-key suggestion.
RunConfig validate_config(const std::filesystem::path& path);

// Effective config with every value spelled out; re-validating it yields an
// identical RunConfig.
std::string effective_config_json(const RunConfig& cfg);

// Entry point behind the meshforge binary; exposed for tests.
// Exit status: 0 success, 1 validation error, 2 runtime/numeric error.
int dispatch(int argc, const char* const* argv);

// Help text for the top-level command and every subcommand.
std::string cli_full_help();

}  // namespace meshforge
