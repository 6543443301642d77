#pragma once

#include <memory>
#include <string>

#include "posefield/trainer.hpp"

namespace posefield {

// Versioned binary container: config echo, camera bases + corrections,
// every parameter block, optimizer moments, occupancy state, rng streams
// and the step counter. Round-trips bit-identically.
void save_checkpoint(const std::string& path, const TrainState& state);

// Rebuilds a TrainState from a checkpoint. The scene is reloaded from the
// directory recorded at save time (override with scene_dir_override, e.g.
// when the dataset moved).
std::unique_ptr<TrainState> load_checkpoint(const std::string& path, const Scene& scene);

// Scene directory recorded in the checkpoint header.
std::string checkpoint_scene_dir(const std::string& path);
// Config echo recorded in the checkpoint header.
TrainConfig checkpoint_config(const std::string& path);

}  // namespace posefield
