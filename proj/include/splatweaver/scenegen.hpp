#pragma once

#include "splatweaver/scene_io.hpp"

namespace splat {

// Synthetic ground-truth scenes rendered by the project's own rasterizer.
// Presets:
//   random-blobs        ~50 anisotropic Gaussians in a ball, ring cameras
//   flat-textured-split a frontal wall, uniform left half / checkered right
//   checker-room        box interior with checkered walls
struct SceneSpec {
  std::string preset = "random-blobs";
  int gaussians = 50;  // random-blobs only
  int context_views = 4;
  int target_views = 2;
  int resolution = 64;
  uint64_t seed = 1;
};

struct GeneratedScene {
  SceneBatch batch;
  std::vector<CloudEntry> ground_truth;
};

GeneratedScene generate_scene(const SceneSpec& spec);

}  // namespace splat
