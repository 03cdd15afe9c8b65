#pragma once

#include <string>
#include <vector>

#include "splatweaver/pipeline.hpp"

namespace splat {

// Binary 8-bit PPM (P6). Values are clamped to [0,1] and rounded.
void write_ppm(const std::string& path, const Tensor& image);  // [H,W,3]
Tensor read_ppm(const std::string& path);

// Grayscale PPM from a scalar field, normalized by its maximum.
void write_gray_ppm(const std::string& path, const Tensor& field);  // [H,W]

// Indexed-color PPM: value v mapped through a palette of RGB triples.
void write_indexed_ppm(const std::string& path, const std::vector<int>& values,
                       int height, int width,
                       const std::vector<std::array<uint8_t, 3>>& palette);

// Portable float map, single channel, little-endian 32-bit (scale -1.0).
void write_pfm(const std::string& path, const Tensor& field);  // [H,W]
Tensor read_pfm(const std::string& path);

// Plain-text scene container; image/depth payloads live beside it and are
// referenced by relative path.
void save_scene(const std::string& path, const SceneBatch& batch);
SceneBatch load_scene(const std::string& path);

// Gaussian cloud: ASCII header declaring count and fields, then packed
// little-endian records mu(3xf32) s(3xf32) q(4xf32) alpha(f32)
// c(3*(k+1)^2 x f32) expert(u8) source(3xu32).
struct CloudEntry {
  GaussianPrimitive prim;
  uint8_t expert = 0;
  uint32_t view = 0, row = 0, col = 0;
};
void save_cloud(const std::string& path, const std::vector<CloudEntry>& entries,
                int sh_degree);
std::vector<CloudEntry> load_cloud(const std::string& path, int* sh_degree);

// key=value config; unknown keys and malformed lines are rejected with the
// offending line named. Absent keys keep their defaults.
TrainConfig config_load(const std::string& path);
TrainConfig config_from_text(const std::string& text);
std::string config_to_text(const TrainConfig& cfg);

}  // namespace splat
