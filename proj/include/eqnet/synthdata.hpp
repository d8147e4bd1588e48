#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "eqnet/tensor.hpp"

namespace eqnet {

// Per-pixel integer instance ids over a spatial grid; 0 is background and
// ids form a contiguous range 0..K.
struct InstanceLabeling {
  std::vector<int64_t> size;
  std::vector<int32_t> ids;

  InstanceLabeling() = default;
  explicit InstanceLabeling(std::vector<int64_t> size_, int32_t fill = 0);
  int32_t max_id() const;
  int64_t numel() const { return static_cast<int64_t>(ids.size()); }
};

struct DiskSceneSpec {
  std::vector<int64_t> size = {128, 128};  // d=2 canvas
  int64_t spacing = 15;
  int64_t radius = 5;
  double fg_intensity = 1.0;
  double bg_intensity = 0.0;
  int64_t lattice_offset = -1;  // -1: spacing/2
  uint64_t seed = 0;            // reserved for derived randomness

  void validate() const;
};

struct DiskScene {
  DiskSceneSpec spec;
  Tensor image;  // (H, W, 1)
  InstanceLabeling labels;
  std::vector<std::array<int64_t, 2>> centers;  // one per label id, 1-based order
};

// Hard-edged disks centered on the full spacing lattice (disks clipped by
// the canvas included), so the image is exactly spacing-periodic.
DiskScene disk_grid(const DiskSceneSpec& spec);

// i.i.d. normal noise added and clamped to [0,1]; deterministic per seed.
Tensor add_gaussian_noise(const Tensor& image, double sigma, uint64_t seed);

struct DeformParams {
  int64_t grid_spacing = 32;   // control point spacing in px
  double sigma = 1.0;          // control displacement std in px
  double smooth_radius = 2.0;  // gaussian std smoothing the dense field
  uint64_t seed = 0;

  void validate() const;
};

struct DeformResult {
  Tensor image;             // warped with linear interpolation
  InstanceLabeling labels;  // warped with nearest neighbor
  double max_displacement = 0.0;
};

// Displacements exceeding the smoothing support (3 * smooth_radius, or half
// the control spacing when unsmoothed) raise an error.
DeformResult elastic_deform(const Tensor& image, const InstanceLabeling& labels,
                            const DeformParams& params);

Tensor constant_image(const std::vector<int64_t>& size, double value, int64_t channels = 1);

// image.eten1 + labels.eten1 + scene.json (the generating spec) in `dir`.
void save_scene(const std::string& dir, const DiskScene& scene);
DiskScene load_scene(const std::string& dir);

}  // namespace eqnet
