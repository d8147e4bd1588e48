#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqnet/metric.hpp"
#include "eqnet/synthdata.hpp"
#include "eqnet/tensor.hpp"
#include "eqnet/tiling.hpp"
#include "eqnet/unet.hpp"

namespace eqnet {

// Disk-scene metric-learning showcase: train on random crops of a periodic
// disk grid, stitch embeddings over an evaluation region with the crop
// rule, cluster, and score against the ground truth.
struct ShowcaseConfig {
  int64_t spacing = 15;
  int64_t radius = 5;
  Upsampling upsampling = Upsampling::learnt;
  uint64_t seed = 1;
  int64_t steps = 8000;
  double lr = 1e-3;
  double noise_sigma = 0.0;
  bool elastic = false;
  DeformParams deform;
  LossParams loss;
  int levels = 3;
  int convs_per_block = 2;
  int kernel_size = 3;
  int64_t channel_base = 10;
  int64_t train_window = 28;
  int64_t train_canvas = 164;    // training scene edge
  int64_t eval_region_min = 44;  // evaluation region edge is >= this
};

struct ShowcaseResult {
  ShowcaseConfig config;
  UNetSpec spec;
  double ari = 0.0;
  int64_t clusters_among_instances = 0;
  int64_t fdl = 0;  // f^(d*l)
  bool capacity_bound_ok = false;
  // spacing-multiple-of-f^l runs only: embeddings bit-identical at
  // one-spacing offsets inside the region
  bool checked_periodic = false;
  bool periodic_embeddings_ok = false;
  double initial_pull = 0.0;
  double final_pull = 0.0;
  double mean_within_spread = 0.0;  // rms embedding distance to own-disk centroid
  double min_centroid_gap = 0.0;    // smallest distance between distinct disk centroids
  UNetInstance trained;
  AdamState adam;
  Tensor eval_image;
  Tensor eval_embedding;
  InstanceLabeling predicted;
  InstanceLabeling ground_truth;
  std::vector<TraceRow> trace;
};

UNetSpec showcase_spec(const ShowcaseConfig& cfg);
ShowcaseResult run_capacity_showcase(const ShowcaseConfig& cfg);

// Overrides parsed from a JSON config file (empty path: defaults).
ShowcaseConfig showcase_config_from_file(const std::string& config_path, uint64_t seed);

// Ground-truth labels over the monolithic output region: output pixel y
// predicts the label at image coordinate y + margin.
InstanceLabeling region_labels(const InstanceLabeling& full, const std::vector<int64_t>& margin,
                               const std::vector<int64_t>& region);

// Embeddings bit-identical under per-axis shifts by `offset` (overlap
// comparison); the forced outcome when offset is a multiple of f^l.
bool embeddings_periodic(const Tensor& emb, int64_t offset);

// Distinct predicted ids over ground-truth foreground pixels.
int64_t clusters_among_instances(const InstanceLabeling& predicted, const InstanceLabeling& gt);

// Stitch with uncropped tiles of raw size w and report the mismatch
// against the monolithic forward.
struct StitchMismatch {
  double max_abs_diff = 0.0;
  int64_t mismatch_count = 0;
};
StitchMismatch stitched_mismatch_uncropped(const UNetInstance& inst, const Tensor& image, int64_t w);

// Named experiment runner: writes artifacts under out_dir and returns 0
// iff every embedded assertion passed. config_path may be empty.
int run_experiment(const std::string& name, const std::string& config_path,
                   const std::string& out_dir, uint64_t seed);
const std::vector<std::string>& experiment_names();

}  // namespace eqnet
