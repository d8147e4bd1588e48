#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqnet/synthdata.hpp"
#include "eqnet/tensor.hpp"
#include "eqnet/unet.hpp"

namespace eqnet {

struct LossParams {
  double delta_v = 0.5;  // pull margin
  double delta_d = 1.5;  // push margin (applied as 2*delta_d between centroids)
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.001;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double pull = 0.0;
  double push = 0.0;
  double reg = 0.0;
};

// Pull to per-instance centroids (hinge^2 at delta_v), pairwise centroid
// push (hinge^2 at 2*delta_d), centroid-norm regularizer. Background is one
// additional class whose centroid is fixed at the zero vector.
// If grad_out is non-null it receives dLoss/dEmbedding (same shape as emb).
LossBreakdown discriminative_loss(const Tensor& emb, const InstanceLabeling& labels,
                                  const LossParams& params, Tensor* grad_out = nullptr);

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int64_t steps = 3000;
  double lr = 1e-3;
  // cosine decays to lr/10 over the run
  LrSchedule lr_schedule = LrSchedule::cosine;
  uint64_t seed = 1;
  int64_t batch_size = 1;
  int64_t out_window = 12;  // training output window edge (per dim)
  double noise_sigma = 0.0;
  bool elastic = false;
  DeformParams deform;
  LossParams loss;
};

struct TraceRow {
  int64_t step;
  double total, pull, push, reg;
};

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t step = 0;
};

struct TrainResult {
  UNetInstance instance;
  std::vector<TraceRow> trace;
  AdamState adam;
};

// Crops training windows uniformly at random from the scene, regenerates
// noise/deformation per step, and applies Adam updates. Deterministic per
// seed; aborts with the step index if the loss turns non-finite.
TrainResult train(const UNetInstance& start, const DiskScene& scene, const TrainConfig& cfg);

void write_loss_csv(const std::string& path, const std::vector<TraceRow>& trace);

// Checkpoint = instance manifest + optimizer-state archive in `dir`.
void save_checkpoint(const std::string& dir, const UNetInstance& inst, const AdamState& adam);
void load_checkpoint(const std::string& dir, UNetInstance& inst, AdamState& adam);

// Flat-kernel mean shift over the foreground embeddings; modes within
// bandwidth are merged, labels assigned by nearest mode, first-appearance
// (raster) order.
InstanceLabeling mean_shift_cluster(const Tensor& emb, const std::vector<uint8_t>& fg_mask,
                                    double bandwidth);

// Mode of the embedding distribution reached from the zero vector.
std::vector<double> estimate_background_mode(const Tensor& emb, double bandwidth);

// Pixels farther than `radius` from the background mode.
std::vector<uint8_t> foreground_mask(const Tensor& emb, const std::vector<double>& bg_mode,
                                     double radius);

// background mode -> foreground mask -> mean shift, with bandwidth delta_v.
InstanceLabeling infer_labels(const Tensor& emb, const LossParams& params);

double adjusted_rand_index(const InstanceLabeling& pred, const InstanceLabeling& gt);

// ARI over the ground-truth foreground only: background pixels enter pairs
// solely through predictions on foreground (predicted background is one
// more class there). With background included wholesale, its pair mass
// dominates and no clustering of these scenes can score low.
double foreground_ari(const InstanceLabeling& pred, const InstanceLabeling& gt);

}  // namespace eqnet
