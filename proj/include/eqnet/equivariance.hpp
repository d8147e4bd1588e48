#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqnet/tensor.hpp"
#include "eqnet/unet.hpp"

namespace eqnet {

using ShiftVector = std::vector<int64_t>;

// Oversized canvas enabling pad-free shift comparisons: every tested crop
// lies fully inside the canvas, so a shifted crop is exactly the shifted
// image content.
struct CanvasProbe {
  Tensor canvas;
  std::vector<int64_t> base_offset;
  std::vector<int64_t> input_size;
  std::string kind;
  uint64_t seed = 0;
};

// The input-sized window at base_offset - delta, so the content appears
// shifted by +delta relative to the base crop.
Tensor shift_crop(const CanvasProbe& probe, const ShiftVector& delta);

CanvasProbe make_probe(const UNetSpec& spec, const std::string& kind, int64_t min_output,
                       int64_t max_shift, uint64_t seed);

// Diagonal image + 3 uniform-noise canvases + 1 constant canvas.
std::vector<CanvasProbe> default_probe_battery(const UNetSpec& spec, int64_t min_output,
                                               int64_t max_shift, uint64_t seed);

struct ShiftVerdict {
  ShiftVector delta;
  bool equal = false;
  double max_abs_diff = 0.0;
  int64_t compared = 0;  // overlap element count
};

struct EquivarianceReport {
  std::string instance_id;
  int64_t t = 0;
  std::string probe_kind;
  uint64_t probe_seed = 0;
  std::vector<ShiftVerdict> shifts;
  bool all_equal = true;
};

// For each tested shift (a nonzero combination of the given multiples of t
// per dim), compares forward(shift_crop(delta)) against the base output
// displaced by delta on the common output grid; comparisons are windowed
// intersections, never padded.
EquivarianceReport check_periodic_equivariance(const UNetInstance& inst, const CanvasProbe& probe,
                                               int64_t t, const std::vector<int64_t>& multiples);

// Smallest divisor t of f^l for which all probes report equality at every
// multiple-of-t shift within one period (certified within that divisor set).
int64_t minimal_period_estimate(const UNetInstance& inst, const std::vector<CanvasProbe>& probes);

struct DistinctnessResult {
  int64_t count = 0;
  // class id per phase offset of {0..f^l-1}^d in row-major order; equal ids
  // mean "not distinguished by the given probes", distinct ids are
  // certified by a witness probe.
  std::vector<int64_t> phase_class;
  int64_t fl = 0;
  int d = 0;
};

DistinctnessResult count_relative_distinct(const UNetInstance& inst,
                                           const std::vector<CanvasProbe>& probes);

// Per-operator shift relations, each asserted bit-exactly on random
// windows: conv, relu, window max, subsampling, up-convolution, concat,
// a conv+pool encoder path, and the bottleneck down-up composition.
struct OperatorCheck {
  std::string name;
  int trials = 0;
  int failures = 0;
};
struct OperatorSuiteReport {
  std::vector<OperatorCheck> checks;
  bool all_pass = true;
};
OperatorSuiteReport operator_equivariance_suite(uint64_t seed, int trials = 100);

// stride-1 window max over f^d neighborhoods (valid windows)
Tensor pool_window_max(const Tensor& g, int64_t f);
// subsampling g(x) -> g(f*x)
Tensor subsample(const Tensor& g, int64_t f);

// B[x] == A[x - delta] over the overlap; returns {equal, max_abs_diff, count}.
struct ShiftCompare {
  bool equal = false;
  double max_abs_diff = 0.0;
  int64_t compared = 0;
};
ShiftCompare compare_shifted(const Tensor& a, const Tensor& b, const ShiftVector& delta);

}  // namespace eqnet
