#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eqnet/autodiff.hpp"
#include "eqnet/ops.hpp"
#include "eqnet/tensor.hpp"

namespace eqnet {

enum class Upsampling { fixed, learnt };

// Encoder-decoder architecture description: l encoder blocks (convs + max
// pooling by f), a bottleneck conv block, l upsampling steps each followed
// by a decoder conv block fed by the concatenated skip, and a final block
// whose last conv maps linearly to out_channels.
struct UNetSpec {
  int d = 2;
  int levels = 1;
  int factor = 2;
  int convs_per_block = 2;
  int kernel_size = 3;
  std::vector<int64_t> channels;  // conv output channels per level, size levels+1
  ops::Padding padding = ops::Padding::valid;
  Upsampling upsampling = Upsampling::fixed;
  int64_t in_channels = 1;
  int64_t out_channels = 1;

  void validate() const;
  int64_t grid_period() const;  // f^l
  int64_t block_shrink() const { return static_cast<int64_t>(convs_per_block) * (kernel_size - 1); }

  static std::vector<int64_t> default_channels(int levels, int64_t base = 16);
};

struct ShapePlan {
  ops::Padding padding = ops::Padding::valid;
  std::vector<int64_t> input_size;
  std::vector<int64_t> output_size;
  // what each max pooling sees, outermost level first (zero mode: after
  // divisibility padding)
  std::vector<std::vector<int64_t>> prepool_size;
  int64_t receptive_field = 0;
  std::vector<int64_t> context_margin;

  std::string to_string() const;
};

// Smallest feasible output edge >= requested for the valid-padding size
// recursion; feasible outputs form a residue class modulo f^l.
int64_t min_feasible_output(const UNetSpec& spec, int64_t requested);
int64_t receptive_field_edge(const UNetSpec& spec);

ShapePlan plan_geometry(const UNetSpec& spec, const std::vector<int64_t>& requested_output);

struct UNetInstance {
  UNetSpec spec;
  std::vector<std::pair<std::string, Tensor>> params;
  std::string id;

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  bool has_param(const std::string& name) const;
};

enum class Init { zeros, random };
UNetInstance build_unet(const UNetSpec& spec, Init init, uint64_t seed);

// Forward pass recorded on a tape (used for training); params are exposed
// as named nodes in instance order.
struct GraphRun {
  Tape tape;
  Tape::Id output = -1;
  std::vector<std::pair<std::string, Tape::Id>> params;
};
GraphRun run_unet(const UNetInstance& inst, const Tensor& image);

Tensor forward(const UNetInstance& inst, const Tensor& image);

// Output of forward() at a single output coordinate, evaluated on the
// smallest f^l-grid-aligned input window that covers it. Matches the full
// forward bit-exactly.
std::vector<double> point_function_eval(const UNetInstance& inst, const Tensor& image,
                                        const std::vector<int64_t>& x);

// Manifest (JSON) + one archive of concatenated ETEN1 records.
void save_instance(const std::string& dir, const UNetInstance& inst);
UNetInstance load_instance(const std::string& manifest_or_dir);

}  // namespace eqnet
