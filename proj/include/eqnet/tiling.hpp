#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqnet/tensor.hpp"
#include "eqnet/unet.hpp"

namespace eqnet {

enum class CropRule { none, to_multiple };

// Plan of input tiles, raw output tiles and owned (cropped) windows for
// stitched inference over the image's full output region. Owned windows
// partition the region: every output pixel is produced by exactly one tile.
struct TileLayout {
  int64_t fl = 0;
  std::vector<int64_t> region;      // output region per dim
  std::vector<int64_t> raw_w;       // raw output tile size per dim
  std::vector<int64_t> crop_size;   // owned window size per dim (== raw_w when not cropped)
  std::vector<int64_t> stride;
  std::vector<int64_t> crop_lo;     // crop offset inside the raw tile
  std::vector<int64_t> input_tile;  // input window size per dim
  bool cropped = false;

  struct Tile {
    std::vector<int64_t> raw_start;  // raw output window origin, region coords
    std::vector<int64_t> own_start;
    std::vector<int64_t> own_size;
  };
  std::vector<Tile> tiles;
  std::vector<std::string> flags;
};

// With crop none the stride is w. With crop to_multiple the owned windows
// have edge n*f^l (n = w/f^l when 0), the stride equals that size, and raw
// windows are placed on the f^l grid of the monolithic output (crop offsets
// centered up to that grid), which is what makes stitching consistent.
TileLayout plan_tiles(const UNetSpec& spec, const std::vector<int64_t>& image_size, int64_t w,
                      CropRule crop, int64_t n = 0);

Tensor stitch_predict(const UNetInstance& inst, const Tensor& image, const TileLayout& layout);

struct ConsistencyReport {
  Tensor diff_map;  // per-pixel max-over-channels |stitched - monolithic|
  double max_abs_diff = 0.0;
  int64_t mismatch_count = 0;
  std::vector<std::vector<int64_t>> mismatch_coords;  // first few, row-major
  bool bit_exact = false;
};

ConsistencyReport consistency_check(const UNetInstance& inst, const Tensor& image,
                                    const TileLayout& layout);

}  // namespace eqnet
