#include "eqnet/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "eqnet/ops.hpp"

namespace eqnet {

TileLayout plan_tiles(const UNetSpec& spec, const std::vector<int64_t>& image_size, int64_t w,
                      CropRule crop, int64_t n) {
  if (static_cast<int>(image_size.size()) != spec.d)
    throw std::invalid_argument("plan_tiles: image size dimensionality mismatch");

  TileLayout layout;
  layout.fl = spec.grid_period();
  const int64_t fl = layout.fl;
  const bool valid = spec.padding == ops::Padding::valid;
  const int64_t rf = receptive_field_edge(spec);

  if (w < 1) throw std::invalid_argument("plan_tiles: w must be >= 1");
  if (valid) {
    ShapePlan probe = plan_geometry(spec, std::vector<int64_t>(static_cast<size_t>(spec.d), w));
    if (probe.output_size[0] != w)
      throw std::invalid_argument("plan_tiles: output tile size " + std::to_string(w) +
                                  " is not achievable by the geometry; nearest feasible is " +
                                  std::to_string(probe.output_size[0]));
  }

  layout.region.resize(static_cast<size_t>(spec.d));
  for (int i = 0; i < spec.d; ++i) {
    layout.region[static_cast<size_t>(i)] =
        valid ? image_size[static_cast<size_t>(i)] - rf + 1 : image_size[static_cast<size_t>(i)];
    if (layout.region[static_cast<size_t>(i)] < w)
      throw std::invalid_argument("plan_tiles: region size " +
                                  std::to_string(layout.region[static_cast<size_t>(i)]) + " in dim " +
                                  std::to_string(i) + " smaller than one tile of " + std::to_string(w));
  }

  layout.raw_w.assign(static_cast<size_t>(spec.d), w);
  layout.input_tile.assign(static_cast<size_t>(spec.d), valid ? w + rf - 1 : w);
  layout.cropped = crop == CropRule::to_multiple;

  int64_t crop_edge = w;
  int64_t crop_lo = 0;
  if (layout.cropped) {
    const int64_t n_max = w / fl;
    if (n_max < 1)
      throw std::invalid_argument("plan_tiles: w=" + std::to_string(w) +
                                  " smaller than f^l=" + std::to_string(fl) +
                                  ", cannot crop to a multiple");
    const int64_t n_use = n == 0 ? n_max : n;
    if (n_use < 1 || n_use * fl > w)
      throw std::invalid_argument("plan_tiles: crop multiple n=" + std::to_string(n_use) +
                                  " does not fit tile size " + std::to_string(w));
    crop_edge = n_use * fl;
    // centered up to f^l-grid alignment; remainder dropped on the high side
    crop_lo = fl * ((w - crop_edge) / (2 * fl));
  }
  layout.crop_size.assign(static_cast<size_t>(spec.d), crop_edge);
  layout.stride.assign(static_cast<size_t>(spec.d), crop_edge);
  layout.crop_lo.assign(static_cast<size_t>(spec.d), crop_lo);

  if (w == fl) layout.flags.push_back("w == f^l: undertrained-neighbor risk");
  if (!layout.cropped && w % fl != 0)
    layout.flags.push_back("w != n*f^l and not cropped: stitching inconsistency risk");

  std::vector<int64_t> counts(static_cast<size_t>(spec.d));
  for (int i = 0; i < spec.d; ++i)
    counts[static_cast<size_t>(i)] =
        (layout.region[static_cast<size_t>(i)] + crop_edge - 1) / crop_edge;

  std::vector<int64_t> idx(static_cast<size_t>(spec.d), 0);
  while (true) {
    TileLayout::Tile tile;
    tile.raw_start.resize(static_cast<size_t>(spec.d));
    tile.own_start.resize(static_cast<size_t>(spec.d));
    tile.own_size.resize(static_cast<size_t>(spec.d));
    for (int i = 0; i < spec.d; ++i) {
      const int64_t region = layout.region[static_cast<size_t>(i)];
      const int64_t own_start = idx[static_cast<size_t>(i)] * crop_edge;
      const int64_t own_end = std::min(own_start + crop_edge, region);
      int64_t raw = own_start - crop_lo;
      if (layout.cropped) {
        // keep raw windows on the f^l grid; shift the boundary tile inward
        // to the last grid position that still fits
        raw = std::min(raw, fl * ((region - w) / fl));
        raw = std::max<int64_t>(raw, 0);
        if (own_start < raw || own_end > raw + w)
          throw std::invalid_argument(
              "plan_tiles: region of size " + std::to_string(region) +
              " cannot be covered by f^l-aligned tiles of w=" + std::to_string(w) +
              "; choose an image whose output size is congruent to w modulo f^l");
      } else {
        raw = std::min(raw, region - w);
        raw = std::max<int64_t>(raw, 0);
      }
      tile.raw_start[static_cast<size_t>(i)] = raw;
      tile.own_start[static_cast<size_t>(i)] = own_start;
      tile.own_size[static_cast<size_t>(i)] = own_end - own_start;
    }
    layout.tiles.push_back(std::move(tile));
    int i = spec.d - 1;
    for (; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < counts[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
    if (i < 0) break;
  }
  return layout;
}

Tensor stitch_predict(const UNetInstance& inst, const Tensor& image, const TileLayout& layout) {
  const UNetSpec& spec = inst.spec;
  std::vector<int64_t> out_shape = layout.region;
  out_shape.push_back(spec.out_channels);
  Tensor out(out_shape, 0.0);
  const int64_t c = spec.out_channels;

  for (const auto& tile : layout.tiles) {
    Tensor tin = ops::crop(image, tile.raw_start, layout.input_tile);
    Tensor tout = forward(inst, tin);
    // copy the owned window from the raw tile output
    if (spec.d == 1) {
      const int64_t local = tile.own_start[0] - tile.raw_start[0];
      for (int64_t x = 0; x < tile.own_size[0]; ++x)
        for (int64_t ch = 0; ch < c; ++ch)
          out.data[static_cast<size_t>((tile.own_start[0] + x) * c + ch)] =
              tout.data[static_cast<size_t>((local + x) * c + ch)];
    } else {
      const int64_t l0 = tile.own_start[0] - tile.raw_start[0];
      const int64_t l1 = tile.own_start[1] - tile.raw_start[1];
      const int64_t W = layout.region[1];
      const int64_t tw = tout.shape[1];
      for (int64_t x0 = 0; x0 < tile.own_size[0]; ++x0)
        for (int64_t x1 = 0; x1 < tile.own_size[1]; ++x1)
          for (int64_t ch = 0; ch < c; ++ch)
            out.data[static_cast<size_t>(((tile.own_start[0] + x0) * W + tile.own_start[1] + x1) * c +
                                         ch)] =
                tout.data[static_cast<size_t>(((l0 + x0) * tw + l1 + x1) * c + ch)];
    }
  }
  return out;
}

ConsistencyReport consistency_check(const UNetInstance& inst, const Tensor& image,
                                    const TileLayout& layout) {
  ConsistencyReport report;
  Tensor mono = forward(inst, image);
  Tensor stitched = stitch_predict(inst, image, layout);
  if (mono.shape != stitched.shape)
    throw std::runtime_error("consistency_check: stitched shape " + stitched.shape_str() +
                             " does not match monolithic " + mono.shape_str());

  const int64_t d = inst.spec.d;
  const int64_t c = inst.spec.out_channels;
  std::vector<int64_t> map_shape = layout.region;
  map_shape.push_back(1);
  report.diff_map = Tensor(map_shape, 0.0);

  const int64_t pixels = report.diff_map.numel();
  for (int64_t p = 0; p < pixels; ++p) {
    double m = 0.0;
    for (int64_t ch = 0; ch < c; ++ch)
      m = std::max(m, std::fabs(mono.data[static_cast<size_t>(p * c + ch)] -
                                stitched.data[static_cast<size_t>(p * c + ch)]));
    report.diff_map.data[static_cast<size_t>(p)] = m;
    if (m != 0.0) {
      ++report.mismatch_count;
      report.max_abs_diff = std::max(report.max_abs_diff, m);
      if (report.mismatch_coords.size() < 64) {
        std::vector<int64_t> coord(static_cast<size_t>(d));
        int64_t rem = p;
        for (int64_t i = d - 1; i >= 0; --i) {
          coord[static_cast<size_t>(i)] = rem % layout.region[static_cast<size_t>(i)];
          rem /= layout.region[static_cast<size_t>(i)];
        }
        report.mismatch_coords.push_back(std::move(coord));
      }
    }
  }
  report.bit_exact = report.mismatch_count == 0;
  return report;
}

}  // namespace eqnet
