#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "eqnet/synthdata.hpp"
#include "eqnet/tensor.hpp"

namespace eqnet {

// Per-channel min-max normalization to 8-bit RGB; up to 3 channels,
// missing channels zero-filled. 1-d embeddings render as a height-1 strip.
std::vector<uint8_t> embedding_to_rgb(const Tensor& emb);
void render_embedding_png(const Tensor& emb, const std::string& path);

// Deterministic palette: background black, ids colored by golden-ratio hue.
std::array<uint8_t, 3> label_color(int32_t id);
std::vector<uint8_t> labels_to_rgb(const InstanceLabeling& labels);
void render_labels_png(const InstanceLabeling& labels, const std::string& path);

// Nonzero diffs in red over black.
std::vector<uint8_t> mismatch_to_rgb(const Tensor& diff_map);
void render_mismatch_png(const Tensor& diff_map, const std::string& path);

}  // namespace eqnet
