#include "eqnet/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "eqnet/png.hpp"

namespace eqnet {

namespace {

struct Dims {
  int64_t h, w, c;
};

Dims image_dims(const Tensor& t) {
  if (t.rank() == 2) return {1, t.shape[0], t.shape[1]};
  if (t.rank() == 3) return {t.shape[0], t.shape[1], t.shape[2]};
  throw std::invalid_argument("render: expected rank 2 or 3, got " + t.shape_str());
}

}  // namespace

std::vector<uint8_t> embedding_to_rgb(const Tensor& emb) {
  const Dims d = image_dims(emb);
  if (d.c > 3) throw std::invalid_argument("render: more than 3 embedding channels");

  std::vector<double> lo(static_cast<size_t>(d.c), 0.0), hi(static_cast<size_t>(d.c), 0.0);
  for (int64_t ch = 0; ch < d.c; ++ch) {
    lo[static_cast<size_t>(ch)] = emb.data[static_cast<size_t>(ch)];
    hi[static_cast<size_t>(ch)] = emb.data[static_cast<size_t>(ch)];
  }
  for (int64_t p = 0; p < d.h * d.w; ++p)
    for (int64_t ch = 0; ch < d.c; ++ch) {
      const double v = emb.data[static_cast<size_t>(p * d.c + ch)];
      lo[static_cast<size_t>(ch)] = std::min(lo[static_cast<size_t>(ch)], v);
      hi[static_cast<size_t>(ch)] = std::max(hi[static_cast<size_t>(ch)], v);
    }

  std::vector<uint8_t> rgb(static_cast<size_t>(d.h * d.w * 3), 0);
  for (int64_t p = 0; p < d.h * d.w; ++p)
    for (int64_t ch = 0; ch < d.c; ++ch) {
      const double span = hi[static_cast<size_t>(ch)] - lo[static_cast<size_t>(ch)];
      const double v = emb.data[static_cast<size_t>(p * d.c + ch)];
      const double norm = span > 0.0 ? (v - lo[static_cast<size_t>(ch)]) / span : 0.5;
      rgb[static_cast<size_t>(p * 3 + ch)] = static_cast<uint8_t>(std::lround(norm * 255.0));
    }
  return rgb;
}

void render_embedding_png(const Tensor& emb, const std::string& path) {
  const Dims d = image_dims(emb);
  write_png_rgb8(path, d.w, d.h, embedding_to_rgb(emb));
}

std::array<uint8_t, 3> label_color(int32_t id) {
  if (id == 0) return {0, 0, 0};
  const double hue = std::fmod(double(id) * 0.61803398874989485, 1.0) * 6.0;
  const int sector = static_cast<int>(hue);
  const double frac = hue - sector;
  const double s = 0.85, v = 1.0;
  const double p = v * (1 - s), q = v * (1 - s * frac), t = v * (1 - s * (1 - frac));
  double r = 0, g = 0, b = 0;
  switch (sector % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<uint8_t>(std::lround(r * 255.0)), static_cast<uint8_t>(std::lround(g * 255.0)),
          static_cast<uint8_t>(std::lround(b * 255.0))};
}

std::vector<uint8_t> labels_to_rgb(const InstanceLabeling& labels) {
  std::vector<uint8_t> rgb(static_cast<size_t>(labels.numel() * 3), 0);
  for (int64_t p = 0; p < labels.numel(); ++p) {
    const auto c = label_color(labels.ids[static_cast<size_t>(p)]);
    rgb[static_cast<size_t>(p * 3 + 0)] = c[0];
    rgb[static_cast<size_t>(p * 3 + 1)] = c[1];
    rgb[static_cast<size_t>(p * 3 + 2)] = c[2];
  }
  return rgb;
}

void render_labels_png(const InstanceLabeling& labels, const std::string& path) {
  const int64_t h = labels.size.size() == 1 ? 1 : labels.size[0];
  const int64_t w = labels.size.size() == 1 ? labels.size[0] : labels.size[1];
  write_png_rgb8(path, w, h, labels_to_rgb(labels));
}

std::vector<uint8_t> mismatch_to_rgb(const Tensor& diff_map) {
  const Dims d = image_dims(diff_map);
  std::vector<uint8_t> rgb(static_cast<size_t>(d.h * d.w * 3), 0);
  for (int64_t p = 0; p < d.h * d.w; ++p)
    if (diff_map.data[static_cast<size_t>(p * d.c)] != 0.0) rgb[static_cast<size_t>(p * 3)] = 255;
  return rgb;
}

void render_mismatch_png(const Tensor& diff_map, const std::string& path) {
  const Dims d = image_dims(diff_map);
  write_png_rgb8(path, d.w, d.h, mismatch_to_rgb(diff_map));
}

}  // namespace eqnet
