#include "eqnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "eqnet/rng.hpp"

namespace eqnet {

InstanceLabeling::InstanceLabeling(std::vector<int64_t> size_, int32_t fill)
    : size(std::move(size_)), ids(static_cast<size_t>(shape_numel(size)), fill) {}

int32_t InstanceLabeling::max_id() const {
  int32_t m = 0;
  for (int32_t v : ids) m = std::max(m, v);
  return m;
}

void DiskSceneSpec::validate() const {
  if (size.size() != 2) throw std::invalid_argument("disk scene: d=2 canvas required");
  if (size[0] < 1 || size[1] < 1) throw std::invalid_argument("disk scene: canvas too small");
  if (spacing <= 2 * radius)
    throw std::invalid_argument("disk scene: spacing " + std::to_string(spacing) +
                                " must exceed disk diameter " + std::to_string(2 * radius));
  if (fg_intensity < 0.0 || fg_intensity > 1.0 || bg_intensity < 0.0 || bg_intensity > 1.0)
    throw std::invalid_argument("disk scene: intensities must lie in [0,1]");
}

DiskScene disk_grid(const DiskSceneSpec& spec) {
  spec.validate();
  DiskScene scene;
  scene.spec = spec;
  const int64_t H = spec.size[0], W = spec.size[1];
  const int64_t s = spec.spacing, r = spec.radius;
  const int64_t off = spec.lattice_offset < 0 ? s / 2 : spec.lattice_offset;

  // lattice indices whose disks touch the canvas
  const auto k_lo = [&](int64_t) { return static_cast<int64_t>(std::floor(double(-r - off) / double(s))); };
  const auto k_hi = [&](int64_t extent) {
    return static_cast<int64_t>(std::ceil(double(extent - 1 + r - off) / double(s)));
  };

  std::map<std::pair<int64_t, int64_t>, int32_t> center_id;
  for (int64_t k0 = k_lo(H); k0 <= k_hi(H); ++k0) {
    for (int64_t k1 = k_lo(W); k1 <= k_hi(W); ++k1) {
      const int64_t c0 = off + k0 * s, c1 = off + k1 * s;
      // nearest canvas point decides visibility
      const int64_t n0 = std::clamp<int64_t>(c0, 0, H - 1), n1 = std::clamp<int64_t>(c1, 0, W - 1);
      const int64_t d0 = n0 - c0, d1 = n1 - c1;
      if (d0 * d0 + d1 * d1 > r * r) continue;
      const int32_t id = static_cast<int32_t>(center_id.size()) + 1;
      center_id.emplace(std::make_pair(k0, k1), id);
      scene.centers.push_back({c0, c1});
    }
  }

  scene.image = Tensor({H, W, 1}, spec.bg_intensity);
  scene.labels = InstanceLabeling({H, W});
  for (int64_t p0 = 0; p0 < H; ++p0) {
    for (int64_t p1 = 0; p1 < W; ++p1) {
      // spacing > 2r, so at most the nearest lattice center can cover p
      const int64_t k0 = (2 * (p0 - off) + s) / (2 * s) - ((2 * (p0 - off) + s) % (2 * s) < 0 ? 1 : 0);
      const int64_t k1 = (2 * (p1 - off) + s) / (2 * s) - ((2 * (p1 - off) + s) % (2 * s) < 0 ? 1 : 0);
      const int64_t c0 = off + k0 * s, c1 = off + k1 * s;
      const int64_t d0 = p0 - c0, d1 = p1 - c1;
      if (d0 * d0 + d1 * d1 <= r * r) {
        scene.image.data[static_cast<size_t>(p0 * W + p1)] = spec.fg_intensity;
        auto it = center_id.find({k0, k1});
        if (it != center_id.end())
          scene.labels.ids[static_cast<size_t>(p0 * W + p1)] = it->second;
      }
    }
  }
  return scene;
}

Tensor add_gaussian_noise(const Tensor& image, double sigma, uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
  Tensor out = image;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (auto& v : out.data) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  return out;
}

void DeformParams::validate() const {
  if (grid_spacing < 2) throw std::invalid_argument("deform: grid spacing must be >= 2");
  if (sigma < 0.0) throw std::invalid_argument("deform: sigma must be >= 0");
  if (smooth_radius < 0.0) throw std::invalid_argument("deform: smooth radius must be >= 0");
}

namespace {

// separable gaussian blur of a scalar field, truncated at 3 std
void blur_field(std::vector<double>& field, int64_t H, int64_t W, double std_dev) {
  if (std_dev <= 0.0) return;
  const int64_t rad = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * std_dev)));
  std::vector<double> taps(static_cast<size_t>(2 * rad + 1));
  double norm = 0.0;
  for (int64_t i = -rad; i <= rad; ++i) {
    taps[static_cast<size_t>(i + rad)] = std::exp(-0.5 * double(i * i) / (std_dev * std_dev));
    norm += taps[static_cast<size_t>(i + rad)];
  }
  for (auto& t : taps) t /= norm;

  std::vector<double> tmp(field.size());
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int64_t i = -rad; i <= rad; ++i) {
        const int64_t xx = std::clamp<int64_t>(x + i, 0, W - 1);
        acc += taps[static_cast<size_t>(i + rad)] * field[static_cast<size_t>(y * W + xx)];
      }
      tmp[static_cast<size_t>(y * W + x)] = acc;
    }
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int64_t i = -rad; i <= rad; ++i) {
        const int64_t yy = std::clamp<int64_t>(y + i, 0, H - 1);
        acc += taps[static_cast<size_t>(i + rad)] * tmp[static_cast<size_t>(yy * W + x)];
      }
      field[static_cast<size_t>(y * W + x)] = acc;
    }
}

}  // namespace

DeformResult elastic_deform(const Tensor& image, const InstanceLabeling& labels,
                            const DeformParams& params) {
  params.validate();
  if (image.rank() != 3) throw std::invalid_argument("elastic_deform: expected a (H,W,C) image");
  const int64_t H = image.shape[0], W = image.shape[1], C = image.shape[2];
  if (labels.size != std::vector<int64_t>{H, W})
    throw std::invalid_argument("elastic_deform: label grid does not match the image");

  // control grid (covering the canvas with one node beyond each border)
  const int64_t g = params.grid_spacing;
  const int64_t n0 = H / g + 2, n1 = W / g + 2;
  std::vector<double> ctrl0(static_cast<size_t>(n0 * n1)), ctrl1(static_cast<size_t>(n0 * n1));
  Rng rng(params.seed);
  for (int64_t i = 0; i < n0 * n1; ++i) {
    ctrl0[static_cast<size_t>(i)] = params.sigma * rng.normal();
    ctrl1[static_cast<size_t>(i)] = params.sigma * rng.normal();
  }

  // dense field by bilinear interpolation of the control grid
  std::vector<double> d0(static_cast<size_t>(H * W)), d1(static_cast<size_t>(H * W));
  for (int64_t y = 0; y < H; ++y) {
    const double fy = double(y) / double(g);
    const int64_t iy = std::min<int64_t>(static_cast<int64_t>(fy), n0 - 2);
    const double ty = fy - double(iy);
    for (int64_t x = 0; x < W; ++x) {
      const double fx = double(x) / double(g);
      const int64_t ix = std::min<int64_t>(static_cast<int64_t>(fx), n1 - 2);
      const double tx = fx - double(ix);
      auto lerp2 = [&](const std::vector<double>& c) {
        const double a = c[static_cast<size_t>(iy * n1 + ix)] * (1 - tx) +
                         c[static_cast<size_t>(iy * n1 + ix + 1)] * tx;
        const double b = c[static_cast<size_t>((iy + 1) * n1 + ix)] * (1 - tx) +
                         c[static_cast<size_t>((iy + 1) * n1 + ix + 1)] * tx;
        return a * (1 - ty) + b * ty;
      };
      d0[static_cast<size_t>(y * W + x)] = lerp2(ctrl0);
      d1[static_cast<size_t>(y * W + x)] = lerp2(ctrl1);
    }
  }
  blur_field(d0, H, W, params.smooth_radius);
  blur_field(d1, H, W, params.smooth_radius);

  DeformResult res;
  for (int64_t i = 0; i < H * W; ++i)
    res.max_displacement =
        std::max(res.max_displacement,
                 std::hypot(d0[static_cast<size_t>(i)], d1[static_cast<size_t>(i)]));
  const double support =
      params.smooth_radius > 0.0 ? 3.0 * params.smooth_radius : double(params.grid_spacing) / 2.0;
  if (res.max_displacement > support)
    throw std::runtime_error("elastic_deform: displacement " + std::to_string(res.max_displacement) +
                             " exceeds smoothing support " + std::to_string(support));

  res.image = Tensor(image.shape);
  res.labels = InstanceLabeling({H, W});
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      const double sy = std::clamp(double(y) + d0[static_cast<size_t>(y * W + x)], 0.0, double(H - 1));
      const double sx = std::clamp(double(x) + d1[static_cast<size_t>(y * W + x)], 0.0, double(W - 1));
      const int64_t y0 = static_cast<int64_t>(sy), x0 = static_cast<int64_t>(sx);
      const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const double ty = sy - double(y0), tx = sx - double(x0);
      for (int64_t ch = 0; ch < C; ++ch) {
        const double v00 = image.data[static_cast<size_t>((y0 * W + x0) * C + ch)];
        const double v01 = image.data[static_cast<size_t>((y0 * W + x1) * C + ch)];
        const double v10 = image.data[static_cast<size_t>((y1 * W + x0) * C + ch)];
        const double v11 = image.data[static_cast<size_t>((y1 * W + x1) * C + ch)];
        res.image.data[static_cast<size_t>((y * W + x) * C + ch)] =
            (v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty;
      }
      const int64_t ny = static_cast<int64_t>(std::llround(sy));
      const int64_t nx = static_cast<int64_t>(std::llround(sx));
      res.labels.ids[static_cast<size_t>(y * W + x)] = labels.ids[static_cast<size_t>(ny * W + nx)];
    }
  }
  return res;
}

Tensor constant_image(const std::vector<int64_t>& size, double value, int64_t channels) {
  std::vector<int64_t> shape = size;
  shape.push_back(channels);
  return Tensor(shape, value);
}

void save_scene(const std::string& dir, const DiskScene& scene) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_tensor((fs::path(dir) / "image.eten1").string(), scene.image);
  Tensor labels(scene.labels.size);
  for (int64_t i = 0; i < scene.labels.numel(); ++i)
    labels.data[static_cast<size_t>(i)] = double(scene.labels.ids[static_cast<size_t>(i)]);
  save_tensor((fs::path(dir) / "labels.eten1").string(), labels);
  nlohmann::json sidecar{{"size", scene.spec.size},
                         {"spacing", scene.spec.spacing},
                         {"radius", scene.spec.radius},
                         {"fg_intensity", scene.spec.fg_intensity},
                         {"bg_intensity", scene.spec.bg_intensity},
                         {"lattice_offset", scene.spec.lattice_offset},
                         {"seed", scene.spec.seed}};
  std::ofstream os(fs::path(dir) / "scene.json");
  if (!os) throw std::runtime_error("cannot open for write: " + dir + "/scene.json");
  os << sidecar.dump(2) << "\n";
}

DiskScene load_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "scene.json");
  if (!is) throw std::runtime_error("cannot open scene sidecar in " + dir);
  nlohmann::json sidecar = nlohmann::json::parse(is);
  DiskSceneSpec spec;
  spec.size = sidecar.at("size").get<std::vector<int64_t>>();
  spec.spacing = sidecar.at("spacing").get<int64_t>();
  spec.radius = sidecar.at("radius").get<int64_t>();
  spec.fg_intensity = sidecar.at("fg_intensity").get<double>();
  spec.bg_intensity = sidecar.at("bg_intensity").get<double>();
  spec.lattice_offset = sidecar.at("lattice_offset").get<int64_t>();
  spec.seed = sidecar.at("seed").get<uint64_t>();
  DiskScene scene = disk_grid(spec);
  // the sidecar is authoritative; the tensors are kept for other tools
  Tensor image = load_tensor((fs::path(dir) / "image.eten1").string());
  if (!bit_equal(image, scene.image))
    throw std::runtime_error("scene image does not match its sidecar spec in " + dir);
  return scene;
}

}  // namespace eqnet
