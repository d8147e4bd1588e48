#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "eqnet/synthdata.hpp"

using namespace eqnet;

TEST_CASE("disk_grid: determinism, labels, intensities") {
  DiskSceneSpec spec;
  spec.size = {64, 64};
  spec.spacing = 16;
  spec.radius = 5;
  DiskScene a = disk_grid(spec);
  DiskScene b = disk_grid(spec);
  CHECK(bit_equal(a.image, b.image));
  CHECK(a.labels.ids == b.labels.ids);
  CHECK(a.labels.max_id() == static_cast<int32_t>(a.centers.size()));
  for (double v : a.image.data) CHECK((v == 0.0 || v == 1.0));

  // ids form a contiguous range 0..K
  std::set<int32_t> ids(a.labels.ids.begin(), a.labels.ids.end());
  for (int32_t k = 0; k <= a.labels.max_id(); ++k) CHECK(ids.count(k) == 1);
}

TEST_CASE("disk_grid: spacing-15 and spacing-16 scenes carry many disks") {
  for (int64_t spacing : {15, 16}) {
    DiskSceneSpec spec;
    spec.size = {128, 128};
    spec.spacing = spacing;
    spec.radius = 5;
    DiskScene scene = disk_grid(spec);
    CHECK(scene.labels.max_id() >= 64);
  }
}

TEST_CASE("disk_grid: one fully interior disk gives exactly two label values") {
  DiskSceneSpec spec;
  spec.size = {14, 14};
  spec.spacing = 15;
  spec.radius = 5;
  spec.lattice_offset = 7;
  DiskScene scene = disk_grid(spec);
  CHECK(scene.labels.max_id() == 1);
  std::set<int32_t> ids(scene.labels.ids.begin(), scene.labels.ids.end());
  CHECK(ids == std::set<int32_t>{0, 1});
}

TEST_CASE("disk_grid: exactly periodic under one-spacing shifts") {
  DiskSceneSpec spec;
  spec.size = {96, 96};
  spec.spacing = 16;
  spec.radius = 5;
  DiskScene scene = disk_grid(spec);
  const int64_t W = 96, s = spec.spacing;
  for (int64_t y = 0; y < W - s; ++y)
    for (int64_t x = 0; x < W; ++x)
      CHECK(scene.image.data[static_cast<size_t>(y * W + x)] ==
            scene.image.data[static_cast<size_t>((y + s) * W + x)]);
  for (int64_t y = 0; y < W; ++y)
    for (int64_t x = 0; x < W - s; ++x)
      CHECK(scene.image.data[static_cast<size_t>(y * W + x)] ==
            scene.image.data[static_cast<size_t>(y * W + x + s)]);
}

TEST_CASE("disk_grid rejects invalid parameters") {
  DiskSceneSpec spec;
  spec.size = {32, 32};
  spec.spacing = 10;
  spec.radius = 5;  // spacing must exceed the diameter
  CHECK_THROWS_AS(disk_grid(spec), std::invalid_argument);
  spec.radius = 4;
  spec.fg_intensity = 1.5;
  CHECK_THROWS_AS(disk_grid(spec), std::invalid_argument);
}

TEST_CASE("add_gaussian_noise: identity at sigma 0, seeded, small mean shift") {
  DiskSceneSpec spec;
  spec.size = {256, 256};
  spec.spacing = 16;
  spec.radius = 5;
  DiskScene scene = disk_grid(spec);
  CHECK(bit_equal(add_gaussian_noise(scene.image, 0.0, 1), scene.image));
  CHECK(!bit_equal(add_gaussian_noise(scene.image, 0.02, 1),
                   add_gaussian_noise(scene.image, 0.02, 2)));
  CHECK(bit_equal(add_gaussian_noise(scene.image, 0.02, 3),
                  add_gaussian_noise(scene.image, 0.02, 3)));

  double base_mean = 0.0;
  for (double v : scene.image.data) base_mean += v;
  base_mean /= double(scene.image.numel());
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Tensor noisy = add_gaussian_noise(scene.image, 0.02, seed);
    double mean = 0.0;
    for (double v : noisy.data) mean += v;
    mean /= double(noisy.numel());
    CHECK(std::fabs(mean - base_mean) < 0.005);
    for (double v : noisy.data) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("elastic_deform: zero displacement is the identity") {
  DiskSceneSpec spec;
  spec.size = {48, 48};
  spec.spacing = 15;
  spec.radius = 5;
  DiskScene scene = disk_grid(spec);
  DeformParams params;
  params.sigma = 0.0;
  DeformResult res = elastic_deform(scene.image, scene.labels, params);
  CHECK(bit_equal(res.image, scene.image));
  CHECK(res.labels.ids == scene.labels.ids);
  CHECK(res.max_displacement == 0.0);
}

TEST_CASE("elastic_deform: label census preserved for default params over 10 seeds") {
  DiskSceneSpec spec;
  spec.size = {96, 96};
  spec.spacing = 15;
  spec.radius = 5;
  DiskScene scene = disk_grid(spec);
  std::set<int32_t> before(scene.labels.ids.begin(), scene.labels.ids.end());
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    DeformParams params;
    params.seed = seed;
    DeformResult res = elastic_deform(scene.image, scene.labels, params);
    std::set<int32_t> after(res.labels.ids.begin(), res.labels.ids.end());
    CHECK(after == before);  // no disk vanishes under a small deformation
  }
}

TEST_CASE("elastic_deform: sigma 1.0 moves more than 1% of pixels") {
  DiskSceneSpec spec;
  spec.size = {96, 96};
  spec.spacing = 15;
  spec.radius = 5;
  DiskScene scene = disk_grid(spec);
  DeformParams params;
  params.sigma = 1.0;
  params.seed = 4;
  DeformResult res = elastic_deform(scene.image, scene.labels, params);
  int64_t changed = 0;
  for (int64_t i = 0; i < scene.image.numel(); ++i)
    if (res.image.data[static_cast<size_t>(i)] != scene.image.data[static_cast<size_t>(i)]) ++changed;
  CHECK(changed > scene.image.numel() / 100);
  // deterministic per seed
  DeformResult again = elastic_deform(scene.image, scene.labels, params);
  CHECK(bit_equal(again.image, res.image));
}

TEST_CASE("elastic_deform rejects displacements beyond the smoothing support") {
  DiskSceneSpec spec;
  spec.size = {48, 48};
  spec.spacing = 15;
  spec.radius = 5;
  DiskScene scene = disk_grid(spec);
  DeformParams params;
  params.sigma = 40.0;  // far beyond 3 * smooth_radius
  params.seed = 1;
  CHECK_THROWS_WITH_AS(elastic_deform(scene.image, scene.labels, params),
                       doctest::Contains("exceeds"), std::runtime_error);
}

TEST_CASE("scene serialization round trip") {
  DiskSceneSpec spec;
  spec.size = {48, 48};
  spec.spacing = 16;
  spec.radius = 5;
  DiskScene scene = disk_grid(spec);
  save_scene("scene_io_test", scene);
  DiskScene back = load_scene("scene_io_test");
  CHECK(bit_equal(back.image, scene.image));
  CHECK(back.labels.ids == scene.labels.ids);
  std::filesystem::remove_all("scene_io_test");
}

TEST_CASE("constant_image") {
  Tensor ones = constant_image({4, 5}, 1.0);
  CHECK(ones.shape == std::vector<int64_t>{4, 5, 1});
  for (double v : ones.data) CHECK(v == 1.0);
  Tensor zeros = constant_image({3, 3}, 0.0, 2);
  CHECK(zeros.shape == std::vector<int64_t>{3, 3, 2});
  for (double v : zeros.data) CHECK(v == 0.0);
}
