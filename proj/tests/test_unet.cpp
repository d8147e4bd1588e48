#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "eqnet/constructions.hpp"
#include "eqnet/rng.hpp"
#include "eqnet/unet.hpp"

using namespace eqnet;

namespace {

UNetSpec small_spec(int d, int levels, int convs, int kernel,
                    Upsampling up = Upsampling::fixed,
                    ops::Padding pad = ops::Padding::valid, int64_t base = 2) {
  UNetSpec spec;
  spec.d = d;
  spec.levels = levels;
  spec.factor = 2;
  spec.convs_per_block = convs;
  spec.kernel_size = kernel;
  spec.channels = UNetSpec::default_channels(levels, base);
  spec.padding = pad;
  spec.upsampling = up;
  return spec;
}

// Independent forward-shape simulator: walks the network structure per dim
// and returns the output edge, or -1 when the input size does not fit.
int64_t simulate_output_edge(const UNetSpec& spec, int64_t input) {
  const int64_t s = spec.block_shrink();
  const int64_t f = spec.factor;
  int64_t x = input;
  std::vector<int64_t> skips;
  for (int j = 0; j < spec.levels; ++j) {
    x -= s;
    if (x < 1) return -1;
    skips.push_back(x);
    if (x % f != 0) return -1;
    x /= f;
  }
  x -= s;  // bottleneck block
  if (x < 1) return -1;
  for (int j = spec.levels - 1; j >= 0; --j) {
    x *= f;
    const int64_t skip = skips[static_cast<size_t>(j)];
    if (skip < x || (skip - x) % 2 != 0) return -1;
    x -= s;  // decoder block (the level-0 block is the output head)
    if (x < 1) return -1;
  }
  return x;
}

Tensor random_image(const std::vector<int64_t>& spatial, int64_t c, Rng& rng) {
  std::vector<int64_t> shape = spatial;
  shape.push_back(c);
  Tensor t(shape);
  for (auto& v : t.data) v = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("plan_geometry agrees with the forward-shape simulation for inputs 1..96") {
  for (int levels : {1, 2, 3}) {
    for (int convs : {1, 2}) {
      UNetSpec spec = small_spec(1, levels, convs, 3);
      std::vector<std::pair<int64_t, int64_t>> feasible;
      for (int64_t input = 1; input <= 96; ++input) {
        const int64_t out = simulate_output_edge(spec, input);
        if (out >= 1) feasible.emplace_back(input, out);
      }
      REQUIRE(!feasible.empty());
      for (int64_t requested = 1; requested <= feasible.back().second; ++requested) {
        ShapePlan plan = plan_geometry(spec, {requested});
        int64_t want_input = -1, want_output = -1;
        for (const auto& [in, out] : feasible)
          if (out >= requested) {
            want_input = in;
            want_output = out;
            break;
          }
        REQUIRE(want_input > 0);
        INFO("l=", levels, " convs=", convs, " requested=", requested);
        CHECK(plan.input_size[0] == want_input);
        CHECK(plan.output_size[0] == want_output);
        CHECK(simulate_output_edge(spec, plan.input_size[0]) == plan.output_size[0]);
        CHECK(plan.context_margin[0] == (plan.input_size[0] - plan.output_size[0]) / 2);
        CHECK(plan.receptive_field == plan.input_size[0] - plan.output_size[0] + 1);
      }
    }
  }
}

TEST_CASE("plan_geometry: l=1 convs=1 k=3, requested 2") {
  UNetSpec spec = small_spec(1, 1, 1, 3);
  ShapePlan plan = plan_geometry(spec, {2});
  CHECK(plan.output_size[0] == 2);
  CHECK(plan.input_size[0] == 10);
  CHECK(simulate_output_edge(spec, 10) == 2);
}

TEST_CASE("plan_geometry is monotone in the requested output") {
  UNetSpec spec = small_spec(2, 3, 2, 3);
  int64_t prev_input = 0;
  for (int64_t r = 1; r <= 40; ++r) {
    ShapePlan plan = plan_geometry(spec, {r, r});
    CHECK(plan.input_size[0] >= prev_input);
    prev_input = plan.input_size[0];
  }
}

TEST_CASE("plan_geometry: divisibility holds at every level (l=3)") {
  UNetSpec spec = small_spec(2, 3, 2, 3);
  ShapePlan plan = plan_geometry(spec, {13, 21});
  REQUIRE(plan.prepool_size.size() == 3);
  for (const auto& level : plan.prepool_size)
    for (int64_t sz : level) CHECK(sz % 2 == 0);
  // feasible outputs recur with period f^l
  ShapePlan next = plan_geometry(spec, {plan.output_size[0] + 1, plan.output_size[1] + 1});
  CHECK(next.output_size[0] == plan.output_size[0] + 8);
}

TEST_CASE("plan_geometry: zero padding returns the request unchanged") {
  UNetSpec spec = small_spec(2, 3, 2, 3, Upsampling::fixed, ops::Padding::zero);
  ShapePlan plan = plan_geometry(spec, {17, 17});
  CHECK(plan.input_size == std::vector<int64_t>{17, 17});
  CHECK(plan.output_size == std::vector<int64_t>{17, 17});
  CHECK(plan.prepool_size[0] == std::vector<int64_t>{18, 18});  // padded to divisibility
  CHECK(plan.context_margin == std::vector<int64_t>{0, 0});
}

TEST_CASE("plan_geometry validates the channel plan in valid mode only") {
  UNetSpec spec = small_spec(1, 2, 1, 3);
  spec.channels = {2, 4};  // should be 3 entries
  CHECK_THROWS_WITH_AS(plan_geometry(spec, {4}), doctest::Contains("channel plan"),
                       std::invalid_argument);
  spec.padding = ops::Padding::zero;
  CHECK_NOTHROW(plan_geometry(spec, {4}));
}

TEST_CASE("build: zero init maps any input to zeros, seeds are reproducible") {
  UNetSpec spec = small_spec(1, 1, 1, 3, Upsampling::learnt);
  UNetInstance zeros = build_unet(spec, Init::zeros, 0);
  Rng rng(3);
  ShapePlan plan = plan_geometry(spec, {4});
  Tensor img = random_image(plan.input_size, 1, rng);
  Tensor out = forward(zeros, img);
  for (double v : out.data) CHECK(v == 0.0);

  UNetInstance a = build_unet(spec, Init::random, 7);
  UNetInstance b = build_unet(spec, Init::random, 7);
  UNetInstance c = build_unet(spec, Init::random, 8);
  REQUIRE(a.params.size() == b.params.size());
  bool all_equal = true, any_diff_c = false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    all_equal &= bit_equal(a.params[i].second, b.params[i].second);
    any_diff_c |= !bit_equal(a.params[i].second, c.params[i].second);
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("random instance forward on planned geometry is finite (smoke, d=1 and d=2)") {
  for (int d : {1, 2}) {
    UNetSpec spec = small_spec(d, 2, 2, 3, Upsampling::learnt);
    UNetInstance inst = build_unet(spec, Init::random, 11);
    ShapePlan plan = plan_geometry(spec, std::vector<int64_t>(static_cast<size_t>(d), 5));
    Rng rng(12);
    Tensor img = random_image(plan.input_size, 1, rng);
    Tensor out = forward(inst, img);
    CHECK(out.all_finite());
    CHECK(ops::spatial_shape(out) == plan.output_size);
  }
}

TEST_CASE("forward: blockwise-max construction on the 1-d ramp") {
  // k=1 keeps the network a pure index map: the output over each aligned
  // f^l block is the block max
  UNetSpec spec = small_spec(1, 2, 1, 1);
  spec.channels = {1, 1, 1};
  UNetInstance inst = lemma1_instance(spec);
  Tensor ramp({16, 1});
  for (int64_t i = 0; i < 16; ++i) ramp.data[static_cast<size_t>(i)] = double(i);
  Tensor out = forward(inst, ramp);
  REQUIRE(out.shape == std::vector<int64_t>{16, 1});
  for (int64_t i = 0; i < 16; ++i)
    CHECK(out.data[static_cast<size_t>(i)] == double(4 * (i / 4) + 3));
}

TEST_CASE("forward: constant input stays constant under fixed upsampling + valid padding") {
  UNetSpec spec = small_spec(2, 2, 2, 3, Upsampling::fixed);
  UNetInstance inst = build_unet(spec, Init::random, 21);
  ShapePlan plan = plan_geometry(spec, {6, 6});
  Tensor img(std::vector<int64_t>{plan.input_size[0], plan.input_size[1], 1}, 0.7);
  Tensor out = forward(inst, img);
  for (int64_t c = 0; c < spec.out_channels; ++c)
    for (int64_t p = 1; p < out.numel() / spec.out_channels; ++p)
      CHECK(out.data[static_cast<size_t>(p * spec.out_channels + c)] ==
            out.data[static_cast<size_t>(c)]);
}

TEST_CASE("forward: zero-padding output shape equals the input shape") {
  UNetSpec spec = small_spec(2, 2, 2, 3, Upsampling::learnt, ops::Padding::zero);
  UNetInstance inst = build_unet(spec, Init::random, 31);
  Rng rng(31);
  for (int64_t edge : {7, 12, 17}) {
    Tensor img = random_image({edge, edge}, 1, rng);
    Tensor out = forward(inst, img);
    CHECK(ops::spatial_shape(out) == std::vector<int64_t>{edge, edge});
  }
}

TEST_CASE("forward: geometry mismatch errors cite the plan") {
  UNetSpec spec = small_spec(1, 2, 2, 3);
  UNetInstance inst = build_unet(spec, Init::random, 5);
  Rng rng(5);
  Tensor img = random_image({30}, 1, rng);  // infeasible input edge
  CHECK_THROWS_WITH_AS(forward(inst, img), doctest::Contains("plan{"), std::invalid_argument);
}

TEST_CASE("point_function_eval matches the full forward at all coordinates") {
  UNetSpec spec = small_spec(2, 2, 1, 3, Upsampling::learnt, ops::Padding::valid, 2);
  UNetInstance inst = build_unet(spec, Init::random, 17);
  ShapePlan plan = plan_geometry(spec, {10, 10});
  Rng rng(18);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor img = random_image(plan.input_size, 1, rng);
    Tensor full = forward(inst, img);
    for (int64_t y = 0; y < plan.output_size[0]; ++y)
      for (int64_t x = 0; x < plan.output_size[1]; ++x) {
        auto v = point_function_eval(inst, img, {y, x});
        for (int64_t c = 0; c < spec.out_channels; ++c)
          CHECK(v[static_cast<size_t>(c)] ==
                full.data[static_cast<size_t>((y * plan.output_size[1] + x) * spec.out_channels +
                                              c)]);
      }
  }
  CHECK_THROWS_AS(point_function_eval(inst, random_image(plan.input_size, 1, rng), {-1, 0}),
                  std::invalid_argument);
}

TEST_CASE("point_function_eval: constant image, fixed upsampling: all positions equal") {
  UNetSpec spec = small_spec(1, 2, 1, 3, Upsampling::fixed);
  UNetInstance inst = build_unet(spec, Init::random, 23);
  ShapePlan plan = plan_geometry(spec, {8});
  Tensor img(std::vector<int64_t>{plan.input_size[0], 1}, 1.0);
  auto v0 = point_function_eval(inst, img, {0});
  for (int64_t x = 1; x < plan.output_size[0]; ++x)
    CHECK(point_function_eval(inst, img, {x}) == v0);
}

TEST_CASE("instance serialization round trips bit-exactly") {
  UNetSpec spec = small_spec(2, 2, 2, 3, Upsampling::learnt);
  UNetInstance inst = build_unet(spec, Init::random, 77);
  const std::string dir = "unet_io_test";
  save_instance(dir, inst);
  UNetInstance back = load_instance(dir);
  CHECK(back.id == inst.id);
  REQUIRE(back.params.size() == inst.params.size());
  for (size_t i = 0; i < inst.params.size(); ++i) {
    CHECK(back.params[i].first == inst.params[i].first);
    CHECK(bit_equal(back.params[i].second, inst.params[i].second));
  }
  ShapePlan plan = plan_geometry(spec, {6, 6});
  Rng rng(78);
  Tensor img = random_image(plan.input_size, 1, rng);
  CHECK(bit_equal(forward(inst, img), forward(back, img)));
  std::filesystem::remove_all(dir);
}
