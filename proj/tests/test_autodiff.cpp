#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "eqnet/autodiff.hpp"
#include "eqnet/rng.hpp"

using namespace eqnet;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("backward through relu masks negative inputs") {
  Tape t;
  auto x = t.input(Tensor({2, 1}, {-1.0, 2.0}), "x");
  auto loss = t.sum(t.relu(x));
  t.backward(loss);
  CHECK(t.grad(x).data == std::vector<double>{0.0, 1.0});
}

TEST_CASE("backward through an identity conv spreads ones over the valid support") {
  Tape t;
  auto x = t.input(Tensor({5, 1}, {1, 2, 3, 4, 5}), "x");
  auto k = t.param(Tensor({3, 1, 1}, {0, 1, 0}), "k");
  auto b = t.param(Tensor({1}, 0.0), "b");
  auto loss = t.sum(t.conv(x, k, b, ops::Padding::valid));
  t.backward(loss);
  CHECK(t.grad(x).data == std::vector<double>{0, 1, 1, 1, 0});
  CHECK(t.grad(b).data == std::vector<double>{3});
}

TEST_CASE("backward errors: non-scalar root, grads before backward") {
  Tape t;
  auto x = t.input(Tensor({2, 1}, {1.0, 2.0}), "x");
  auto y = t.relu(x);
  CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
  Tape fresh;
  auto z = fresh.input(Tensor({1}, 1.0), "z");
  CHECK_THROWS_AS(fresh.grad(z), std::runtime_error);
  Tape empty;
  CHECK_THROWS_AS(empty.backward(0), std::invalid_argument);
}

TEST_CASE("maxpool backward deposits only at the recorded argmax, mass conserved") {
  Rng rng(99);
  Tensor in = random_tensor({8, 8, 2}, rng);
  Tape t;
  auto x = t.input(in, "x");
  auto p = t.maxpool(x, 2);
  t.backward(p, Tensor(t.value(p).shape, 1.0));
  Tensor g = t.grad(x);
  double total = 0.0;
  int64_t nonzero = 0;
  for (double v : g.data) {
    total += v;
    if (v != 0.0) ++nonzero;
  }
  CHECK(total == doctest::Approx(double(t.value(p).numel())));
  CHECK(nonzero == t.value(p).numel());  // distinct random values: one site per window
}

TEST_CASE("gradients of every operator match central finite differences (1e-6 relative)") {
  // composed graph exercising conv (both paddings), relu, pool, both
  // upsamplings, pad, crop, concat_crop, add, scale
  Rng rng(1234);
  std::vector<Tensor> leaves = {
      random_tensor({12, 12, 1}, rng),    // image
      random_tensor({3, 3, 1, 2}, rng),   // conv kernel
      random_tensor({2}, rng),            // bias
      random_tensor({2, 2, 2, 2}, rng),   // upconv kernel
      random_tensor({3, 3, 4, 1}, rng),   // head kernel
      random_tensor({1}, rng),            // head bias
  };
  GraphBuilder builder = [](Tape& t, const std::vector<Tensor>& ls) {
    BuiltGraph g;
    auto x = t.input(ls[0], "x");
    auto k = t.param(ls[1], "k");
    auto b = t.param(ls[2], "b");
    auto uk = t.param(ls[3], "uk");
    auto hk = t.param(ls[4], "hk");
    auto hb = t.param(ls[5], "hb");
    auto c1 = t.relu(t.conv(x, k, b, ops::Padding::zero));        // 12x12x2
    auto p1 = t.maxpool(c1, 2);                                   // 6x6x2
    auto up = t.upconv(p1, uk, 2);                                // 12x12x2
    auto nn = t.upsample_nn(p1, 2);                               // 12x12x2
    auto both = t.add(t.scale(up, 0.5), nn);                      // 12x12x2
    auto cc = t.concat_crop(c1, t.crop(both, {1, 1}, {10, 10}));  // 10x10x4
    auto out = t.conv(cc, hk, hb, ops::Padding::valid);           // 8x8x1
    auto padded = t.pad_zero(out, {1, 0}, {0, 1});                // 9x9x1
    g.loss = t.sum(padded);
    g.leaves = {x, k, b, uk, hk, hb};
    return g;
  };
  auto report = grad_check(builder, leaves, {"x", "k", "b", "uk", "hk", "hb"}, 1e-5, 1e-6);
  INFO("max rel err ", report.max_rel_err);
  CHECK(report.pass);
}

TEST_CASE("stock grad checks pass at 1e-6 relative") {
  auto a = grad_check_conv_relu(42);
  INFO("conv+relu ", a.max_rel_err);
  CHECK(a.pass);
  auto b = grad_check_maxpool_chain(43);
  INFO("maxpool chain ", b.max_rel_err);
  CHECK(b.pass);
  auto c = grad_check_unet_one_level(44);
  INFO("one-level net ", c.max_rel_err);
  CHECK(c.pass);
}

TEST_CASE("backward with an injected seed matches sum-based backward") {
  Rng rng(5);
  Tensor in = random_tensor({6, 2}, rng);
  Tensor k = random_tensor({3, 2, 2}, rng);
  Tensor b = random_tensor({2}, rng);

  Tape t1;
  auto x1 = t1.input(in, "x");
  auto out1 = t1.conv(x1, t1.param(k, "k"), t1.param(b, "b"), ops::Padding::valid);
  auto loss = t1.sum(out1);
  t1.backward(loss);

  Tape t2;
  auto x2 = t2.input(in, "x");
  auto out2 = t2.conv(x2, t2.param(k, "k"), t2.param(b, "b"), ops::Padding::valid);
  t2.backward(out2, Tensor(t2.value(out2).shape, 1.0));

  CHECK(bit_equal(t1.grad(x1), t2.grad(x2)));
}

TEST_CASE("every parameter reachable from the loss receives a gradient of its own shape") {
  Rng rng(6);
  Tape t;
  auto x = t.input(random_tensor({10, 1}, rng), "x");
  auto k = t.param(random_tensor({3, 1, 2}, rng), "k");
  auto b = t.param(random_tensor({2}, rng), "b");
  auto loss = t.sum(t.relu(t.conv(x, k, b, ops::Padding::valid)));
  t.backward(loss);
  auto grads = t.param_gradients();
  REQUIRE(grads.size() == 2);
  CHECK(grads["k"].shape == t.value(k).shape);
  CHECK(grads["b"].shape == t.value(b).shape);
}
