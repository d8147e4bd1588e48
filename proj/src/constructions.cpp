#include "eqnet/constructions.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace eqnet {

bool diagonal_less(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("diagonal_less: coordinate dimensionality mismatch");
  const int64_t sa = std::accumulate(a.begin(), a.end(), int64_t{0});
  const int64_t sb = std::accumulate(b.begin(), b.end(), int64_t{0});
  if (sa != sb) return sa < sb;
  for (size_t k = 0; k < a.size(); ++k)
    if (a[k] != b[k]) return a[k] < b[k];
  return false;
}

Tensor diagonal_image(int d, const std::vector<int64_t>& size) {
  if (static_cast<int>(size.size()) != d)
    throw std::invalid_argument("diagonal_image: size dimensionality mismatch");
  for (int64_t s : size)
    if (s < 1) throw std::invalid_argument("diagonal_image: size must be >= 1");

  const int64_t n = shape_numel(size);
  std::vector<std::vector<int64_t>> coords(static_cast<size_t>(n));
  for (int64_t flat = 0; flat < n; ++flat) {
    std::vector<int64_t> c(size.size());
    int64_t rem = flat;
    for (int64_t dim = d - 1; dim >= 0; --dim) {
      c[static_cast<size_t>(dim)] = rem % size[static_cast<size_t>(dim)];
      rem /= size[static_cast<size_t>(dim)];
    }
    coords[static_cast<size_t>(flat)] = std::move(c);
  }
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t i, int64_t j) {
    return diagonal_less(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
  });

  std::vector<int64_t> shape = size;
  shape.push_back(1);
  Tensor img(shape);
  for (int64_t rank = 0; rank < n; ++rank)
    img.data[static_cast<size_t>(order[static_cast<size_t>(rank)])] = static_cast<double>(rank);
  return img;
}

namespace {

int64_t kernel_center_row(const Tensor& w, int d) {
  // flat spatial index of the center tap
  int64_t idx = 0;
  for (int i = 0; i < d; ++i) idx = idx * w.shape[static_cast<size_t>(i)] + w.shape[static_cast<size_t>(i)] / 2;
  return idx;
}

// kernel layout (spatial..., cin, cout): route `through_in` -> out channel 0
// with a center tap of `value`, everything else zero.
void set_through_conv(Tensor& w, int d, int64_t through_in, double value = 1.0) {
  std::fill(w.data.begin(), w.data.end(), 0.0);
  const int64_t cin = w.shape[static_cast<size_t>(d)];
  const int64_t cout = w.shape[static_cast<size_t>(d + 1)];
  const int64_t row = kernel_center_row(w, d);
  w.data[static_cast<size_t>((row * cin + through_in) * cout + 0)] = value;
}

// upconv kernel (f..., cin, cout): taps[t] on (t, 0, 0), everything else zero.
void set_through_upconv(Tensor& w, int d, const std::vector<double>& taps) {
  std::fill(w.data.begin(), w.data.end(), 0.0);
  const int64_t cin = w.shape[static_cast<size_t>(d)];
  const int64_t cout = w.shape[static_cast<size_t>(d + 1)];
  int64_t spatial = 1;
  for (int i = 0; i < d; ++i) spatial *= w.shape[static_cast<size_t>(i)];
  if (static_cast<int64_t>(taps.size()) != spatial)
    throw std::invalid_argument("set_through_upconv: tap count mismatch");
  for (int64_t t = 0; t < spatial; ++t)
    w.data[static_cast<size_t>((t * cin + 0) * cout + 0)] = taps[static_cast<size_t>(t)];
}

// Through-channel index of the block's first conv: after a concat the
// decoder path sits behind the skip channels.
int64_t dec_through_channel(const UNetSpec& spec, int level) {
  return spec.channels[static_cast<size_t>(level)];
}

void set_identity_convs(UNetInstance& inst, bool skip_first_enc_conv) {
  const UNetSpec& spec = inst.spec;
  for (int j = 0; j < spec.levels; ++j)
    for (int c = 0; c < spec.convs_per_block; ++c) {
      if (skip_first_enc_conv && j == 0 && c == 0) continue;
      set_through_conv(inst.param("enc" + std::to_string(j) + "_conv" + std::to_string(c) + "_w"),
                       spec.d, 0);
    }
  for (int c = 0; c < spec.convs_per_block; ++c)
    set_through_conv(inst.param("bot_conv" + std::to_string(c) + "_w"), spec.d, 0);
  for (int j = spec.levels - 1; j >= 0; --j)
    for (int c = 0; c < spec.convs_per_block; ++c)
      set_through_conv(inst.param("dec" + std::to_string(j) + "_conv" + std::to_string(c) + "_w"),
                       spec.d, c == 0 ? dec_through_channel(spec, j) : 0);
}

int64_t up_taps(const UNetSpec& spec) {
  int64_t t = 1;
  for (int i = 0; i < spec.d; ++i) t *= spec.factor;
  return t;
}

}  // namespace

UNetInstance lemma1_instance(const UNetSpec& spec) {
  spec.validate();
  UNetInstance inst = build_unet(spec, Init::zeros, 0);
  inst.id = "lemma1-d" + std::to_string(spec.d) + "-l" + std::to_string(spec.levels) + "-f" +
            std::to_string(spec.factor);
  set_identity_convs(inst, false);
  if (spec.upsampling == Upsampling::learnt) {
    const std::vector<double> ones(static_cast<size_t>(up_taps(spec)), 1.0);
    for (int j = spec.levels - 1; j >= 0; --j)
      set_through_upconv(inst.param("up" + std::to_string(j) + "_w"), spec.d, ones);
  }
  return inst;
}

std::vector<int64_t> first_primes(int n) {
  std::vector<int64_t> primes;
  for (int64_t v = 2; static_cast<int>(primes.size()) < n; ++v) {
    bool prime = true;
    for (int64_t p : primes) {
      if (p * p > v) break;
      if (v % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(v);
  }
  return primes;
}

std::vector<int64_t> prime_id_level_primes(const UNetSpec& spec, int level) {
  if (level < 0 || level >= spec.levels)
    throw std::invalid_argument("prime_id_level_primes: level out of range");
  const int64_t taps = up_taps(spec);
  const auto primes = first_primes(static_cast<int>(spec.levels * taps));
  // p_1 (the upsampling into the top level, up0) takes the first f^d primes.
  const int64_t begin = static_cast<int64_t>(level) * taps;
  return std::vector<int64_t>(primes.begin() + begin, primes.begin() + begin + taps);
}

UNetInstance prime_id_instance(const UNetSpec& spec) {
  spec.validate();
  if (spec.upsampling != Upsampling::learnt)
    throw std::invalid_argument("prime_id_instance: requires learnt upsampling");
  if (spec.padding != ops::Padding::valid)
    throw std::invalid_argument("prime_id_instance: requires valid padding");

  UNetInstance inst = build_unet(spec, Init::zeros, 0);
  inst.id = "prime-id-d" + std::to_string(spec.d) + "-l" + std::to_string(spec.levels) + "-f" +
            std::to_string(spec.factor);
  set_identity_convs(inst, true);
  // first conv: zero weights, bias 1 -> constant feature map
  Tensor& b0 = inst.param("enc0_conv0_b");
  std::fill(b0.data.begin(), b0.data.end(), 1.0);

  for (int j = 0; j < spec.levels; ++j) {
    const auto level_primes = prime_id_level_primes(spec, j);
    std::vector<double> taps(level_primes.size());
    for (size_t i = 0; i < level_primes.size(); ++i) taps[i] = static_cast<double>(level_primes[i]);
    set_through_upconv(inst.param("up" + std::to_string(j) + "_w"), spec.d, taps);
  }
  return inst;
}

}  // namespace eqnet
