#include "eqnet/equivariance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "eqnet/constructions.hpp"
#include "eqnet/ops.hpp"
#include "eqnet/rng.hpp"

namespace eqnet {

Tensor shift_crop(const CanvasProbe& probe, const ShiftVector& delta) {
  const size_t d = probe.base_offset.size();
  if (delta.size() != d) throw std::invalid_argument("shift_crop: delta dimensionality mismatch");
  std::vector<int64_t> off(d);
  for (size_t i = 0; i < d; ++i) {
    off[i] = probe.base_offset[i] - delta[i];
    if (off[i] < 0 || off[i] + probe.input_size[i] > probe.canvas.shape[i])
      throw std::invalid_argument("shift_crop: window at offset " + std::to_string(off[i]) +
                                  " (dim " + std::to_string(i) + ") outside canvas of size " +
                                  std::to_string(probe.canvas.shape[i]));
  }
  return ops::crop(probe.canvas, off, probe.input_size);
}

CanvasProbe make_probe(const UNetSpec& spec, const std::string& kind, int64_t min_output,
                       int64_t max_shift, uint64_t seed) {
  ShapePlan plan = plan_geometry(spec, std::vector<int64_t>(static_cast<size_t>(spec.d), min_output));
  CanvasProbe p;
  p.kind = kind;
  p.seed = seed;
  p.input_size = plan.input_size;
  p.base_offset.assign(static_cast<size_t>(spec.d), max_shift);
  std::vector<int64_t> canvas_size(static_cast<size_t>(spec.d));
  for (int i = 0; i < spec.d; ++i) canvas_size[static_cast<size_t>(i)] = plan.input_size[static_cast<size_t>(i)] + 2 * max_shift;

  if (kind == "diagonal") {
    Tensor ranks = diagonal_image(spec.d, canvas_size);
    if (spec.in_channels == 1) {
      p.canvas = std::move(ranks);
    } else {
      std::vector<int64_t> shape = canvas_size;
      shape.push_back(spec.in_channels);
      p.canvas = Tensor(shape);
      const int64_t rows = ranks.numel();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < spec.in_channels; ++c)
          p.canvas.data[static_cast<size_t>(r * spec.in_channels + c)] = ranks.data[static_cast<size_t>(r)];
    }
  } else if (kind == "noise") {
    std::vector<int64_t> shape = canvas_size;
    shape.push_back(spec.in_channels);
    p.canvas = Tensor(shape);
    Rng rng(seed);
    for (auto& v : p.canvas.data) v = rng.uniform01();
  } else if (kind == "constant") {
    std::vector<int64_t> shape = canvas_size;
    shape.push_back(spec.in_channels);
    p.canvas = Tensor(shape, 1.0);
  } else {
    throw std::invalid_argument("make_probe: unknown kind " + kind);
  }
  return p;
}

std::vector<CanvasProbe> default_probe_battery(const UNetSpec& spec, int64_t min_output,
                                               int64_t max_shift, uint64_t seed) {
  std::vector<CanvasProbe> probes;
  probes.push_back(make_probe(spec, "diagonal", min_output, max_shift, 0));
  for (uint64_t i = 0; i < 3; ++i)
    probes.push_back(make_probe(spec, "noise", min_output, max_shift, seed + i));
  probes.push_back(make_probe(spec, "constant", min_output, max_shift, 0));
  return probes;
}

ShiftCompare compare_shifted(const Tensor& a, const Tensor& b, const ShiftVector& delta) {
  if (a.shape != b.shape) throw std::invalid_argument("compare_shifted: shape mismatch");
  const int64_t d = a.rank() - 1;
  if (static_cast<int64_t>(delta.size()) != d)
    throw std::invalid_argument("compare_shifted: delta dimensionality mismatch");
  const int64_t c = a.shape[static_cast<size_t>(d)];

  // overlap in b coordinates: x such that x and x-delta are both valid
  std::vector<int64_t> lo(static_cast<size_t>(d)), hi(static_cast<size_t>(d));
  for (int64_t i = 0; i < d; ++i) {
    lo[static_cast<size_t>(i)] = std::max<int64_t>(0, delta[static_cast<size_t>(i)]);
    hi[static_cast<size_t>(i)] = std::min(a.shape[static_cast<size_t>(i)],
                                          a.shape[static_cast<size_t>(i)] + delta[static_cast<size_t>(i)]);
  }
  ShiftCompare r;
  r.equal = true;
  for (int64_t i = 0; i < d; ++i)
    if (lo[static_cast<size_t>(i)] >= hi[static_cast<size_t>(i)])
      throw std::invalid_argument("compare_shifted: empty overlap for shift " +
                                  std::to_string(delta[static_cast<size_t>(i)]) + " in dim " +
                                  std::to_string(i));

  if (d == 1) {
    for (int64_t x = lo[0]; x < hi[0]; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        const double diff = std::fabs(b.data[static_cast<size_t>(x * c + ch)] -
                                      a.data[static_cast<size_t>((x - delta[0]) * c + ch)]);
        r.max_abs_diff = std::max(r.max_abs_diff, diff);
        ++r.compared;
      }
  } else {
    const int64_t W = a.shape[1];
    for (int64_t x0 = lo[0]; x0 < hi[0]; ++x0)
      for (int64_t x1 = lo[1]; x1 < hi[1]; ++x1)
        for (int64_t ch = 0; ch < c; ++ch) {
          const double diff =
              std::fabs(b.data[static_cast<size_t>((x0 * W + x1) * c + ch)] -
                        a.data[static_cast<size_t>(((x0 - delta[0]) * W + (x1 - delta[1])) * c + ch)]);
          r.max_abs_diff = std::max(r.max_abs_diff, diff);
          ++r.compared;
        }
  }
  r.equal = r.max_abs_diff == 0.0;
  return r;
}

namespace {

std::vector<ShiftVector> expand_shifts(int d, int64_t t, const std::vector<int64_t>& multiples) {
  // all nonzero per-dim combinations with components in {0} U {m*t : m}
  std::vector<ShiftVector> out;
  for (int64_t m : multiples) {
    const int64_t step = m * t;
    if (d == 1) {
      out.push_back({step});
    } else {
      out.push_back({step, 0});
      out.push_back({0, step});
      out.push_back({step, step});
    }
  }
  return out;
}

}  // namespace

EquivarianceReport check_periodic_equivariance(const UNetInstance& inst, const CanvasProbe& probe,
                                               int64_t t, const std::vector<int64_t>& multiples) {
  EquivarianceReport report;
  report.instance_id = inst.id;
  report.t = t;
  report.probe_kind = probe.kind;
  report.probe_seed = probe.seed;

  const Tensor base = forward(inst, shift_crop(probe, ShiftVector(probe.base_offset.size(), 0)));
  for (const ShiftVector& delta : expand_shifts(inst.spec.d, t, multiples)) {
    const Tensor shifted = forward(inst, shift_crop(probe, delta));
    ShiftCompare cmp = compare_shifted(base, shifted, delta);
    report.shifts.push_back({delta, cmp.equal, cmp.max_abs_diff, cmp.compared});
    report.all_equal &= cmp.equal;
  }
  return report;
}

int64_t minimal_period_estimate(const UNetInstance& inst, const std::vector<CanvasProbe>& probes) {
  const int64_t fl = inst.spec.grid_period();
  for (int64_t t = 1; t <= fl; ++t) {
    if (fl % t != 0) continue;
    bool ok = true;
    std::vector<int64_t> multiples;
    for (int64_t m = 1; m * t <= fl; ++m) multiples.push_back(m);
    for (const auto& probe : probes) {
      if (!check_periodic_equivariance(inst, probe, t, multiples).all_equal) {
        ok = false;
        break;
      }
    }
    if (ok) return t;
  }
  return fl;  // guaranteed by the f^l equivariance of the family
}

DistinctnessResult count_relative_distinct(const UNetInstance& inst,
                                           const std::vector<CanvasProbe>& probes) {
  const UNetSpec& spec = inst.spec;
  const int64_t fl = spec.grid_period();
  int64_t phases = 1;
  for (int i = 0; i < spec.d; ++i) phases *= fl;

  DistinctnessResult res;
  res.fl = fl;
  res.d = spec.d;
  res.phase_class.assign(static_cast<size_t>(phases), -1);

  // signature of phase offset: output values at index (x_ref + offset) of
  // the forward pass on the content shifted by +offset, gathered over all
  // probes (x_ref = 0)
  std::vector<std::vector<double>> signatures(static_cast<size_t>(phases));
  for (const auto& probe : probes) {
    for (int64_t ph = 0; ph < phases; ++ph) {
      ShiftVector delta(static_cast<size_t>(spec.d));
      int64_t rem = ph;
      for (int i = spec.d - 1; i >= 0; --i) {
        delta[static_cast<size_t>(i)] = rem % fl;
        rem /= fl;
      }
      Tensor out = forward(inst, shift_crop(probe, delta));
      for (int i = 0; i < spec.d; ++i)
        if (delta[static_cast<size_t>(i)] >= out.shape[static_cast<size_t>(i)])
          throw std::invalid_argument("count_relative_distinct: probe output window smaller than f^l");
      int64_t flat = 0;
      for (int i = 0; i < spec.d; ++i)
        flat = flat * out.shape[static_cast<size_t>(i)] + delta[static_cast<size_t>(i)];
      for (int64_t c = 0; c < spec.out_channels; ++c)
        signatures[static_cast<size_t>(ph)].push_back(
            out.data[static_cast<size_t>(flat * spec.out_channels + c)]);
    }
  }

  std::map<std::vector<double>, int64_t> classes;
  for (int64_t ph = 0; ph < phases; ++ph) {
    auto [it, inserted] = classes.emplace(signatures[static_cast<size_t>(ph)],
                                          static_cast<int64_t>(classes.size()));
    res.phase_class[static_cast<size_t>(ph)] = it->second;
  }
  res.count = static_cast<int64_t>(classes.size());
  return res;
}

Tensor pool_window_max(const Tensor& g, int64_t f) {
  const int64_t d = g.rank() - 1;
  const int64_t c = g.shape[static_cast<size_t>(d)];
  if (d == 1) {
    const int64_t S = g.shape[0], O = S - f + 1;
    if (O < 1) throw std::invalid_argument("pool_window_max: input smaller than window");
    Tensor out({O, c});
    for (int64_t x = 0; x < O; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        double m = g.data[static_cast<size_t>(x * c + ch)];
        for (int64_t i = 1; i < f; ++i)
          m = std::max(m, g.data[static_cast<size_t>((x + i) * c + ch)]);
        out.data[static_cast<size_t>(x * c + ch)] = m;
      }
    return out;
  }
  const int64_t S0 = g.shape[0], S1 = g.shape[1];
  const int64_t O0 = S0 - f + 1, O1 = S1 - f + 1;
  if (O0 < 1 || O1 < 1) throw std::invalid_argument("pool_window_max: input smaller than window");
  Tensor out({O0, O1, c});
  for (int64_t x0 = 0; x0 < O0; ++x0)
    for (int64_t x1 = 0; x1 < O1; ++x1)
      for (int64_t ch = 0; ch < c; ++ch) {
        double m = g.data[static_cast<size_t>((x0 * S1 + x1) * c + ch)];
        for (int64_t i0 = 0; i0 < f; ++i0)
          for (int64_t i1 = 0; i1 < f; ++i1)
            m = std::max(m, g.data[static_cast<size_t>(((x0 + i0) * S1 + x1 + i1) * c + ch)]);
        out.data[static_cast<size_t>((x0 * O1 + x1) * c + ch)] = m;
      }
  return out;
}

Tensor subsample(const Tensor& g, int64_t f) {
  const int64_t d = g.rank() - 1;
  const int64_t c = g.shape[static_cast<size_t>(d)];
  if (d == 1) {
    const int64_t O = (g.shape[0] - 1) / f + 1;
    Tensor out({O, c});
    for (int64_t x = 0; x < O; ++x)
      for (int64_t ch = 0; ch < c; ++ch)
        out.data[static_cast<size_t>(x * c + ch)] = g.data[static_cast<size_t>(x * f * c + ch)];
    return out;
  }
  const int64_t S1 = g.shape[1];
  const int64_t O0 = (g.shape[0] - 1) / f + 1, O1 = (S1 - 1) / f + 1;
  Tensor out({O0, O1, c});
  for (int64_t x0 = 0; x0 < O0; ++x0)
    for (int64_t x1 = 0; x1 < O1; ++x1)
      for (int64_t ch = 0; ch < c; ++ch)
        out.data[static_cast<size_t>((x0 * O1 + x1) * c + ch)] =
            g.data[static_cast<size_t>((x0 * f * S1 + x1 * f) * c + ch)];
  return out;
}

namespace {

struct SuiteContext {
  Rng rng;
  explicit SuiteContext(uint64_t seed) : rng(seed) {}

  Tensor random_canvas(int d, int64_t edge, int64_t c) {
    std::vector<int64_t> shape(static_cast<size_t>(d), edge);
    shape.push_back(c);
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
  }

  Tensor random_kernel(int d, int64_t k, int64_t cin, int64_t cout) {
    std::vector<int64_t> shape(static_cast<size_t>(d), k);
    shape.push_back(cin);
    shape.push_back(cout);
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
  }
};

Tensor window(const Tensor& canvas, int d, int64_t off, int64_t size) {
  return ops::crop(canvas, std::vector<int64_t>(static_cast<size_t>(d), off),
                   std::vector<int64_t>(static_cast<size_t>(d), size));
}

ShiftVector vec(int d, int64_t v) { return ShiftVector(static_cast<size_t>(d), v); }

}  // namespace

OperatorSuiteReport operator_equivariance_suite(uint64_t seed, int trials) {
  OperatorSuiteReport report;
  SuiteContext ctx(seed);

  auto run_check = [&](const std::string& name, const std::function<bool(int)>& one_trial) {
    OperatorCheck check{name, trials, 0};
    for (int i = 0; i < trials; ++i)
      if (!one_trial(i)) ++check.failures;
    report.checks.push_back(check);
    report.all_pass &= check.failures == 0;
  };

  // conv: equivariant to any shift t
  run_check("conv", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t t = 1 + ctx.rng.below(3);
    const int64_t cin = 1 + ctx.rng.below(2);
    const int64_t k = 1 + 2 * ctx.rng.below(2);
    Tensor canvas = ctx.random_canvas(d, 16, cin);
    Tensor kernel = ctx.random_kernel(d, k, cin, 2);
    Tensor bias({2}, 0.1);
    Tensor a = ops::conv(window(canvas, d, 4, 10), kernel, bias, ops::Padding::valid);
    Tensor b = ops::conv(window(canvas, d, 4 - t, 10), kernel, bias, ops::Padding::valid);
    return compare_shifted(a, b, vec(d, t)).equal;
  });

  // relu: equivariant to any shift t
  run_check("relu", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t t = 1 + ctx.rng.below(3);
    Tensor canvas = ctx.random_canvas(d, 16, 2);
    Tensor a = ops::relu(window(canvas, d, 4, 10));
    Tensor b = ops::relu(window(canvas, d, 4 - t, 10));
    return compare_shifted(a, b, vec(d, t)).equal;
  });

  // window max: equivariant to any shift t
  run_check("window_max", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t f = 2 + ctx.rng.below(2);
    const int64_t t = 1 + ctx.rng.below(3);
    Tensor canvas = ctx.random_canvas(d, 18, 1);
    Tensor a = pool_window_max(window(canvas, d, 4, 10), f);
    Tensor b = pool_window_max(window(canvas, d, 4 - t, 10), f);
    return compare_shifted(a, b, vec(d, t)).equal;
  });

  // subsampling: input shifts f*t at proportional output shifts t
  run_check("subsample", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t f = 2 + ctx.rng.below(2);
    const int64_t t = 1 + ctx.rng.below(2);
    Tensor canvas = ctx.random_canvas(d, 28, 1);
    Tensor a = subsample(window(canvas, d, 8, 13), f);
    Tensor b = subsample(window(canvas, d, 8 - f * t, 13), f);
    return compare_shifted(a, b, vec(d, t)).equal;
  });

  // up-convolution: input shifts t at output shifts f*t
  run_check("upconv", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t f = 2 + ctx.rng.below(2);
    const int64_t t = 1 + ctx.rng.below(2);
    Tensor canvas = ctx.random_canvas(d, 14, 1);
    Tensor kernel = ctx.random_kernel(d, f, 1, 2);
    Tensor a = ops::upconv(window(canvas, d, 4, 8), kernel, f);
    Tensor b = ops::upconv(window(canvas, d, 4 - t, 8), kernel, f);
    return compare_shifted(a, b, vec(d, f * t)).equal;
  });

  // concatenation with a fixed central alignment is shift equivariant
  run_check("concat", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t t = 1 + ctx.rng.below(3);
    const int64_t align = 2;  // fixed alignment offset between the two maps
    Tensor g = ctx.random_canvas(d, 20, 1);
    Tensor q = ctx.random_canvas(d, 20, 2);
    Tensor a = ops::concat_channels(window(g, d, 6 + align, 8), window(q, d, 6, 8));
    Tensor b = ops::concat_channels(window(g, d, 6 + align - t, 8), window(q, d, 6 - t, 8));
    return compare_shifted(a, b, vec(d, t)).equal;
  });

  // conv+relu+pool encoder path over two levels: input shifts f^2*t at
  // output shifts t
  run_check("encoder_path", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t f = 2;
    const int64_t t = 1 + ctx.rng.below(2);
    Tensor canvas = ctx.random_canvas(d, 40, 1);
    Tensor k1 = ctx.random_kernel(d, 3, 1, 2);
    Tensor k2 = ctx.random_kernel(d, 3, 2, 2);
    Tensor b1({2}, 0.05), b2({2}, -0.05);
    auto path = [&](const Tensor& in) {
      Tensor e1 = ops::relu(ops::conv(in, k1, b1, ops::Padding::valid));
      Tensor p1 = ops::maxpool(e1, f).out;
      Tensor e2 = ops::relu(ops::conv(p1, k2, b2, ops::Padding::valid));
      return ops::maxpool(e2, f).out;
    };
    // input size 22: conv->20, pool->10, conv->8, pool->4
    Tensor a = path(window(canvas, d, 9, 22));
    Tensor b = path(window(canvas, d, 9 - f * f * t, 22));
    return compare_shifted(a, b, vec(d, t)).equal;
  });

  // bottleneck composition (encoder block + decoder block + upsampling):
  // equivariant to shifts f*t at output shifts f*t
  run_check("bottleneck", [&](int trial) {
    const int d = 1 + trial % 2;
    const int64_t f = 2;
    const int64_t t = 1;
    const bool learnt = trial % 2 == 0;
    Tensor canvas = ctx.random_canvas(d, 30, 1);
    Tensor ke = ctx.random_kernel(d, 3, 1, 2);
    Tensor kd = ctx.random_kernel(d, 3, 2, 2);
    Tensor ku = ctx.random_kernel(d, f, 2, 1);
    Tensor be({2}, 0.1), bd({2}, 0.0);
    auto u = [&](const Tensor& in) {
      Tensor e = ops::relu(ops::conv(in, ke, be, ops::Padding::valid));
      Tensor p = ops::maxpool(e, f).out;
      Tensor dec = ops::relu(ops::conv(p, kd, bd, ops::Padding::valid));
      return learnt ? ops::upconv(dec, ku, f) : ops::upsample_nn(dec, f);
    };
    // input 18: conv->16, pool->8, conv->6, up->12
    Tensor a = u(window(canvas, d, 6, 18));
    Tensor b = u(window(canvas, d, 6 - f * t, 18));
    return compare_shifted(a, b, vec(d, f * t)).equal;
  });

  return report;
}

}  // namespace eqnet
