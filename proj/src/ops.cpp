#include "eqnet/ops.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

namespace eqnet::ops {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int64_t spatial_rank(const Tensor& t) {
  require(t.rank() >= 2, "image tensor must have rank >= 2 (spatial..., channels), got rank " +
                             std::to_string(t.rank()));
  return t.rank() - 1;
}

// Accumulate one kernel tap row: out_row[co] += in_row[ci] * k[ci][co].
// The ci->co order is the fixed accumulation order within an output element.
inline void accum_row(double* out_row, const double* in_row, const double* kmat, int64_t cin,
                      int64_t cout) {
  for (int64_t ci = 0; ci < cin; ++ci) {
    const double a = in_row[ci];
    const double* krow = kmat + ci * cout;
    for (int64_t co = 0; co < cout; ++co) out_row[co] += a * krow[co];
  }
}

Tensor conv_valid(const Tensor& in, const Tensor& kernel, const Tensor& bias) {
  const int64_t d = spatial_rank(in);
  const int64_t cin = in.shape[d];
  const int64_t cout = kernel.shape[d + 1];
  const double* bias_p = bias.data.data();

  if (d == 1) {
    const int64_t S = in.shape[0], K = kernel.shape[0], O = S - K + 1;
    Tensor out({O, cout});
    for (int64_t x = 0; x < O; ++x) {
      double* out_row = out.data.data() + x * cout;
      std::memcpy(out_row, bias_p, static_cast<size_t>(cout) * sizeof(double));
      for (int64_t dx = 0; dx < K; ++dx)
        accum_row(out_row, in.data.data() + (x + dx) * cin,
                  kernel.data.data() + dx * cin * cout, cin, cout);
    }
    return out;
  }
  const int64_t S0 = in.shape[0], S1 = in.shape[1];
  const int64_t K0 = kernel.shape[0], K1 = kernel.shape[1];
  const int64_t O0 = S0 - K0 + 1, O1 = S1 - K1 + 1;
  Tensor out({O0, O1, cout});
  for (int64_t x0 = 0; x0 < O0; ++x0) {
    for (int64_t x1 = 0; x1 < O1; ++x1) {
      double* out_row = out.data.data() + (x0 * O1 + x1) * cout;
      std::memcpy(out_row, bias_p, static_cast<size_t>(cout) * sizeof(double));
      for (int64_t dx0 = 0; dx0 < K0; ++dx0) {
        const double* in_base = in.data.data() + ((x0 + dx0) * S1 + x1) * cin;
        const double* k_base = kernel.data.data() + dx0 * K1 * cin * cout;
        for (int64_t dx1 = 0; dx1 < K1; ++dx1)
          accum_row(out_row, in_base + dx1 * cin, k_base + dx1 * cin * cout, cin, cout);
      }
    }
  }
  return out;
}

void check_conv_shapes(const Tensor& in, const Tensor& kernel, const Tensor& bias, Padding padding) {
  const int64_t d = spatial_rank(in);
  require(kernel.rank() == d + 2, "conv: kernel rank " + std::to_string(kernel.rank()) +
                                      " does not match image dimensionality d=" + std::to_string(d) +
                                      " (want d+2)");
  const int64_t cin = in.shape[d];
  require(kernel.shape[d] == cin,
          "conv: input channel count " + std::to_string(cin) + " does not match kernel input channels " +
              std::to_string(kernel.shape[d]));
  const int64_t cout = kernel.shape[d + 1];
  require(bias.rank() == 1 && bias.shape[0] == cout,
          "conv: bias shape " + bias.shape_str() + " does not match kernel output channels " +
              std::to_string(cout));
  for (int64_t i = 0; i < d; ++i) {
    require(kernel.shape[i] % 2 == 1, "conv: kernel spatial dim " + std::to_string(i) + " has even size " +
                                          std::to_string(kernel.shape[i]));
    if (padding == Padding::valid)
      require(in.shape[i] >= kernel.shape[i],
              "conv: spatial dim " + std::to_string(i) + " (size " + std::to_string(in.shape[i]) +
                  ") smaller than kernel (" + std::to_string(kernel.shape[i]) + ") in valid mode");
  }
}

std::vector<int64_t> half_kernel(const Tensor& kernel, int64_t d) {
  std::vector<int64_t> h(d);
  for (int64_t i = 0; i < d; ++i) h[i] = (kernel.shape[i] - 1) / 2;
  return h;
}

}  // namespace

std::vector<int64_t> spatial_shape(const Tensor& t) {
  const int64_t d = spatial_rank(t);
  return std::vector<int64_t>(t.shape.begin(), t.shape.begin() + d);
}

int64_t channels(const Tensor& t) { return t.shape[spatial_rank(t)]; }

Tensor conv(const Tensor& in, const Tensor& kernel, const Tensor& bias, Padding padding) {
  check_conv_shapes(in, kernel, bias, padding);
  if (padding == Padding::valid) return conv_valid(in, kernel, bias);
  const int64_t d = spatial_rank(in);
  const auto h = half_kernel(kernel, d);
  return conv_valid(pad_zero(in, h, h), kernel, bias);
}

ConvGrads conv_backward(const Tensor& in, const Tensor& kernel, const Tensor& d_out, Padding padding) {
  const int64_t d = spatial_rank(in);
  const Tensor* src = &in;
  Tensor padded;
  if (padding == Padding::zero) {
    const auto h = half_kernel(kernel, d);
    padded = pad_zero(in, h, h);
    src = &padded;
  }
  const int64_t cin = src->shape[d];
  const int64_t cout = kernel.shape[d + 1];

  ConvGrads g;
  g.d_in = Tensor(src->shape, 0.0);
  g.d_kernel = Tensor(kernel.shape, 0.0);
  g.d_bias = Tensor({cout}, 0.0);
  double* db = g.d_bias.data.data();

  if (d == 1) {
    const int64_t S = src->shape[0], K = kernel.shape[0], O = S - K + 1;
    for (int64_t x = 0; x < O; ++x) {
      const double* go = d_out.data.data() + x * cout;
      for (int64_t co = 0; co < cout; ++co) db[co] += go[co];
      for (int64_t dx = 0; dx < K; ++dx) {
        const double* in_row = src->data.data() + (x + dx) * cin;
        double* din_row = g.d_in.data.data() + (x + dx) * cin;
        const double* kmat = kernel.data.data() + dx * cin * cout;
        double* dkmat = g.d_kernel.data.data() + dx * cin * cout;
        for (int64_t ci = 0; ci < cin; ++ci) {
          const double a = in_row[ci];
          const double* krow = kmat + ci * cout;
          double* dkrow = dkmat + ci * cout;
          double acc = 0.0;
          for (int64_t co = 0; co < cout; ++co) {
            const double gv = go[co];
            dkrow[co] += a * gv;
            acc += krow[co] * gv;
          }
          din_row[ci] += acc;
        }
      }
    }
  } else {
    const int64_t S0 = src->shape[0], S1 = src->shape[1];
    const int64_t K0 = kernel.shape[0], K1 = kernel.shape[1];
    const int64_t O0 = S0 - K0 + 1, O1 = S1 - K1 + 1;
    for (int64_t x0 = 0; x0 < O0; ++x0) {
      for (int64_t x1 = 0; x1 < O1; ++x1) {
        const double* go = d_out.data.data() + (x0 * O1 + x1) * cout;
        for (int64_t co = 0; co < cout; ++co) db[co] += go[co];
        for (int64_t dx0 = 0; dx0 < K0; ++dx0) {
          for (int64_t dx1 = 0; dx1 < K1; ++dx1) {
            const int64_t in_row_idx = (x0 + dx0) * S1 + (x1 + dx1);
            const double* in_row = src->data.data() + in_row_idx * cin;
            double* din_row = g.d_in.data.data() + in_row_idx * cin;
            const int64_t k_off = (dx0 * K1 + dx1) * cin * cout;
            const double* kmat = kernel.data.data() + k_off;
            double* dkmat = g.d_kernel.data.data() + k_off;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const double a = in_row[ci];
              const double* krow = kmat + ci * cout;
              double* dkrow = dkmat + ci * cout;
              double acc = 0.0;
              for (int64_t co = 0; co < cout; ++co) {
                const double gv = go[co];
                dkrow[co] += a * gv;
                acc += krow[co] * gv;
              }
              din_row[ci] += acc;
            }
          }
        }
      }
    }
  }

  if (padding == Padding::zero) {
    const auto h = half_kernel(kernel, d);
    g.d_in = pad_zero_backward(h, spatial_shape(in), g.d_in);
  }
  return g;
}

Tensor relu(const Tensor& in) {
  Tensor out(in.shape);
  for (size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& in, const Tensor& d_out) {
  Tensor g(in.shape, 0.0);
  for (size_t i = 0; i < in.data.size(); ++i) g.data[i] = in.data[i] > 0.0 ? d_out.data[i] : 0.0;
  return g;
}

PoolResult maxpool(const Tensor& in, int64_t f) {
  const int64_t d = spatial_rank(in);
  const int64_t c = in.shape[d];
  for (int64_t i = 0; i < d; ++i)
    require(in.shape[i] % f == 0, "maxpool: spatial dim " + std::to_string(i) + " size " +
                                      std::to_string(in.shape[i]) + " not divisible by factor " +
                                      std::to_string(f) + "; pad or crop by " +
                                      std::to_string(f - in.shape[i] % f));
  PoolResult r;
  if (d == 1) {
    const int64_t S = in.shape[0], O = S / f;
    r.out = Tensor({O, c});
    r.argmax.assign(static_cast<size_t>(O * c), 0);
    for (int64_t x = 0; x < O; ++x) {
      for (int64_t ch = 0; ch < c; ++ch) {
        int64_t best = (x * f) * c + ch;
        double bv = in.data[best];
        for (int64_t i = 1; i < f; ++i) {
          const int64_t idx = (x * f + i) * c + ch;
          if (in.data[idx] > bv) {
            bv = in.data[idx];
            best = idx;
          }
        }
        r.out.data[x * c + ch] = bv;
        r.argmax[static_cast<size_t>(x * c + ch)] = best;
      }
    }
  } else {
    const int64_t S0 = in.shape[0], S1 = in.shape[1], O0 = S0 / f, O1 = S1 / f;
    r.out = Tensor({O0, O1, c});
    r.argmax.assign(static_cast<size_t>(O0 * O1 * c), 0);
    for (int64_t x0 = 0; x0 < O0; ++x0) {
      for (int64_t x1 = 0; x1 < O1; ++x1) {
        for (int64_t ch = 0; ch < c; ++ch) {
          int64_t best = ((x0 * f) * S1 + x1 * f) * c + ch;
          double bv = in.data[best];
          for (int64_t i0 = 0; i0 < f; ++i0) {
            for (int64_t i1 = 0; i1 < f; ++i1) {
              const int64_t idx = ((x0 * f + i0) * S1 + (x1 * f + i1)) * c + ch;
              if (in.data[idx] > bv) {
                bv = in.data[idx];
                best = idx;
              }
            }
          }
          const int64_t o = (x0 * O1 + x1) * c + ch;
          r.out.data[o] = bv;
          r.argmax[static_cast<size_t>(o)] = best;
        }
      }
    }
  }
  return r;
}

Tensor maxpool_backward(const std::vector<int64_t>& in_shape, const std::vector<int64_t>& argmax,
                        const Tensor& d_out) {
  Tensor g(in_shape, 0.0);
  require(argmax.size() == d_out.data.size(), "maxpool_backward: context does not match output");
  for (size_t i = 0; i < argmax.size(); ++i) g.data[static_cast<size_t>(argmax[i])] += d_out.data[i];
  return g;
}

Tensor upsample_nn(const Tensor& in, int64_t f) {
  const int64_t d = spatial_rank(in);
  const int64_t c = in.shape[d];
  if (d == 1) {
    const int64_t S = in.shape[0];
    Tensor out({S * f, c});
    for (int64_t x = 0; x < S * f; ++x)
      std::memcpy(out.data.data() + x * c, in.data.data() + (x / f) * c,
                  static_cast<size_t>(c) * sizeof(double));
    return out;
  }
  const int64_t S0 = in.shape[0], S1 = in.shape[1];
  Tensor out({S0 * f, S1 * f, c});
  for (int64_t x0 = 0; x0 < S0 * f; ++x0)
    for (int64_t x1 = 0; x1 < S1 * f; ++x1)
      std::memcpy(out.data.data() + (x0 * S1 * f + x1) * c,
                  in.data.data() + ((x0 / f) * S1 + x1 / f) * c,
                  static_cast<size_t>(c) * sizeof(double));
  return out;
}

Tensor upsample_nn_backward(const std::vector<int64_t>& in_shape, const Tensor& d_out, int64_t f) {
  Tensor g(in_shape, 0.0);
  const int64_t d = static_cast<int64_t>(in_shape.size()) - 1;
  const int64_t c = in_shape[d];
  if (d == 1) {
    const int64_t Sf = d_out.shape[0];
    for (int64_t x = 0; x < Sf; ++x)
      for (int64_t ch = 0; ch < c; ++ch) g.data[(x / f) * c + ch] += d_out.data[x * c + ch];
  } else {
    const int64_t S1 = in_shape[1];
    const int64_t O0 = d_out.shape[0], O1 = d_out.shape[1];
    for (int64_t x0 = 0; x0 < O0; ++x0)
      for (int64_t x1 = 0; x1 < O1; ++x1)
        for (int64_t ch = 0; ch < c; ++ch)
          g.data[((x0 / f) * S1 + x1 / f) * c + ch] += d_out.data[(x0 * O1 + x1) * c + ch];
  }
  return g;
}

Tensor upconv(const Tensor& in, const Tensor& kernel, int64_t f) {
  const int64_t d = spatial_rank(in);
  require(kernel.rank() == d + 2, "upconv: kernel rank " + std::to_string(kernel.rank()) +
                                      " does not match image dimensionality d=" + std::to_string(d));
  for (int64_t i = 0; i < d; ++i)
    require(kernel.shape[i] == f, "upconv: kernel spatial dim " + std::to_string(i) + " size " +
                                      std::to_string(kernel.shape[i]) + " must equal factor " +
                                      std::to_string(f));
  const int64_t cin = in.shape[d];
  require(kernel.shape[d] == cin, "upconv: input channels " + std::to_string(cin) +
                                      " do not match kernel input channels " +
                                      std::to_string(kernel.shape[d]));
  const int64_t cout = kernel.shape[d + 1];

  if (d == 1) {
    const int64_t S = in.shape[0];
    Tensor out({S * f, cout}, 0.0);
    for (int64_t m = 0; m < S; ++m) {
      const double* in_row = in.data.data() + m * cin;
      for (int64_t dx = 0; dx < f; ++dx)
        accum_row(out.data.data() + (m * f + dx) * cout, in_row,
                  kernel.data.data() + dx * cin * cout, cin, cout);
    }
    return out;
  }
  const int64_t S0 = in.shape[0], S1 = in.shape[1];
  Tensor out({S0 * f, S1 * f, cout}, 0.0);
  for (int64_t m0 = 0; m0 < S0; ++m0) {
    for (int64_t m1 = 0; m1 < S1; ++m1) {
      const double* in_row = in.data.data() + (m0 * S1 + m1) * cin;
      for (int64_t dx0 = 0; dx0 < f; ++dx0)
        for (int64_t dx1 = 0; dx1 < f; ++dx1)
          accum_row(out.data.data() + ((m0 * f + dx0) * S1 * f + m1 * f + dx1) * cout, in_row,
                    kernel.data.data() + (dx0 * f + dx1) * cin * cout, cin, cout);
    }
  }
  return out;
}

UpconvGrads upconv_backward(const Tensor& in, const Tensor& kernel, const Tensor& d_out, int64_t f) {
  const int64_t d = spatial_rank(in);
  const int64_t cin = in.shape[d];
  const int64_t cout = kernel.shape[d + 1];
  UpconvGrads g;
  g.d_in = Tensor(in.shape, 0.0);
  g.d_kernel = Tensor(kernel.shape, 0.0);

  auto accumulate = [&](const double* in_row, double* din_row, int64_t kflat, const double* go) {
    const double* kmat = kernel.data.data() + kflat * cin * cout;
    double* dkmat = g.d_kernel.data.data() + kflat * cin * cout;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double a = in_row[ci];
      const double* krow = kmat + ci * cout;
      double* dkrow = dkmat + ci * cout;
      double acc = 0.0;
      for (int64_t co = 0; co < cout; ++co) {
        const double gv = go[co];
        dkrow[co] += a * gv;
        acc += krow[co] * gv;
      }
      din_row[ci] += acc;
    }
  };

  if (d == 1) {
    const int64_t S = in.shape[0];
    for (int64_t m = 0; m < S; ++m)
      for (int64_t dx = 0; dx < f; ++dx)
        accumulate(in.data.data() + m * cin, g.d_in.data.data() + m * cin, dx,
                   d_out.data.data() + (m * f + dx) * cout);
  } else {
    const int64_t S0 = in.shape[0], S1 = in.shape[1];
    for (int64_t m0 = 0; m0 < S0; ++m0)
      for (int64_t m1 = 0; m1 < S1; ++m1)
        for (int64_t dx0 = 0; dx0 < f; ++dx0)
          for (int64_t dx1 = 0; dx1 < f; ++dx1)
            accumulate(in.data.data() + (m0 * S1 + m1) * cin,
                       g.d_in.data.data() + (m0 * S1 + m1) * cin, dx0 * f + dx1,
                       d_out.data.data() + ((m0 * f + dx0) * S1 * f + m1 * f + dx1) * cout);
  }
  return g;
}

Tensor crop(const Tensor& in, const std::vector<int64_t>& offset, const std::vector<int64_t>& size) {
  const int64_t d = spatial_rank(in);
  require(static_cast<int64_t>(offset.size()) == d && static_cast<int64_t>(size.size()) == d,
          "crop: offset/size dimensionality mismatch");
  const int64_t c = in.shape[d];
  for (int64_t i = 0; i < d; ++i)
    require(offset[i] >= 0 && offset[i] + size[i] <= in.shape[i],
            "crop: window [" + std::to_string(offset[i]) + "," + std::to_string(offset[i] + size[i]) +
                ") outside dim " + std::to_string(i) + " of size " + std::to_string(in.shape[i]));
  if (d == 1) {
    Tensor out({size[0], c});
    std::memcpy(out.data.data(), in.data.data() + offset[0] * c,
                static_cast<size_t>(size[0] * c) * sizeof(double));
    return out;
  }
  const int64_t S1 = in.shape[1];
  Tensor out({size[0], size[1], c});
  for (int64_t x0 = 0; x0 < size[0]; ++x0)
    std::memcpy(out.data.data() + x0 * size[1] * c,
                in.data.data() + ((offset[0] + x0) * S1 + offset[1]) * c,
                static_cast<size_t>(size[1] * c) * sizeof(double));
  return out;
}

Tensor crop_backward(const std::vector<int64_t>& in_shape, const std::vector<int64_t>& offset,
                     const Tensor& d_out) {
  Tensor g(in_shape, 0.0);
  const int64_t d = static_cast<int64_t>(in_shape.size()) - 1;
  const int64_t c = in_shape[d];
  if (d == 1) {
    std::memcpy(g.data.data() + offset[0] * c, d_out.data.data(),
                static_cast<size_t>(d_out.shape[0] * c) * sizeof(double));
  } else {
    const int64_t S1 = in_shape[1];
    for (int64_t x0 = 0; x0 < d_out.shape[0]; ++x0)
      std::memcpy(g.data.data() + ((offset[0] + x0) * S1 + offset[1]) * c,
                  d_out.data.data() + x0 * d_out.shape[1] * c,
                  static_cast<size_t>(d_out.shape[1] * c) * sizeof(double));
  }
  return g;
}

Tensor pad_zero(const Tensor& in, const std::vector<int64_t>& lo, const std::vector<int64_t>& hi) {
  const int64_t d = spatial_rank(in);
  require(static_cast<int64_t>(lo.size()) == d && static_cast<int64_t>(hi.size()) == d,
          "pad_zero: lo/hi dimensionality mismatch");
  const int64_t c = in.shape[d];
  if (d == 1) {
    Tensor out({in.shape[0] + lo[0] + hi[0], c}, 0.0);
    std::memcpy(out.data.data() + lo[0] * c, in.data.data(),
                static_cast<size_t>(in.shape[0] * c) * sizeof(double));
    return out;
  }
  const int64_t S0 = in.shape[0], S1 = in.shape[1];
  Tensor out({S0 + lo[0] + hi[0], S1 + lo[1] + hi[1], c}, 0.0);
  const int64_t P1 = out.shape[1];
  for (int64_t x0 = 0; x0 < S0; ++x0)
    std::memcpy(out.data.data() + ((lo[0] + x0) * P1 + lo[1]) * c, in.data.data() + x0 * S1 * c,
                static_cast<size_t>(S1 * c) * sizeof(double));
  return out;
}

Tensor pad_zero_backward(const std::vector<int64_t>& lo, const std::vector<int64_t>& in_spatial,
                         const Tensor& d_out) {
  return crop(d_out, lo, in_spatial);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int64_t d = spatial_rank(a);
  require(spatial_rank(b) == d && spatial_shape(a) == spatial_shape(b),
          "concat: spatial shapes differ, " + a.shape_str() + " vs " + b.shape_str());
  const int64_t ca = a.shape[d], cb = b.shape[d];
  std::vector<int64_t> out_shape = a.shape;
  out_shape[d] = ca + cb;
  Tensor out(out_shape);
  const int64_t rows = a.numel() / ca;
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(out.data.data() + r * (ca + cb), a.data.data() + r * ca,
                static_cast<size_t>(ca) * sizeof(double));
    std::memcpy(out.data.data() + r * (ca + cb) + ca, b.data.data() + r * cb,
                static_cast<size_t>(cb) * sizeof(double));
  }
  return out;
}

std::vector<int64_t> central_crop_offset(const std::vector<int64_t>& from_spatial,
                                         const std::vector<int64_t>& to_spatial) {
  std::vector<int64_t> off(from_spatial.size());
  for (size_t i = 0; i < from_spatial.size(); ++i) {
    const int64_t diff = from_spatial[i] - to_spatial[i];
    require(diff >= 0, "concat_crop: skip dim " + std::to_string(i) + " (size " +
                           std::to_string(from_spatial[i]) + ") smaller than up (size " +
                           std::to_string(to_spatial[i]) + ")");
    require(diff % 2 == 0, "concat_crop: size difference " + std::to_string(diff) + " in dim " +
                               std::to_string(i) + " is odd; central alignment undefined");
    off[i] = diff / 2;
  }
  return off;
}

Tensor concat_crop(const Tensor& skip, const Tensor& up) {
  const auto off = central_crop_offset(spatial_shape(skip), spatial_shape(up));
  return concat_channels(crop(skip, off, spatial_shape(up)), up);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * s;
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  return s;
}

}  // namespace eqnet::ops
