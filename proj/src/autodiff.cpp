#include "eqnet/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "eqnet/rng.hpp"

namespace eqnet {

Tape::Id Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  has_grads_ = false;
  return static_cast<Id>(nodes_.size() - 1);
}

const Tape::Node& Tape::at(Id id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
    throw std::invalid_argument("tape: invalid node id " + std::to_string(id));
  return nodes_[static_cast<size_t>(id)];
}

Tape::Id Tape::input(Tensor value, std::string name) {
  Node n;
  n.kind = OpKind::input;
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

Tape::Id Tape::param(Tensor value, std::string name) {
  Node n;
  n.kind = OpKind::param;
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

Tape::Id Tape::conv(Id in, Id kernel, Id bias, ops::Padding padding) {
  Node n;
  n.kind = OpKind::conv;
  n.inputs = {in, kernel, bias};
  n.padding = padding;
  n.value = ops::conv(at(in).value, at(kernel).value, at(bias).value, padding);
  return push(std::move(n));
}

Tape::Id Tape::relu(Id in) {
  Node n;
  n.kind = OpKind::relu;
  n.inputs = {in};
  n.value = ops::relu(at(in).value);
  return push(std::move(n));
}

Tape::Id Tape::maxpool(Id in, int64_t f) {
  Node n;
  n.kind = OpKind::maxpool;
  n.inputs = {in};
  n.factor = f;
  auto r = ops::maxpool(at(in).value, f);
  n.value = std::move(r.out);
  n.argmax = std::move(r.argmax);
  return push(std::move(n));
}

Tape::Id Tape::upsample_nn(Id in, int64_t f) {
  Node n;
  n.kind = OpKind::upsample_nn;
  n.inputs = {in};
  n.factor = f;
  n.value = ops::upsample_nn(at(in).value, f);
  return push(std::move(n));
}

Tape::Id Tape::upconv(Id in, Id kernel, int64_t f) {
  Node n;
  n.kind = OpKind::upconv;
  n.inputs = {in, kernel};
  n.factor = f;
  n.value = ops::upconv(at(in).value, at(kernel).value, f);
  return push(std::move(n));
}

Tape::Id Tape::crop(Id in, std::vector<int64_t> offset, std::vector<int64_t> size) {
  Node n;
  n.kind = OpKind::crop;
  n.inputs = {in};
  n.offset = std::move(offset);
  n.aux = std::move(size);
  n.value = ops::crop(at(in).value, n.offset, n.aux);
  return push(std::move(n));
}

Tape::Id Tape::pad_zero(Id in, std::vector<int64_t> lo, std::vector<int64_t> hi) {
  Node n;
  n.kind = OpKind::pad;
  n.inputs = {in};
  n.offset = std::move(lo);
  n.aux = std::move(hi);
  n.value = ops::pad_zero(at(in).value, n.offset, n.aux);
  return push(std::move(n));
}

Tape::Id Tape::concat(Id a, Id b) {
  Node n;
  n.kind = OpKind::concat;
  n.inputs = {a, b};
  n.value = ops::concat_channels(at(a).value, at(b).value);
  return push(std::move(n));
}

Tape::Id Tape::concat_crop(Id skip, Id up) {
  const auto skip_sp = ops::spatial_shape(at(skip).value);
  const auto up_sp = ops::spatial_shape(at(up).value);
  const auto off = ops::central_crop_offset(skip_sp, up_sp);
  return concat(crop(skip, off, up_sp), up);
}

Tape::Id Tape::add(Id a, Id b) {
  Node n;
  n.kind = OpKind::add;
  n.inputs = {a, b};
  n.value = ops::add(at(a).value, at(b).value);
  return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double s) {
  Node n;
  n.kind = OpKind::scale;
  n.inputs = {a};
  n.scalar = s;
  n.value = ops::scale(at(a).value, s);
  return push(std::move(n));
}

Tape::Id Tape::sum(Id a) {
  Node n;
  n.kind = OpKind::sum;
  n.inputs = {a};
  n.value = Tensor({1}, std::vector<double>{ops::sum(at(a).value)});
  return push(std::move(n));
}

const Tensor& Tape::value(Id id) const { return at(id).value; }

Tensor Tape::grad(Id id) const {
  if (!has_grads_) throw std::runtime_error("tape: grad() before backward()");
  const Node& n = at(id);
  const Tensor& g = grads_[static_cast<size_t>(id)];
  if (g.data.empty()) return Tensor(n.value.shape, 0.0);
  return g;
}

void Tape::backward(Id root) {
  if (at(root).value.numel() != 1)
    throw std::invalid_argument("tape: backward() root must be scalar, got shape " +
                                at(root).value.shape_str());
  backward(root, Tensor(at(root).value.shape, 1.0));
}

void Tape::backward(Id root, const Tensor& seed) {
  if (nodes_.empty()) throw std::runtime_error("tape: backward() on an empty tape");
  const Node& r = at(root);
  if (seed.shape != r.value.shape)
    throw std::invalid_argument("tape: backward seed shape " + seed.shape_str() +
                                " does not match root value shape " + r.value.shape_str());

  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<size_t>(root)] = seed;
  has_grads_ = true;

  auto accum = [&](Id id, Tensor g) {
    Tensor& dst = grads_[static_cast<size_t>(id)];
    if (dst.data.empty())
      dst = std::move(g);
    else
      dst = ops::add(dst, g);
  };

  for (Id i = root; i >= 0; --i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    const Tensor& g = grads_[static_cast<size_t>(i)];
    if (g.data.empty()) continue;
    switch (n.kind) {
      case OpKind::input:
      case OpKind::param:
        break;
      case OpKind::conv: {
        auto cg = ops::conv_backward(at(n.inputs[0]).value, at(n.inputs[1]).value, g, n.padding);
        accum(n.inputs[0], std::move(cg.d_in));
        accum(n.inputs[1], std::move(cg.d_kernel));
        accum(n.inputs[2], std::move(cg.d_bias));
        break;
      }
      case OpKind::relu:
        accum(n.inputs[0], ops::relu_backward(at(n.inputs[0]).value, g));
        break;
      case OpKind::maxpool:
        accum(n.inputs[0], ops::maxpool_backward(at(n.inputs[0]).value.shape, n.argmax, g));
        break;
      case OpKind::upsample_nn:
        accum(n.inputs[0], ops::upsample_nn_backward(at(n.inputs[0]).value.shape, g, n.factor));
        break;
      case OpKind::upconv: {
        auto ug = ops::upconv_backward(at(n.inputs[0]).value, at(n.inputs[1]).value, g, n.factor);
        accum(n.inputs[0], std::move(ug.d_in));
        accum(n.inputs[1], std::move(ug.d_kernel));
        break;
      }
      case OpKind::crop:
        accum(n.inputs[0], ops::crop_backward(at(n.inputs[0]).value.shape, n.offset, g));
        break;
      case OpKind::pad:
        accum(n.inputs[0], ops::pad_zero_backward(n.offset, ops::spatial_shape(at(n.inputs[0]).value), g));
        break;
      case OpKind::concat: {
        const Tensor& a = at(n.inputs[0]).value;
        const Tensor& b = at(n.inputs[1]).value;
        const int64_t d = a.rank() - 1;
        const int64_t ca = a.shape[d], cb = b.shape[d];
        Tensor ga(a.shape), gb(b.shape);
        const int64_t rows = a.numel() / ca;
        for (int64_t r2 = 0; r2 < rows; ++r2) {
          for (int64_t c = 0; c < ca; ++c) ga.data[r2 * ca + c] = g.data[r2 * (ca + cb) + c];
          for (int64_t c = 0; c < cb; ++c) gb.data[r2 * cb + c] = g.data[r2 * (ca + cb) + ca + c];
        }
        accum(n.inputs[0], std::move(ga));
        accum(n.inputs[1], std::move(gb));
        break;
      }
      case OpKind::add:
        accum(n.inputs[0], g);
        accum(n.inputs[1], g);
        break;
      case OpKind::scale:
        accum(n.inputs[0], ops::scale(g, n.scalar));
        break;
      case OpKind::sum: {
        accum(n.inputs[0], Tensor(at(n.inputs[0]).value.shape, g.data[0]));
        break;
      }
    }
  }
}

std::map<std::string, Tensor> Tape::param_gradients() const {
  if (!has_grads_) throw std::runtime_error("tape: param_gradients() before backward()");
  std::map<std::string, Tensor> out;
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::param) out[nodes_[i].name] = grad(static_cast<Id>(i));
  return out;
}

GradCheckReport grad_check(const GraphBuilder& builder, const std::vector<Tensor>& base_leaves,
                           const std::vector<std::string>& leaf_names, double h, double tol) {
  GradCheckReport report;

  Tape tape;
  BuiltGraph g = builder(tape, base_leaves);
  tape.backward(g.loss);
  std::vector<Tensor> analytic;
  analytic.reserve(g.leaves.size());
  for (auto id : g.leaves) analytic.push_back(tape.grad(id));

  auto eval = [&](const std::vector<Tensor>& leaves) {
    Tape t;
    BuiltGraph bg = builder(t, leaves);
    return t.value(bg.loss).data[0];
  };

  for (size_t li = 0; li < base_leaves.size(); ++li) {
    double worst = 0.0;
    for (size_t e = 0; e < base_leaves[li].data.size(); ++e) {
      std::vector<Tensor> lo = base_leaves, hi = base_leaves;
      lo[li].data[e] -= h;
      hi[li].data[e] += h;
      const double fd = (eval(hi) - eval(lo)) / (2.0 * h);
      const double an = analytic[li].data[e];
      const double rel = std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
    report.entries.push_back({li < leaf_names.size() ? leaf_names[li] : "leaf" + std::to_string(li), worst});
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

GradCheckReport grad_check_conv_relu(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> leaves = {
      random_tensor({9, 2}, rng),        // image
      random_tensor({3, 2, 3}, rng),     // kernel
      random_tensor({3}, rng),           // bias
  };
  GraphBuilder b = [](Tape& t, const std::vector<Tensor>& ls) {
    BuiltGraph g;
    auto x = t.input(ls[0], "x");
    auto k = t.param(ls[1], "k");
    auto bias = t.param(ls[2], "b");
    g.loss = t.sum(t.relu(t.conv(x, k, bias, ops::Padding::valid)));
    g.leaves = {x, k, bias};
    return g;
  };
  return grad_check(b, leaves, {"x", "k", "b"}, 1e-5, 1e-6);
}

GradCheckReport grad_check_maxpool_chain(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> leaves = {
      random_tensor({12, 12, 2}, rng),
      random_tensor({3, 3, 2, 2}, rng),
  };
  GraphBuilder b = [](Tape& t, const std::vector<Tensor>& ls) {
    BuiltGraph g;
    auto x = t.input(ls[0], "x");
    auto k = t.param(ls[1], "k");
    auto bias = t.param(Tensor({2}, 0.0), "b0");
    auto p1 = t.maxpool(x, 2);             // 6x6
    auto c1 = t.conv(p1, k, bias, ops::Padding::valid);  // 4x4
    auto p2 = t.maxpool(c1, 2);            // 2x2
    g.loss = t.sum(p2);
    g.leaves = {x, k};
    return g;
  };
  return grad_check(b, leaves, {"x", "k"}, 1e-5, 1e-6);
}

GradCheckReport grad_check_unet_one_level(uint64_t seed) {
  Rng rng(seed);
  // One-level net: conv+relu, pool, conv+relu (bottleneck), upconv,
  // concat with centrally cropped skip, final conv.
  std::vector<Tensor> leaves = {
      random_tensor({14, 1}, rng),       // image, d=1
      random_tensor({3, 1, 2}, rng),     // encoder kernel
      random_tensor({2}, rng),           // encoder bias
      random_tensor({3, 2, 3}, rng),     // bottleneck kernel
      random_tensor({3}, rng),           // bottleneck bias
      random_tensor({2, 3, 3}, rng),     // upconv kernel f=2
      random_tensor({3, 5, 2}, rng),     // head kernel (2+3 input channels)
      random_tensor({2}, rng),           // head bias
  };
  GraphBuilder b = [](Tape& t, const std::vector<Tensor>& ls) {
    BuiltGraph g;
    auto x = t.input(ls[0], "x");
    auto ek = t.param(ls[1], "ek");
    auto eb = t.param(ls[2], "eb");
    auto bk = t.param(ls[3], "bk");
    auto bb = t.param(ls[4], "bb");
    auto uk = t.param(ls[5], "uk");
    auto hk = t.param(ls[6], "hk");
    auto hb = t.param(ls[7], "hb");
    auto e = t.relu(t.conv(x, ek, eb, ops::Padding::valid));  // 12x2
    auto p = t.maxpool(e, 2);                                 // 6x2
    auto bot = t.relu(t.conv(p, bk, bb, ops::Padding::valid));  // 4x3
    auto up = t.upconv(bot, uk, 2);                           // 8x3
    auto cc = t.concat_crop(e, up);                           // 8x5
    auto out = t.conv(cc, hk, hb, ops::Padding::valid);       // 6x2
    g.loss = t.sum(out);
    g.leaves = {x, ek, eb, bk, bb, uk, hk, hb};
    return g;
  };
  return grad_check(b, leaves, {"x", "ek", "eb", "bk", "bb", "uk", "hk", "hb"}, 1e-5, 1e-6);
}

}  // namespace eqnet
