#include "eqnet/unet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "eqnet/rng.hpp"

namespace eqnet {

namespace fs = std::filesystem;
using nlohmann::json;

void UNetSpec::validate() const {
  if (d != 1 && d != 2) throw std::invalid_argument("spec: d must be 1 or 2, got " + std::to_string(d));
  if (levels < 1) throw std::invalid_argument("spec: levels must be >= 1");
  if (factor < 2) throw std::invalid_argument("spec: pooling factor must be >= 2");
  if (convs_per_block < 1) throw std::invalid_argument("spec: convs_per_block must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("spec: kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
  if (static_cast<int>(channels.size()) != levels + 1)
    throw std::invalid_argument("spec: channel plan length " + std::to_string(channels.size()) +
                                " must equal levels+1 = " + std::to_string(levels + 1));
  for (int64_t c : channels)
    if (c < 1) throw std::invalid_argument("spec: channel counts must be positive");
  if (in_channels < 1 || out_channels < 1)
    throw std::invalid_argument("spec: in/out channels must be positive");
}

int64_t UNetSpec::grid_period() const {
  int64_t p = 1;
  for (int i = 0; i < levels; ++i) p *= factor;
  return p;
}

std::vector<int64_t> UNetSpec::default_channels(int levels, int64_t base) {
  std::vector<int64_t> c(static_cast<size_t>(levels) + 1);
  for (int i = 0; i <= levels; ++i) c[static_cast<size_t>(i)] = base << i;
  return c;
}

std::string ShapePlan::to_string() const {
  std::ostringstream os;
  os << "plan{input=";
  for (size_t i = 0; i < input_size.size(); ++i) os << (i ? "x" : "") << input_size[i];
  os << ", output=";
  for (size_t i = 0; i < output_size.size(); ++i) os << (i ? "x" : "") << output_size[i];
  os << ", rf=" << receptive_field << ", margin=";
  for (size_t i = 0; i < context_margin.size(); ++i) os << (i ? "x" : "") << context_margin[i];
  os << "}";
  return os.str();
}

namespace {

// Bottleneck size for a candidate output edge under the valid-padding
// recursion, or -1 when the divisibility chain fails.
int64_t bottleneck_for_output(const UNetSpec& spec, int64_t out) {
  const int64_t s = spec.block_shrink();
  int64_t v = out;
  for (int i = 0; i < spec.levels; ++i) {
    const int64_t t = v + s;
    if (t % spec.factor != 0) return -1;
    v = t / spec.factor;
    if (v < 1) return -1;
  }
  return v;
}

}  // namespace

int64_t min_feasible_output(const UNetSpec& spec, int64_t requested) {
  const int64_t fl = spec.grid_period();
  const int64_t lo = std::max<int64_t>(1, requested);
  for (int64_t out = lo; out <= lo + 4 * fl; ++out)
    if (bottleneck_for_output(spec, out) > 0) return out;
  throw std::runtime_error("plan_geometry: no feasible output size near " + std::to_string(requested));
}

int64_t receptive_field_edge(const UNetSpec& spec) {
  const int64_t s = spec.block_shrink();
  const int64_t fl = spec.grid_period();
  const int64_t geom = (fl - 1) / (spec.factor - 1);  // 1 + f + ... + f^(l-1)
  return fl * s + 2 * s * geom + 1;
}

ShapePlan plan_geometry(const UNetSpec& spec, const std::vector<int64_t>& requested_output) {
  if (static_cast<int>(requested_output.size()) != spec.d)
    throw std::invalid_argument("plan_geometry: requested output has " +
                                std::to_string(requested_output.size()) + " dims, spec.d=" +
                                std::to_string(spec.d));
  for (int64_t r : requested_output)
    if (r < 1) throw std::invalid_argument("plan_geometry: requested output must be >= 1");

  ShapePlan plan;
  plan.padding = spec.padding;
  plan.prepool_size.assign(static_cast<size_t>(spec.levels), std::vector<int64_t>(requested_output.size()));

  if (spec.padding == ops::Padding::zero) {
    plan.input_size = requested_output;
    plan.output_size = requested_output;
    plan.context_margin.assign(requested_output.size(), 0);
    for (size_t dim = 0; dim < requested_output.size(); ++dim) {
      int64_t z = requested_output[dim];
      for (int j = 0; j < spec.levels; ++j) {
        const int64_t padded = (z + spec.factor - 1) / spec.factor * spec.factor;
        plan.prepool_size[static_cast<size_t>(j)][dim] = padded;
        z = padded / spec.factor;
      }
    }
    plan.receptive_field = receptive_field_edge(spec);
    return plan;
  }

  spec.validate();
  const int64_t s = spec.block_shrink();
  plan.input_size.resize(requested_output.size());
  plan.output_size.resize(requested_output.size());
  plan.context_margin.resize(requested_output.size());
  for (size_t dim = 0; dim < requested_output.size(); ++dim) {
    const int64_t out = min_feasible_output(spec, requested_output[dim]);
    const int64_t bot = bottleneck_for_output(spec, out);
    // Walk back up the encoder: x_l = bot + s, prepool_j = f * x_{j+1}.
    int64_t x = bot + s;
    std::vector<int64_t> prepool(static_cast<size_t>(spec.levels));
    for (int j = spec.levels - 1; j >= 0; --j) {
      prepool[static_cast<size_t>(j)] = spec.factor * x;
      x = prepool[static_cast<size_t>(j)] + s;
    }
    plan.output_size[dim] = out;
    plan.input_size[dim] = x;
    for (int j = 0; j < spec.levels; ++j)
      plan.prepool_size[static_cast<size_t>(j)][dim] = prepool[static_cast<size_t>(j)];
    const int64_t margin2 = x - out;
    if (margin2 % 2 != 0)
      throw std::runtime_error("plan_geometry: internal error, odd context margin");
    plan.context_margin[dim] = margin2 / 2;
  }
  plan.receptive_field = receptive_field_edge(spec);
  return plan;
}

namespace {

struct ParamDesc {
  std::string name;
  std::vector<int64_t> shape;
  int64_t fan_in;
};

std::vector<int64_t> conv_kernel_shape(const UNetSpec& spec, int64_t cin, int64_t cout) {
  std::vector<int64_t> sh;
  for (int i = 0; i < spec.d; ++i) sh.push_back(spec.kernel_size);
  sh.push_back(cin);
  sh.push_back(cout);
  return sh;
}

std::vector<int64_t> upconv_kernel_shape(const UNetSpec& spec, int64_t c) {
  std::vector<int64_t> sh;
  for (int i = 0; i < spec.d; ++i) sh.push_back(spec.factor);
  sh.push_back(c);
  sh.push_back(c);
  return sh;
}

int64_t kernel_taps(const UNetSpec& spec) {
  int64_t t = 1;
  for (int i = 0; i < spec.d; ++i) t *= spec.kernel_size;
  return t;
}

// Input/output channels of conv `c` in the block at `level`;
// level == levels means the bottleneck, level < levels with `decoder` set
// means a decoder block (level 0 being the output head).
struct BlockConvChannels {
  int64_t cin;
  int64_t cout;
};

BlockConvChannels enc_conv_channels(const UNetSpec& spec, int level, int c) {
  const auto& ch = spec.channels;
  int64_t cin = c == 0 ? (level == 0 ? spec.in_channels : ch[static_cast<size_t>(level - 1)])
                       : ch[static_cast<size_t>(level)];
  return {cin, ch[static_cast<size_t>(level)]};
}

BlockConvChannels bot_conv_channels(const UNetSpec& spec, int c) {
  const auto& ch = spec.channels;
  int64_t cin = c == 0 ? ch[static_cast<size_t>(spec.levels - 1)] : ch[static_cast<size_t>(spec.levels)];
  return {cin, ch[static_cast<size_t>(spec.levels)]};
}

BlockConvChannels dec_conv_channels(const UNetSpec& spec, int level, int c) {
  const auto& ch = spec.channels;
  int64_t cin = c == 0 ? ch[static_cast<size_t>(level)] + ch[static_cast<size_t>(level + 1)]
                       : ch[static_cast<size_t>(level)];
  int64_t cout = ch[static_cast<size_t>(level)];
  if (level == 0 && c == spec.convs_per_block - 1) cout = spec.out_channels;
  return {cin, cout};
}

void for_each_param(const UNetSpec& spec, const std::function<void(const ParamDesc&)>& fn) {
  const int64_t taps = kernel_taps(spec);
  for (int j = 0; j < spec.levels; ++j) {
    for (int c = 0; c < spec.convs_per_block; ++c) {
      auto bc = enc_conv_channels(spec, j, c);
      std::string base = "enc" + std::to_string(j) + "_conv" + std::to_string(c);
      fn({base + "_w", conv_kernel_shape(spec, bc.cin, bc.cout), bc.cin * taps});
      fn({base + "_b", {bc.cout}, 0});
    }
  }
  for (int c = 0; c < spec.convs_per_block; ++c) {
    auto bc = bot_conv_channels(spec, c);
    std::string base = "bot_conv" + std::to_string(c);
    fn({base + "_w", conv_kernel_shape(spec, bc.cin, bc.cout), bc.cin * taps});
    fn({base + "_b", {bc.cout}, 0});
  }
  for (int j = spec.levels - 1; j >= 0; --j) {
    if (spec.upsampling == Upsampling::learnt) {
      const int64_t c = spec.channels[static_cast<size_t>(j + 1)];
      fn({"up" + std::to_string(j) + "_w", upconv_kernel_shape(spec, c), c});
    }
    for (int c = 0; c < spec.convs_per_block; ++c) {
      auto bc = dec_conv_channels(spec, j, c);
      std::string base = "dec" + std::to_string(j) + "_conv" + std::to_string(c);
      fn({base + "_w", conv_kernel_shape(spec, bc.cin, bc.cout), bc.cin * taps});
      fn({base + "_b", {bc.cout}, 0});
    }
  }
}

}  // namespace

const Tensor& UNetInstance::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw std::invalid_argument("instance: no parameter named " + name);
}

Tensor& UNetInstance::param(const std::string& name) {
  for (auto& [n, t] : params)
    if (n == name) return t;
  throw std::invalid_argument("instance: no parameter named " + name);
}

bool UNetInstance::has_param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return true;
  return false;
}

UNetInstance build_unet(const UNetSpec& spec, Init init, uint64_t seed) {
  spec.validate();
  UNetInstance inst;
  inst.spec = spec;
  inst.id = init == Init::zeros ? "zeros" : "random-s" + std::to_string(seed);
  Rng rng(seed);
  for_each_param(spec, [&](const ParamDesc& p) {
    Tensor t(p.shape, 0.0);
    if (init == Init::random && p.fan_in > 0) {
      const double b = std::sqrt(1.0 / static_cast<double>(p.fan_in));
      for (auto& v : t.data) v = rng.uniform(-b, b);
    }
    inst.params.emplace_back(p.name, std::move(t));
  });
  return inst;
}

namespace {

void check_forward_geometry(const UNetSpec& spec, const Tensor& image) {
  if (image.rank() != spec.d + 1)
    throw std::invalid_argument("forward: image rank " + std::to_string(image.rank()) +
                                " does not match spec d+1=" + std::to_string(spec.d + 1));
  if (image.shape[static_cast<size_t>(spec.d)] != spec.in_channels)
    throw std::invalid_argument("forward: image has " +
                                std::to_string(image.shape[static_cast<size_t>(spec.d)]) +
                                " channels, spec.in_channels=" + std::to_string(spec.in_channels));
  if (spec.padding == ops::Padding::zero) return;
  const int64_t rf = receptive_field_edge(spec);
  for (int dim = 0; dim < spec.d; ++dim) {
    const int64_t in = image.shape[static_cast<size_t>(dim)];
    const int64_t out = in - rf + 1;
    if (out < 1 || bottleneck_for_output(spec, out) < 1) {
      ShapePlan want = plan_geometry(spec, std::vector<int64_t>(static_cast<size_t>(spec.d),
                                                                std::max<int64_t>(1, out)));
      throw std::invalid_argument("forward: input size " + std::to_string(in) + " in dim " +
                                  std::to_string(dim) + " does not fit the valid geometry; nearest " +
                                  want.to_string());
    }
  }
}

}  // namespace

GraphRun run_unet(const UNetInstance& inst, const Tensor& image) {
  const UNetSpec& spec = inst.spec;
  check_forward_geometry(spec, image);

  GraphRun run;
  Tape& t = run.tape;
  auto P = [&](const std::string& name) {
    Tape::Id id = t.param(inst.param(name), name);
    run.params.emplace_back(name, id);
    return id;
  };
  auto conv_block = [&](Tape::Id cur, const std::string& base, int convs, bool last_linear) {
    for (int c = 0; c < convs; ++c) {
      const std::string b = base + "_conv" + std::to_string(c);
      const Tape::Id w = P(b + "_w");
      const Tape::Id bias = P(b + "_b");
      cur = t.conv(cur, w, bias, spec.padding);
      if (!(last_linear && c == convs - 1)) cur = t.relu(cur);
    }
    return cur;
  };

  const int64_t f = spec.factor;
  Tape::Id cur = t.input(image, "image");
  std::vector<Tape::Id> skips;
  std::vector<std::vector<int64_t>> skip_sizes;

  for (int j = 0; j < spec.levels; ++j) {
    cur = conv_block(cur, "enc" + std::to_string(j), spec.convs_per_block, false);
    skips.push_back(cur);
    skip_sizes.push_back(ops::spatial_shape(t.value(cur)));
    if (spec.padding == ops::Padding::zero) {
      auto sp = ops::spatial_shape(t.value(cur));
      std::vector<int64_t> hi(sp.size(), 0);
      bool need = false;
      for (size_t i = 0; i < sp.size(); ++i) {
        hi[i] = (f - sp[i] % f) % f;
        need |= hi[i] != 0;
      }
      if (need) cur = t.pad_zero(cur, std::vector<int64_t>(sp.size(), 0), hi);
    }
    cur = t.maxpool(cur, f);
  }

  cur = conv_block(cur, "bot", spec.convs_per_block, false);

  for (int j = spec.levels - 1; j >= 0; --j) {
    if (spec.upsampling == Upsampling::learnt)
      cur = t.upconv(cur, P("up" + std::to_string(j) + "_w"), f);
    else
      cur = t.upsample_nn(cur, f);
    if (spec.padding == ops::Padding::zero) {
      // trim the divisibility padding back to the encoder size
      auto sp = ops::spatial_shape(t.value(cur));
      if (sp != skip_sizes[static_cast<size_t>(j)])
        cur = t.crop(cur, std::vector<int64_t>(sp.size(), 0), skip_sizes[static_cast<size_t>(j)]);
      cur = t.concat(skips[static_cast<size_t>(j)], cur);
    } else {
      cur = t.concat_crop(skips[static_cast<size_t>(j)], cur);
    }
    cur = conv_block(cur, "dec" + std::to_string(j), spec.convs_per_block, j == 0);
  }

  run.output = cur;
  return run;
}

Tensor forward(const UNetInstance& inst, const Tensor& image) {
  GraphRun run = run_unet(inst, image);
  return run.tape.value(run.output);
}

std::vector<double> point_function_eval(const UNetInstance& inst, const Tensor& image,
                                        const std::vector<int64_t>& x) {
  const UNetSpec& spec = inst.spec;
  check_forward_geometry(spec, image);
  if (static_cast<int>(x.size()) != spec.d)
    throw std::invalid_argument("point_function_eval: coordinate dimensionality mismatch");

  const int64_t rf = receptive_field_edge(spec);
  std::vector<int64_t> out_img(static_cast<size_t>(spec.d));
  for (int dim = 0; dim < spec.d; ++dim) {
    out_img[static_cast<size_t>(dim)] = image.shape[static_cast<size_t>(dim)] - rf + 1;
    if (x[static_cast<size_t>(dim)] < 0 || x[static_cast<size_t>(dim)] >= out_img[static_cast<size_t>(dim)])
      throw std::invalid_argument("point_function_eval: coordinate " +
                                  std::to_string(x[static_cast<size_t>(dim)]) +
                                  " outside output window of size " +
                                  std::to_string(out_img[static_cast<size_t>(dim)]) + " in dim " +
                                  std::to_string(dim));
  }
  if (spec.padding == ops::Padding::zero)
    throw std::invalid_argument("point_function_eval: only valid padding is supported");

  const int64_t fl = spec.grid_period();
  const int64_t max_out = *std::max_element(out_img.begin(), out_img.end());
  for (int64_t w = min_feasible_output(spec, fl); w < max_out + fl; w += fl) {
    bool fits = true;
    std::vector<int64_t> off(static_cast<size_t>(spec.d));
    for (int dim = 0; dim < spec.d && fits; ++dim) {
      int64_t o = fl * (x[static_cast<size_t>(dim)] / fl);
      if (o + w > out_img[static_cast<size_t>(dim)])
        o = fl * ((out_img[static_cast<size_t>(dim)] - w) / fl);
      if (o < 0 || x[static_cast<size_t>(dim)] - o >= w) fits = false;
      off[static_cast<size_t>(dim)] = o;
    }
    if (!fits) continue;
    std::vector<int64_t> in_size(static_cast<size_t>(spec.d), w + rf - 1);
    Tensor window = ops::crop(image, off, in_size);
    Tensor out = forward(inst, window);
    int64_t flat = 0;
    for (int dim = 0; dim < spec.d; ++dim)
      flat = flat * w + (x[static_cast<size_t>(dim)] - off[static_cast<size_t>(dim)]);
    std::vector<double> res(static_cast<size_t>(spec.out_channels));
    for (int64_t c = 0; c < spec.out_channels; ++c)
      res[static_cast<size_t>(c)] = out.data[static_cast<size_t>(flat * spec.out_channels + c)];
    return res;
  }

  // fall back to indexing the full forward
  Tensor out = forward(inst, image);
  int64_t flat = 0;
  for (int dim = 0; dim < spec.d; ++dim)
    flat = flat * out.shape[static_cast<size_t>(dim)] + x[static_cast<size_t>(dim)];
  std::vector<double> res(static_cast<size_t>(spec.out_channels));
  for (int64_t c = 0; c < spec.out_channels; ++c)
    res[static_cast<size_t>(c)] = out.data[static_cast<size_t>(flat * spec.out_channels + c)];
  return res;
}

namespace {

json spec_to_json(const UNetSpec& s) {
  return json{{"d", s.d},
              {"levels", s.levels},
              {"factor", s.factor},
              {"convs_per_block", s.convs_per_block},
              {"kernel_size", s.kernel_size},
              {"channels", s.channels},
              {"padding", s.padding == ops::Padding::valid ? "valid" : "zero"},
              {"upsampling", s.upsampling == Upsampling::fixed ? "fixed" : "learnt"},
              {"in_channels", s.in_channels},
              {"out_channels", s.out_channels}};
}

UNetSpec spec_from_json(const json& j) {
  UNetSpec s;
  s.d = j.at("d").get<int>();
  s.levels = j.at("levels").get<int>();
  s.factor = j.at("factor").get<int>();
  s.convs_per_block = j.at("convs_per_block").get<int>();
  s.kernel_size = j.at("kernel_size").get<int>();
  s.channels = j.at("channels").get<std::vector<int64_t>>();
  const std::string pad = j.at("padding").get<std::string>();
  if (pad != "valid" && pad != "zero") throw std::runtime_error("manifest: unknown padding " + pad);
  s.padding = pad == "valid" ? ops::Padding::valid : ops::Padding::zero;
  const std::string up = j.at("upsampling").get<std::string>();
  if (up != "fixed" && up != "learnt") throw std::runtime_error("manifest: unknown upsampling " + up);
  s.upsampling = up == "fixed" ? Upsampling::fixed : Upsampling::learnt;
  s.in_channels = j.at("in_channels").get<int64_t>();
  s.out_channels = j.at("out_channels").get<int64_t>();
  return s;
}

}  // namespace

void save_instance(const std::string& dir, const UNetInstance& inst) {
  fs::create_directories(dir);
  const fs::path archive = fs::path(dir) / "params.eten1a";
  json params = json::array();
  {
    std::ofstream os(archive, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + archive.string());
    for (const auto& [name, tensor] : inst.params) {
      const auto off = os.tellp();
      write_eten1(os, tensor);
      params.push_back(json{{"name", name},
                            {"offset", static_cast<int64_t>(off)},
                            {"bytes", static_cast<int64_t>(os.tellp()) - static_cast<int64_t>(off)}});
    }
  }
  json manifest{{"format", "eqnet-unet-manifest"},
                {"version", 1},
                {"id", inst.id},
                {"spec", spec_to_json(inst.spec)},
                {"archive", "params.eten1a"},
                {"parameters", params}};
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw std::runtime_error("cannot open for write: " + (fs::path(dir) / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

UNetInstance load_instance(const std::string& manifest_or_dir) {
  fs::path mp(manifest_or_dir);
  if (fs::is_directory(mp)) mp /= "manifest.json";
  std::ifstream is(mp);
  if (!is) throw std::runtime_error("cannot open manifest: " + mp.string());
  json manifest = json::parse(is);
  if (manifest.at("format").get<std::string>() != "eqnet-unet-manifest")
    throw std::runtime_error("manifest: unexpected format field");

  UNetInstance inst;
  inst.spec = spec_from_json(manifest.at("spec"));
  inst.spec.validate();
  inst.id = manifest.value("id", "unnamed");

  const fs::path archive = mp.parent_path() / manifest.at("archive").get<std::string>();
  std::ifstream as(archive, std::ios::binary);
  if (!as) throw std::runtime_error("cannot open archive: " + archive.string());
  for (const auto& p : manifest.at("parameters")) {
    as.seekg(p.at("offset").get<int64_t>());
    inst.params.emplace_back(p.at("name").get<std::string>(), read_eten1(as));
  }

  // shape check against the spec's parameter enumeration
  size_t idx = 0;
  for_each_param(inst.spec, [&](const ParamDesc& pd) {
    if (idx >= inst.params.size() || inst.params[idx].first != pd.name ||
        inst.params[idx].second.shape != pd.shape)
      throw std::runtime_error("manifest: parameter list does not match spec at " + pd.name);
    ++idx;
  });
  if (idx != inst.params.size()) throw std::runtime_error("manifest: extra parameters in archive");
  return inst;
}

}  // namespace eqnet
