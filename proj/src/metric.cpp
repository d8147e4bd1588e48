#include "eqnet/metric.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "eqnet/ops.hpp"
#include "eqnet/rng.hpp"

namespace eqnet {

namespace fs = std::filesystem;

void LossParams::validate() const {
  if (delta_v < 0.0) throw std::invalid_argument("loss: pull margin must be >= 0");
  if (delta_d <= delta_v) throw std::invalid_argument("loss: push margin must exceed pull margin");
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
    throw std::invalid_argument("loss: weights must be >= 0");
}

LossBreakdown discriminative_loss(const Tensor& emb, const InstanceLabeling& labels,
                                  const LossParams& params, Tensor* grad_out) {
  params.validate();
  const int64_t d = emb.rank() - 1;
  const int64_t E = emb.shape[static_cast<size_t>(d)];
  if (ops::spatial_shape(emb) != labels.size)
    throw std::invalid_argument("loss: embedding spatial shape does not match labels");
  const int64_t n = labels.numel();
  if (n == 0) throw std::invalid_argument("loss: empty labeling");

  // present classes; background (id 0) keeps a fixed zero centroid
  std::map<int32_t, int64_t> class_index;
  for (int64_t i = 0; i < n; ++i) class_index.emplace(labels.ids[static_cast<size_t>(i)], 0);
  int64_t ci = 0;
  for (auto& [id, idx] : class_index) idx = ci++;
  const int64_t C = static_cast<int64_t>(class_index.size());

  std::vector<int64_t> count(static_cast<size_t>(C), 0);
  std::vector<double> mu(static_cast<size_t>(C * E), 0.0);
  std::vector<bool> fixed_zero(static_cast<size_t>(C), false);
  std::vector<int64_t> pixel_class(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t c = class_index[labels.ids[static_cast<size_t>(i)]];
    pixel_class[static_cast<size_t>(i)] = c;
    ++count[static_cast<size_t>(c)];
    for (int64_t e = 0; e < E; ++e)
      mu[static_cast<size_t>(c * E + e)] += emb.data[static_cast<size_t>(i * E + e)];
  }
  for (const auto& [id, idx] : class_index) {
    if (id == 0) {
      fixed_zero[static_cast<size_t>(idx)] = true;
      std::fill(mu.begin() + idx * E, mu.begin() + (idx + 1) * E, 0.0);
    } else {
      for (int64_t e = 0; e < E; ++e) mu[static_cast<size_t>(idx * E + e)] /= double(count[static_cast<size_t>(idx)]);
    }
  }

  LossBreakdown bd;
  if (grad_out) *grad_out = Tensor(emb.shape, 0.0);

  // pull
  std::vector<double> tsum(static_cast<size_t>(C * E), 0.0);  // sum_i 2 h_i vhat_i per class
  std::vector<double> class_pull(static_cast<size_t>(C), 0.0);
  std::vector<double> hhat(static_cast<size_t>(n * E), 0.0);  // 2 h_i vhat_i per pixel
  for (int64_t i = 0; i < n; ++i) {
    const int64_t c = pixel_class[static_cast<size_t>(i)];
    double r2 = 0.0;
    for (int64_t e = 0; e < E; ++e) {
      const double v = mu[static_cast<size_t>(c * E + e)] - emb.data[static_cast<size_t>(i * E + e)];
      r2 += v * v;
    }
    const double r = std::sqrt(r2);
    const double h = std::max(0.0, r - params.delta_v);
    class_pull[static_cast<size_t>(c)] += h * h;
    if (h > 0.0 && r > 0.0) {
      const double k = 2.0 * h / r;
      for (int64_t e = 0; e < E; ++e) {
        const double v = mu[static_cast<size_t>(c * E + e)] - emb.data[static_cast<size_t>(i * E + e)];
        hhat[static_cast<size_t>(i * E + e)] = k * v;
        tsum[static_cast<size_t>(c * E + e)] += k * v;
      }
    }
  }
  for (int64_t c = 0; c < C; ++c) bd.pull += class_pull[static_cast<size_t>(c)] / double(count[static_cast<size_t>(c)]);
  bd.pull /= double(C);

  if (grad_out) {
    for (int64_t i = 0; i < n; ++i) {
      const int64_t c = pixel_class[static_cast<size_t>(i)];
      const double w = params.alpha / (double(C) * double(count[static_cast<size_t>(c)]));
      const double mu_share = fixed_zero[static_cast<size_t>(c)] ? 0.0 : 1.0 / double(count[static_cast<size_t>(c)]);
      for (int64_t e = 0; e < E; ++e)
        grad_out->data[static_cast<size_t>(i * E + e)] +=
            w * (mu_share * tsum[static_cast<size_t>(c * E + e)] - hhat[static_cast<size_t>(i * E + e)]);
    }
  }

  // push + regularizer accumulate gradients on centroids first
  std::vector<double> gmu(static_cast<size_t>(C * E), 0.0);
  if (C >= 2) {
    const double pairs = double(C) * double(C - 1);
    for (int64_t a = 0; a < C; ++a) {
      for (int64_t b = a + 1; b < C; ++b) {
        double r2 = 0.0;
        for (int64_t e = 0; e < E; ++e) {
          const double u = mu[static_cast<size_t>(a * E + e)] - mu[static_cast<size_t>(b * E + e)];
          r2 += u * u;
        }
        const double r = std::sqrt(r2);
        const double g = std::max(0.0, 2.0 * params.delta_d - r);
        bd.push += 2.0 * g * g / pairs;
        if (grad_out && g > 0.0 && r > 0.0) {
          const double k = params.beta * 4.0 * g / (pairs * r);
          for (int64_t e = 0; e < E; ++e) {
            const double u = mu[static_cast<size_t>(a * E + e)] - mu[static_cast<size_t>(b * E + e)];
            gmu[static_cast<size_t>(a * E + e)] -= k * u;
            gmu[static_cast<size_t>(b * E + e)] += k * u;
          }
        }
      }
    }
  }

  for (int64_t c = 0; c < C; ++c) {
    double r2 = 0.0;
    for (int64_t e = 0; e < E; ++e) r2 += mu[static_cast<size_t>(c * E + e)] * mu[static_cast<size_t>(c * E + e)];
    const double r = std::sqrt(r2);
    bd.reg += r / double(C);
    if (grad_out && r > 0.0 && !fixed_zero[static_cast<size_t>(c)]) {
      const double k = params.gamma / (double(C) * r);
      for (int64_t e = 0; e < E; ++e) gmu[static_cast<size_t>(c * E + e)] += k * mu[static_cast<size_t>(c * E + e)];
    }
  }

  if (grad_out) {
    for (int64_t i = 0; i < n; ++i) {
      const int64_t c = pixel_class[static_cast<size_t>(i)];
      if (fixed_zero[static_cast<size_t>(c)]) continue;
      const double share = 1.0 / double(count[static_cast<size_t>(c)]);
      for (int64_t e = 0; e < E; ++e)
        grad_out->data[static_cast<size_t>(i * E + e)] += share * gmu[static_cast<size_t>(c * E + e)];
    }
  }

  bd.total = params.alpha * bd.pull + params.beta * bd.push + params.gamma * bd.reg;
  return bd;
}

namespace {

void adam_step(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, int64_t t, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, double(t));
  const double c2 = 1.0 - std::pow(b2, double(t));
  for (size_t i = 0; i < p.data.size(); ++i) {
    m.data[i] = b1 * m.data[i] + (1.0 - b1) * g.data[i];
    v.data[i] = b2 * v.data[i] + (1.0 - b2) * g.data[i] * g.data[i];
    p.data[i] -= lr * (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + eps);
  }
}

}  // namespace

TrainResult train(const UNetInstance& start, const DiskScene& scene, const TrainConfig& cfg) {
  if (cfg.batch_size != 1)
    throw std::invalid_argument("train: batch size " + std::to_string(cfg.batch_size) +
                                " not supported (only 1)");
  const UNetSpec& spec = start.spec;
  ShapePlan plan =
      plan_geometry(spec, std::vector<int64_t>(static_cast<size_t>(spec.d), cfg.out_window));
  if (plan.output_size[0] != cfg.out_window)
    throw std::invalid_argument("train: output window " + std::to_string(cfg.out_window) +
                                " not achievable; nearest is " + std::to_string(plan.output_size[0]));
  const int64_t inX = plan.input_size[0], inY = plan.input_size[1];
  const int64_t H = scene.image.shape[0], W = scene.image.shape[1];
  if (H < inX || W < inY)
    throw std::invalid_argument("train: scene " + std::to_string(H) + "x" + std::to_string(W) +
                                " smaller than the input window " + std::to_string(inX));

  TrainResult res;
  res.instance = start;
  res.adam.m.reserve(start.params.size());
  res.adam.v.reserve(start.params.size());
  for (const auto& [name, t] : start.params) {
    res.adam.m.emplace_back(t.shape, 0.0);
    res.adam.v.emplace_back(t.shape, 0.0);
  }

  Rng rng(cfg.seed);
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const int64_t o0 = rng.below(H - inX + 1);
    const int64_t o1 = rng.below(W - inY + 1);
    Tensor window = ops::crop(scene.image, {o0, o1}, {inX, inY});
    InstanceLabeling win_labels({inX, inY});
    for (int64_t y = 0; y < inX; ++y)
      for (int64_t x = 0; x < inY; ++x)
        win_labels.ids[static_cast<size_t>(y * inY + x)] =
            scene.labels.ids[static_cast<size_t>((o0 + y) * W + o1 + x)];

    if (cfg.elastic) {
      DeformParams dp = cfg.deform;
      dp.seed = rng.next_u64();
      DeformResult dr = elastic_deform(window, win_labels, dp);
      window = std::move(dr.image);
      win_labels = std::move(dr.labels);
    }
    if (cfg.noise_sigma > 0.0) window = add_gaussian_noise(window, cfg.noise_sigma, rng.next_u64());

    InstanceLabeling out_labels({cfg.out_window, cfg.out_window});
    const int64_t m0 = plan.context_margin[0], m1 = plan.context_margin[1];
    for (int64_t y = 0; y < cfg.out_window; ++y)
      for (int64_t x = 0; x < cfg.out_window; ++x)
        out_labels.ids[static_cast<size_t>(y * cfg.out_window + x)] =
            win_labels.ids[static_cast<size_t>((m0 + y) * inY + m1 + x)];

    GraphRun run = run_unet(res.instance, window);
    Tensor grad;
    LossBreakdown bd = discriminative_loss(run.tape.value(run.output), out_labels, cfg.loss, &grad);
    if (!std::isfinite(bd.total))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    res.trace.push_back({step, bd.total, bd.pull, bd.push, bd.reg});

    run.tape.backward(run.output, grad);
    res.adam.step = step + 1;
    double lr = cfg.lr;
    if (cfg.lr_schedule == LrSchedule::cosine) {
      const double t = double(step) / double(std::max<int64_t>(1, cfg.steps - 1));
      lr = cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * t)));
    }
    for (size_t pi = 0; pi < run.params.size(); ++pi) {
      const auto& [name, node] = run.params[pi];
      Tensor g = run.tape.grad(node);
      adam_step(res.instance.params[pi].second, g, res.adam.m[pi], res.adam.v[pi], res.adam.step,
                lr);
      if (res.instance.params[pi].first != name)
        throw std::runtime_error("train: parameter order mismatch at " + name);
    }
  }
  return res;
}

void write_loss_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "step,total,pull,push,reg\n";
  os.precision(17);
  for (const auto& row : trace)
    os << row.step << "," << row.total << "," << row.pull << "," << row.push << "," << row.reg << "\n";
}

void save_checkpoint(const std::string& dir, const UNetInstance& inst, const AdamState& adam) {
  save_instance(dir, inst);
  std::ofstream os(fs::path(dir) / "optim.eten1a", std::ios::binary);
  if (!os) throw std::runtime_error("cannot open optimizer archive for write");
  write_eten1(os, Tensor({1}, std::vector<double>{double(adam.step)}));
  for (const auto& t : adam.m) write_eten1(os, t);
  for (const auto& t : adam.v) write_eten1(os, t);
}

void load_checkpoint(const std::string& dir, UNetInstance& inst, AdamState& adam) {
  inst = load_instance(dir);
  std::ifstream is(fs::path(dir) / "optim.eten1a", std::ios::binary);
  if (!is) throw std::runtime_error("cannot open optimizer archive for read");
  adam.step = static_cast<int64_t>(read_eten1(is).data[0]);
  adam.m.clear();
  adam.v.clear();
  for (size_t i = 0; i < inst.params.size(); ++i) adam.m.push_back(read_eten1(is));
  for (size_t i = 0; i < inst.params.size(); ++i) adam.v.push_back(read_eten1(is));
}

namespace {

std::vector<double> mean_shift_mode(const std::vector<double>& points, int64_t n, int64_t E,
                                    std::vector<double> pos, double bandwidth) {
  const double bw2 = bandwidth * bandwidth;
  const double tol2 = 1e-8 * bw2;
  for (int iter = 0; iter < 64; ++iter) {
    std::vector<double> next(static_cast<size_t>(E), 0.0);
    int64_t inside = 0;
    for (int64_t i = 0; i < n; ++i) {
      double r2 = 0.0;
      for (int64_t e = 0; e < E; ++e) {
        const double dv = points[static_cast<size_t>(i * E + e)] - pos[static_cast<size_t>(e)];
        r2 += dv * dv;
      }
      if (r2 <= bw2) {
        ++inside;
        for (int64_t e = 0; e < E; ++e) next[static_cast<size_t>(e)] += points[static_cast<size_t>(i * E + e)];
      }
    }
    if (inside == 0) break;
    double move2 = 0.0;
    for (int64_t e = 0; e < E; ++e) {
      next[static_cast<size_t>(e)] /= double(inside);
      const double dv = next[static_cast<size_t>(e)] - pos[static_cast<size_t>(e)];
      move2 += dv * dv;
    }
    pos = std::move(next);
    if (move2 <= tol2) break;
  }
  return pos;
}

}  // namespace

InstanceLabeling mean_shift_cluster(const Tensor& emb, const std::vector<uint8_t>& fg_mask,
                                    double bandwidth) {
  if (bandwidth <= 0.0) throw std::invalid_argument("mean_shift: bandwidth must be > 0");
  const int64_t d = emb.rank() - 1;
  const int64_t E = emb.shape[static_cast<size_t>(d)];
  const int64_t n = emb.numel() / E;
  if (static_cast<int64_t>(fg_mask.size()) != n)
    throw std::invalid_argument("mean_shift: mask size does not match embedding");

  InstanceLabeling labels(ops::spatial_shape(emb));
  std::vector<int64_t> fg_index;
  for (int64_t i = 0; i < n; ++i)
    if (fg_mask[static_cast<size_t>(i)]) fg_index.push_back(i);
  if (fg_index.empty()) return labels;

  const int64_t fn = static_cast<int64_t>(fg_index.size());
  std::vector<double> points(static_cast<size_t>(fn * E));
  for (int64_t i = 0; i < fn; ++i)
    for (int64_t e = 0; e < E; ++e)
      points[static_cast<size_t>(i * E + e)] = emb.data[static_cast<size_t>(fg_index[static_cast<size_t>(i)] * E + e)];

  std::vector<double> modes(static_cast<size_t>(fn * E));
  for (int64_t i = 0; i < fn; ++i) {
    std::vector<double> start(points.begin() + i * E, points.begin() + (i + 1) * E);
    auto mode = mean_shift_mode(points, fn, E, std::move(start), bandwidth);
    std::copy(mode.begin(), mode.end(), modes.begin() + i * E);
  }

  // merge modes within bandwidth, first appearance wins
  std::vector<std::vector<double>> cluster_modes;
  for (int64_t i = 0; i < fn; ++i) {
    int32_t assigned = 0;
    for (size_t c = 0; c < cluster_modes.size(); ++c) {
      double r2 = 0.0;
      for (int64_t e = 0; e < E; ++e) {
        const double dv = modes[static_cast<size_t>(i * E + e)] - cluster_modes[c][static_cast<size_t>(e)];
        r2 += dv * dv;
      }
      if (r2 <= bandwidth * bandwidth) {
        assigned = static_cast<int32_t>(c) + 1;
        break;
      }
    }
    if (assigned == 0) {
      cluster_modes.emplace_back(modes.begin() + i * E, modes.begin() + (i + 1) * E);
      assigned = static_cast<int32_t>(cluster_modes.size());
    }
    labels.ids[static_cast<size_t>(fg_index[static_cast<size_t>(i)])] = assigned;
  }
  return labels;
}

std::vector<double> estimate_background_mode(const Tensor& emb, double bandwidth) {
  const int64_t d = emb.rank() - 1;
  const int64_t E = emb.shape[static_cast<size_t>(d)];
  const int64_t n = emb.numel() / E;
  return mean_shift_mode(emb.data, n, E, std::vector<double>(static_cast<size_t>(E), 0.0), bandwidth);
}

std::vector<uint8_t> foreground_mask(const Tensor& emb, const std::vector<double>& bg_mode,
                                     double radius) {
  const int64_t d = emb.rank() - 1;
  const int64_t E = emb.shape[static_cast<size_t>(d)];
  const int64_t n = emb.numel() / E;
  std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (int64_t e = 0; e < E; ++e) {
      const double dv = emb.data[static_cast<size_t>(i * E + e)] - bg_mode[static_cast<size_t>(e)];
      r2 += dv * dv;
    }
    if (r2 > radius * radius) mask[static_cast<size_t>(i)] = 1;
  }
  return mask;
}

InstanceLabeling infer_labels(const Tensor& emb, const LossParams& params) {
  // The pull hinge releases embeddings once within delta_v of the centroid,
  // so a class forms a cloud of radius ~delta_v (diameter 2*delta_v) and the
  // background halo extends to delta_v as well. Masking at delta_d keeps the
  // halo out (instances are pushed to >= 2*delta_d from the background), and
  // the flat kernel must span the cloud diameter to merge one instance.
  const auto bg = estimate_background_mode(emb, 2.0 * params.delta_v);
  const auto mask = foreground_mask(emb, bg, params.delta_d);
  return mean_shift_cluster(emb, mask, 2.0 * params.delta_v);
}

namespace {

double ari_over_pairs(const std::vector<std::pair<int32_t, int32_t>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("ari: empty labelings");
  std::map<std::pair<int32_t, int32_t>, int64_t> contingency;
  std::map<int32_t, int64_t> row, col;
  for (const auto& [a, b] : pairs) {
    ++contingency[{a, b}];
    ++row[a];
    ++col[b];
  }
  auto comb2 = [](int64_t v) { return 0.5 * double(v) * double(v - 1); };
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, v] : contingency) sum_ij += comb2(v);
  for (const auto& [key, v] : row) sum_a += comb2(v);
  for (const auto& [key, v] : col) sum_b += comb2(v);
  const double total = comb2(static_cast<int64_t>(pairs.size()));
  const double expected = sum_a * sum_b / total;
  const double maxidx = 0.5 * (sum_a + sum_b);
  if (maxidx == expected) return 1.0;  // both partitions trivial
  return (sum_ij - expected) / (maxidx - expected);
}

}  // namespace

double adjusted_rand_index(const InstanceLabeling& pred, const InstanceLabeling& gt) {
  if (pred.size != gt.size) throw std::invalid_argument("ari: label grids differ in size");
  std::vector<std::pair<int32_t, int32_t>> pairs;
  pairs.reserve(static_cast<size_t>(pred.numel()));
  for (int64_t i = 0; i < pred.numel(); ++i)
    pairs.emplace_back(pred.ids[static_cast<size_t>(i)], gt.ids[static_cast<size_t>(i)]);
  return ari_over_pairs(pairs);
}

double foreground_ari(const InstanceLabeling& pred, const InstanceLabeling& gt) {
  if (pred.size != gt.size) throw std::invalid_argument("ari: label grids differ in size");
  std::vector<std::pair<int32_t, int32_t>> pairs;
  for (int64_t i = 0; i < pred.numel(); ++i)
    if (gt.ids[static_cast<size_t>(i)] > 0)
      pairs.emplace_back(pred.ids[static_cast<size_t>(i)], gt.ids[static_cast<size_t>(i)]);
  return ari_over_pairs(pairs);
}

}  // namespace eqnet
