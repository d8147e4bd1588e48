#include "eqnet/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "eqnet/constructions.hpp"
#include "eqnet/equivariance.hpp"
#include "eqnet/ops.hpp"
#include "eqnet/render.hpp"
#include "eqnet/rng.hpp"

namespace eqnet {

namespace fs = std::filesystem;
using nlohmann::json;

UNetSpec showcase_spec(const ShowcaseConfig& cfg) {
  UNetSpec spec;
  spec.d = 2;
  spec.levels = cfg.levels;
  spec.factor = 2;
  spec.convs_per_block = cfg.convs_per_block;
  spec.kernel_size = cfg.kernel_size;
  spec.channels = UNetSpec::default_channels(cfg.levels, cfg.channel_base);
  spec.padding = ops::Padding::valid;
  spec.upsampling = cfg.upsampling;
  spec.in_channels = 1;
  spec.out_channels = 3;
  return spec;
}

InstanceLabeling region_labels(const InstanceLabeling& full, const std::vector<int64_t>& margin,
                               const std::vector<int64_t>& region) {
  InstanceLabeling out(region);
  const int64_t W = full.size[1];
  for (int64_t y = 0; y < region[0]; ++y)
    for (int64_t x = 0; x < region[1]; ++x)
      out.ids[static_cast<size_t>(y * region[1] + x)] =
          full.ids[static_cast<size_t>((margin[0] + y) * W + margin[1] + x)];
  return out;
}

bool embeddings_periodic(const Tensor& emb, int64_t offset) {
  for (int axis = 0; axis < 2; ++axis) {
    ShiftVector delta = {axis == 0 ? offset : 0, axis == 1 ? offset : 0};
    if (!compare_shifted(emb, emb, delta).equal) return false;
  }
  return true;
}

int64_t clusters_among_instances(const InstanceLabeling& predicted, const InstanceLabeling& gt) {
  std::set<int32_t> ids;
  for (int64_t i = 0; i < gt.numel(); ++i)
    if (gt.ids[static_cast<size_t>(i)] > 0 && predicted.ids[static_cast<size_t>(i)] > 0)
      ids.insert(predicted.ids[static_cast<size_t>(i)]);
  return static_cast<int64_t>(ids.size());
}

ShowcaseResult run_capacity_showcase(const ShowcaseConfig& cfg) {
  ShowcaseResult res;
  res.config = cfg;
  res.spec = showcase_spec(cfg);
  const UNetSpec& spec = res.spec;
  const int64_t fl = spec.grid_period();
  res.fdl = fl * fl;

  const int64_t rf = receptive_field_edge(spec);
  int64_t region = cfg.train_window;
  while (region < cfg.eval_region_min) region += fl;
  const int64_t canvas = region + rf - 1;

  DiskSceneSpec scene_spec;
  scene_spec.size = {std::max(cfg.train_canvas, canvas), std::max(cfg.train_canvas, canvas)};
  scene_spec.spacing = cfg.spacing;
  scene_spec.radius = cfg.radius;
  scene_spec.seed = cfg.seed;
  DiskScene scene = disk_grid(scene_spec);

  DiskSceneSpec eval_spec = scene_spec;
  eval_spec.size = {canvas, canvas};
  DiskScene eval_scene = disk_grid(eval_spec);

  UNetInstance start = build_unet(spec, Init::random, cfg.seed);

  TrainConfig tc;
  tc.steps = cfg.steps;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.out_window = cfg.train_window;
  tc.noise_sigma = cfg.noise_sigma;
  tc.elastic = cfg.elastic;
  tc.deform = cfg.deform;
  tc.loss = cfg.loss;
  TrainResult tr = train(start, scene, tc);
  res.trained = std::move(tr.instance);
  res.adam = std::move(tr.adam);
  res.trace = std::move(tr.trace);

  const int64_t head = std::min<int64_t>(50, static_cast<int64_t>(res.trace.size()));
  for (int64_t i = 0; i < head; ++i) res.initial_pull += res.trace[static_cast<size_t>(i)].pull / double(head);
  for (int64_t i = 0; i < head; ++i)
    res.final_pull += res.trace[res.trace.size() - 1 - static_cast<size_t>(i)].pull / double(head);

  // test-time image, with the augmentation regenerated
  res.eval_image = eval_scene.image;
  InstanceLabeling eval_labels = eval_scene.labels;
  if (cfg.elastic) {
    DeformParams dp = cfg.deform;
    dp.seed = cfg.seed * 7919 + 13;
    DeformResult dr = elastic_deform(res.eval_image, eval_labels, dp);
    res.eval_image = std::move(dr.image);
    eval_labels = std::move(dr.labels);
  }
  if (cfg.noise_sigma > 0.0)
    res.eval_image = add_gaussian_noise(res.eval_image, cfg.noise_sigma, cfg.seed * 7919 + 17);

  TileLayout layout =
      plan_tiles(spec, {canvas, canvas}, cfg.train_window, CropRule::to_multiple, 0);
  res.eval_embedding = stitch_predict(res.trained, res.eval_image, layout);

  const int64_t margin = (rf - 1) / 2;
  res.ground_truth = region_labels(eval_labels, {margin, margin}, layout.region);
  res.predicted = infer_labels(res.eval_embedding, cfg.loss);
  res.ari = foreground_ari(res.predicted, res.ground_truth);
  res.clusters_among_instances = clusters_among_instances(res.predicted, res.ground_truth);
  res.capacity_bound_ok = res.clusters_among_instances <= res.fdl;

  if (cfg.spacing % fl == 0) {
    res.checked_periodic = true;
    res.periodic_embeddings_ok = embeddings_periodic(res.eval_embedding, cfg.spacing);
  }

  // embedding geometry diagnostics over ground-truth disks
  {
    const int64_t E = spec.out_channels;
    const int32_t K = res.ground_truth.max_id();
    std::vector<std::vector<double>> centroid(static_cast<size_t>(K) + 1,
                                              std::vector<double>(static_cast<size_t>(E), 0.0));
    std::vector<int64_t> cnt(static_cast<size_t>(K) + 1, 0);
    for (int64_t i = 0; i < res.ground_truth.numel(); ++i) {
      const int32_t id = res.ground_truth.ids[static_cast<size_t>(i)];
      if (id == 0) continue;
      ++cnt[static_cast<size_t>(id)];
      for (int64_t e = 0; e < E; ++e)
        centroid[static_cast<size_t>(id)][static_cast<size_t>(e)] +=
            res.eval_embedding.data[static_cast<size_t>(i * E + e)];
    }
    for (int32_t k = 1; k <= K; ++k)
      if (cnt[static_cast<size_t>(k)] > 0)
        for (int64_t e = 0; e < E; ++e)
          centroid[static_cast<size_t>(k)][static_cast<size_t>(e)] /= double(cnt[static_cast<size_t>(k)]);
    double spread = 0.0;
    int64_t spread_n = 0;
    for (int64_t i = 0; i < res.ground_truth.numel(); ++i) {
      const int32_t id = res.ground_truth.ids[static_cast<size_t>(i)];
      if (id == 0) continue;
      double r2 = 0.0;
      for (int64_t e = 0; e < E; ++e) {
        const double dv = res.eval_embedding.data[static_cast<size_t>(i * E + e)] -
                          centroid[static_cast<size_t>(id)][static_cast<size_t>(e)];
        r2 += dv * dv;
      }
      spread += r2;
      ++spread_n;
    }
    res.mean_within_spread = spread_n > 0 ? std::sqrt(spread / double(spread_n)) : 0.0;
    double min_gap = -1.0;
    for (int32_t a = 1; a <= K; ++a)
      for (int32_t b = a + 1; b <= K; ++b) {
        if (cnt[static_cast<size_t>(a)] == 0 || cnt[static_cast<size_t>(b)] == 0) continue;
        double r2 = 0.0;
        for (int64_t e = 0; e < E; ++e) {
          const double dv = centroid[static_cast<size_t>(a)][static_cast<size_t>(e)] -
                            centroid[static_cast<size_t>(b)][static_cast<size_t>(e)];
          r2 += dv * dv;
        }
        if (min_gap < 0.0 || r2 < min_gap) min_gap = r2;
      }
    res.min_centroid_gap = min_gap > 0.0 ? std::sqrt(min_gap) : 0.0;
  }
  return res;
}

StitchMismatch stitched_mismatch_uncropped(const UNetInstance& inst, const Tensor& image, int64_t w) {
  TileLayout layout =
      plan_tiles(inst.spec, ops::spatial_shape(image), w, CropRule::none, 0);
  ConsistencyReport report = consistency_check(inst, image, layout);
  return {report.max_abs_diff, report.mismatch_count};
}

// ---------------------------------------------------------------------------
// named experiments
// ---------------------------------------------------------------------------

namespace {

struct Checks {
  std::vector<std::pair<std::string, bool>> items;
  void add(const std::string& name, bool ok) { items.emplace_back(name, ok); }
  bool all() const {
    for (const auto& [n, ok] : items)
      if (!ok) return false;
    return true;
  }
};

void write_summary(const fs::path& dir, const std::string& name, const Checks& checks) {
  std::ofstream os(dir / "summary.txt");
  os << "experiment: " << name << "\n";
  for (const auto& [label, ok] : checks.items) os << (ok ? "[PASS] " : "[FAIL] ") << label << "\n";
  os << (checks.all() ? "RESULT: PASS" : "RESULT: FAIL") << "\n";
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  os << j.dump(2) << "\n";
}

json report_to_json(const EquivarianceReport& r) {
  json shifts = json::array();
  for (const auto& s : r.shifts)
    shifts.push_back(json{{"delta", s.delta},
                          {"equal", s.equal},
                          {"max_abs_diff", s.max_abs_diff},
                          {"compared", s.compared}});
  return json{{"instance", r.instance_id}, {"t", r.t},          {"probe", r.probe_kind},
              {"probe_seed", r.probe_seed}, {"shifts", shifts}, {"all_equal", r.all_equal}};
}

UNetSpec construction_spec(int d, int levels, int convs, int kernel, Upsampling up,
                           ops::Padding pad = ops::Padding::valid) {
  UNetSpec spec;
  spec.d = d;
  spec.levels = levels;
  spec.factor = 2;
  spec.convs_per_block = convs;
  spec.kernel_size = kernel;
  spec.channels = std::vector<int64_t>(static_cast<size_t>(levels) + 1, 1);
  spec.padding = pad;
  spec.upsampling = up;
  spec.in_channels = 1;
  spec.out_channels = 1;
  return spec;
}

ShowcaseConfig showcase_from_config(const json& cfg, uint64_t seed) {
  ShowcaseConfig sc;
  sc.seed = seed;
  if (cfg.contains("spacing")) sc.spacing = cfg["spacing"].get<int64_t>();
  if (cfg.contains("steps")) sc.steps = cfg["steps"].get<int64_t>();
  if (cfg.contains("lr")) sc.lr = cfg["lr"].get<double>();
  if (cfg.contains("noise_sigma")) sc.noise_sigma = cfg["noise_sigma"].get<double>();
  if (cfg.contains("elastic")) sc.elastic = cfg["elastic"].get<bool>();
  if (cfg.contains("levels")) sc.levels = cfg["levels"].get<int>();
  if (cfg.contains("channel_base")) sc.channel_base = cfg["channel_base"].get<int64_t>();
  if (cfg.contains("train_window")) sc.train_window = cfg["train_window"].get<int64_t>();
  if (cfg.contains("train_canvas")) sc.train_canvas = cfg["train_canvas"].get<int64_t>();
  if (cfg.contains("eval_region_min")) sc.eval_region_min = cfg["eval_region_min"].get<int64_t>();
  if (cfg.contains("delta_d")) sc.loss.delta_d = cfg["delta_d"].get<double>();
  if (cfg.contains("upsampling"))
    sc.upsampling = cfg["upsampling"].get<std::string>() == "fixed" ? Upsampling::fixed
                                                                    : Upsampling::learnt;
  return sc;
}

}  // namespace

ShowcaseConfig showcase_config_from_file(const std::string& config_path, uint64_t seed) {
  json cfg = json::object();
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw std::runtime_error("cannot open config: " + config_path);
    cfg = json::parse(is);
  }
  return showcase_from_config(cfg, seed);
}

namespace {

json showcase_to_json(const ShowcaseResult& r) {
  return json{{"ari", r.ari},
              {"clusters_among_instances", r.clusters_among_instances},
              {"fdl", r.fdl},
              {"capacity_bound_ok", r.capacity_bound_ok},
              {"checked_periodic", r.checked_periodic},
              {"periodic_embeddings_ok", r.periodic_embeddings_ok},
              {"initial_pull", r.initial_pull},
              {"final_pull", r.final_pull},
              {"mean_within_spread", r.mean_within_spread},
              {"min_centroid_gap", r.min_centroid_gap},
              {"spacing", r.config.spacing},
              {"steps", r.config.steps},
              {"seed", r.config.seed},
              {"upsampling", r.config.upsampling == Upsampling::fixed ? "fixed" : "learnt"}};
}

int experiment_lemma1(const fs::path& out, uint64_t /*seed*/) {
  Checks checks;
  {
    UNetSpec spec = construction_spec(1, 3, 1, 3, Upsampling::fixed);
    UNetInstance inst = lemma1_instance(spec);
    auto probe = make_probe(spec, "diagonal", spec.grid_period(), spec.grid_period() - 1, 0);
    auto res = count_relative_distinct(inst, {probe});
    checks.add("d=1 l=3 f=2 relative-distinct count == 8 (got " + std::to_string(res.count) + ")",
               res.count == 8);
    write_json(out / "lemma1_d1_l3.json",
               json{{"count", res.count}, {"phase_class", res.phase_class}});
  }
  {
    UNetSpec spec = construction_spec(2, 2, 1, 3, Upsampling::fixed);
    UNetInstance inst = lemma1_instance(spec);
    auto probe = make_probe(spec, "diagonal", spec.grid_period(), spec.grid_period() - 1, 0);
    auto res = count_relative_distinct(inst, {probe});
    checks.add("d=2 l=2 f=2 relative-distinct count == 16 (got " + std::to_string(res.count) + ")",
               res.count == 16);
    write_json(out / "lemma1_d2_l2.json",
               json{{"count", res.count}, {"phase_class", res.phase_class}});
    save_instance((out / "lemma1_d2_l2_instance").string(), inst);
  }
  write_summary(out, "lemma1", checks);
  return checks.all() ? 0 : 1;
}

int experiment_prime_id(const fs::path& out, uint64_t /*seed*/) {
  Checks checks;
  UNetSpec spec = construction_spec(2, 4, 1, 1, Upsampling::learnt);
  UNetInstance inst = prime_id_instance(spec);
  const int64_t fl = spec.grid_period();  // 16

  Tensor ones = constant_image({48, 48}, 1.0);
  Tensor outp = forward(inst, ones);

  std::set<double> window_values;
  for (int64_t y = 0; y < fl; ++y)
    for (int64_t x = 0; x < fl; ++x) window_values.insert(outp.data[static_cast<size_t>(y * 48 + x)]);
  checks.add("256 distinct IDs in one f^l period (got " + std::to_string(window_values.size()) + ")",
             static_cast<int64_t>(window_values.size()) == 256);

  checks.add("IDs repeat with period 16 per dim", embeddings_periodic(outp, fl));

  // every value factors into one prime per level
  bool factors_ok = true;
  for (double v : window_values) {
    int64_t value = static_cast<int64_t>(std::llround(v));
    for (int j = 0; j < spec.levels; ++j) {
      const auto level = prime_id_level_primes(spec, j);
      bool divided = false;
      for (int64_t p : level)
        if (value % p == 0) {
          value /= p;
          divided = true;
          break;
        }
      if (!divided) factors_ok = false;
    }
    if (value != 1) factors_ok = false;
  }
  checks.add("each ID is a product of 4 distinct primes, one per level", factors_ok);

  // fixed upsampling cannot produce IDs: constant in -> constant out
  UNetSpec fixed_spec = construction_spec(2, 4, 1, 1, Upsampling::fixed);
  UNetInstance fixed_inst = lemma1_instance(fixed_spec);
  Tensor fixed_out = forward(fixed_inst, ones);
  bool constant = true;
  for (double v : fixed_out.data) constant &= v == fixed_out.data[0];
  checks.add("fixed upsampling maps the constant image to a constant output", constant);

  save_tensor((out / "prime_id_output.eten1").string(), outp);
  render_embedding_png(outp, (out / "prime_id_output.png").string());
  save_instance((out / "prime_id_instance").string(), inst);
  write_json(out / "report.json", json{{"distinct", window_values.size()},
                                       {"period", fl},
                                       {"factors_ok", factors_ok}});
  write_summary(out, "prime-id", checks);
  return checks.all() ? 0 : 1;
}

int experiment_equivariance(const fs::path& out, uint64_t seed) {
  Checks checks;
  json reports = json::array();

  int idx = 0;
  for (Upsampling up : {Upsampling::fixed, Upsampling::learnt}) {
    for (int levels : {2, 3}) {
      UNetSpec spec;
      spec.d = 2;
      spec.levels = levels;
      spec.factor = 2;
      spec.convs_per_block = 2;
      spec.kernel_size = 3;
      spec.channels = UNetSpec::default_channels(levels, 4);
      spec.upsampling = up;
      spec.out_channels = 2;
      UNetInstance inst = build_unet(spec, Init::random, seed + static_cast<uint64_t>(idx));
      const int64_t fl = spec.grid_period();
      auto probe = make_probe(spec, "noise", 2 * fl + 1, 2 * fl, seed + static_cast<uint64_t>(idx));
      auto report = check_periodic_equivariance(inst, probe, fl, {1, 2});
      reports.push_back(report_to_json(report));
      checks.add("random instance (" + inst.id + ", l=" + std::to_string(levels) +
                     ") bit-exact at multiples of f^l",
                 report.all_equal);
      ++idx;
    }
  }

  // the blockwise-max construction is not equivariant below f^l
  UNetSpec lspec = construction_spec(1, 3, 1, 3, Upsampling::fixed);
  UNetInstance linst = lemma1_instance(lspec);
  auto probe = make_probe(lspec, "diagonal", 2 * lspec.grid_period() + 1, 8, 0);
  auto sub = check_periodic_equivariance(linst, probe, 1, {1});
  reports.push_back(report_to_json(sub));
  checks.add("blockwise-max instance mismatches at shift 1", !sub.all_equal);

  write_json(out / "reports.json", reports);
  write_summary(out, "equivariance", checks);
  return checks.all() ? 0 : 1;
}

int experiment_stitch_rules(const fs::path& out, uint64_t /*seed*/) {
  Checks checks;
  json cases = json::array();

  {
    // (a) w == f^l: stitching aligns by construction, but the layout is
    // flagged because neighbors across tile borders are never trained
    // together at this window size
    UNetSpec spec = construction_spec(2, 4, 1, 1, Upsampling::fixed);
    UNetInstance inst = lemma1_instance(spec);
    Tensor img = diagonal_image(2, {48, 48});
    TileLayout layout = plan_tiles(spec, {48, 48}, 16, CropRule::none);
    bool flagged = false;
    for (const auto& f : layout.flags) flagged |= f.find("w == f^l") != std::string::npos;
    auto rep = consistency_check(inst, img, layout);
    checks.add("w=f^l layout carries the undertrained-neighbor flag", flagged);
    checks.add("w=f^l aligned tiles stitch exactly (risk is in training, not assembly)",
               rep.bit_exact);
    render_mismatch_png(rep.diff_map, (out / "case_a_mismatch.png").string());
    cases.push_back(json{{"case", "w=f^l,crop=none"},
                         {"mismatches", rep.mismatch_count},
                         {"max_abs_diff", rep.max_abs_diff},
                         {"flags", layout.flags}});
  }

  UNetSpec spec = construction_spec(2, 4, 2, 3, Upsampling::fixed);
  UNetInstance inst = lemma1_instance(spec);
  const int64_t rf = receptive_field_edge(spec);  // 185
  const int64_t region = 52;
  Tensor img = diagonal_image(2, {region + rf - 1, region + rf - 1});

  {
    // (b) w > f^l but stitched uncropped
    TileLayout layout = plan_tiles(spec, ops::spatial_shape(img), 20, CropRule::none);
    auto rep = consistency_check(inst, img, layout);
    checks.add("w=20 uncropped stitching mismatches (got " + std::to_string(rep.mismatch_count) + ")",
               rep.mismatch_count > 0);
    render_mismatch_png(rep.diff_map, (out / "case_b_mismatch.png").string());
    cases.push_back(json{{"case", "w=20,crop=none"},
                         {"mismatches", rep.mismatch_count},
                         {"max_abs_diff", rep.max_abs_diff}});
  }
  {
    // (c) w > f^l cropped to f^l multiples: exact
    TileLayout layout = plan_tiles(spec, ops::spatial_shape(img), 20, CropRule::to_multiple, 1);
    auto rep = consistency_check(inst, img, layout);
    checks.add("w=20 cropped to 16 stitches bit-exactly", rep.bit_exact);
    render_mismatch_png(rep.diff_map, (out / "case_c_mismatch.png").string());
    cases.push_back(json{{"case", "w=20,crop=16"},
                         {"mismatches", rep.mismatch_count},
                         {"max_abs_diff", rep.max_abs_diff}});
  }

  write_json(out / "report.json", cases);
  write_summary(out, "stitch-rules", checks);
  return checks.all() ? 0 : 1;
}

int experiment_capacity(const fs::path& out, const json& cfg, uint64_t seed) {
  Checks checks;
  json report = json::array();

  ShowcaseConfig base = showcase_from_config(cfg, seed);
  for (int64_t spacing : {int64_t{15}, int64_t{16}}) {
    ShowcaseConfig sc = base;
    sc.spacing = spacing;
    ShowcaseResult r = run_capacity_showcase(sc);
    report.push_back(showcase_to_json(r));
    const std::string tag = "spacing-" + std::to_string(spacing);
    checks.add(tag + " capacity bound: clusters " + std::to_string(r.clusters_among_instances) +
                   " <= " + std::to_string(r.fdl),
               r.capacity_bound_ok);
    if (spacing % 8 == 0) {
      checks.add(tag + " embeddings bit-identical at one-spacing offsets", r.periodic_embeddings_ok);
      checks.add(tag + " ARI < 0.5 (got " + std::to_string(r.ari) + ")", r.ari < 0.5);
    } else {
      checks.add(tag + " ARI >= 0.9 (got " + std::to_string(r.ari) + ")", r.ari >= 0.9);
    }
    render_embedding_png(r.eval_embedding, (out / (tag + "_embedding.png")).string());
    render_labels_png(r.predicted, (out / (tag + "_labels.png")).string());
    render_labels_png(r.ground_truth, (out / (tag + "_gt.png")).string());
    save_tensor((out / (tag + "_embedding.eten1")).string(), r.eval_embedding);
    write_loss_csv((out / (tag + "_loss.csv")).string(), r.trace);
    save_checkpoint((out / (tag + "_checkpoint")).string(), r.trained, r.adam);
  }

  write_json(out / "report.json", report);
  write_summary(out, "capacity-15-vs-16", checks);
  return checks.all() ? 0 : 1;
}

int experiment_rescue(const fs::path& out, const json& cfg, uint64_t seed, bool elastic) {
  Checks checks;
  ShowcaseConfig sc = showcase_from_config(cfg, seed);
  sc.spacing = 16;
  if (elastic)
    sc.elastic = true;
  else if (sc.noise_sigma == 0.0)
    sc.noise_sigma = 0.02;

  ShowcaseResult r = run_capacity_showcase(sc);
  const std::string tag = elastic ? "deform" : "noise";
  checks.add(tag + "-rescue ARI >= 0.85 (got " + std::to_string(r.ari) + ")", r.ari >= 0.85);
  checks.add("capacity bound holds", r.capacity_bound_ok);

  // the rescue does not fix uncropped stitching
  StitchMismatch sm = stitched_mismatch_uncropped(r.trained, r.eval_image, 52);
  checks.add("uncropped w=52 stitching still mismatches (max diff " +
                 std::to_string(sm.max_abs_diff) + ")",
             sm.mismatch_count > 0);

  render_embedding_png(r.eval_embedding, (out / "embedding.png").string());
  render_labels_png(r.predicted, (out / "labels.png").string());
  write_loss_csv((out / "loss.csv").string(), r.trace);
  write_json(out / "report.json",
             json{{"showcase", showcase_to_json(r)},
                  {"uncropped_w52_mismatches", sm.mismatch_count},
                  {"uncropped_w52_max_abs_diff", sm.max_abs_diff}});
  write_summary(out, elastic ? "deform-rescue" : "noise-rescue", checks);
  return checks.all() ? 0 : 1;
}

int experiment_zero_pad(const fs::path& out, uint64_t seed) {
  Checks checks;

  {
    // receptive field larger than the image: every output sees a unique
    // zero-padding pattern, a constant input maps to pairwise distinct outputs
    UNetSpec spec = construction_spec(2, 2, 2, 3, Upsampling::fixed, ops::Padding::zero);
    spec.channels = UNetSpec::default_channels(2, 8);
    spec.out_channels = 3;
    UNetInstance inst = build_unet(spec, Init::random, seed);
    Tensor ones = constant_image({8, 8}, 1.0);
    Tensor outp = forward(inst, ones);
    std::set<std::vector<double>> values;
    for (int64_t p = 0; p < 64; ++p)
      values.insert(std::vector<double>(outp.data.begin() + p * 3, outp.data.begin() + (p + 1) * 3));
    checks.add("zero padding, rf >= image: 64 distinct outputs on a constant image (got " +
                   std::to_string(values.size()) + ")",
               static_cast<int64_t>(values.size()) == 64);
    save_tensor((out / "zero_pad_large_rf.eten1").string(), outp);
  }
  {
    // receptive field too small: same-phase interior pixels receive equal outputs
    UNetSpec spec = construction_spec(2, 1, 1, 3, Upsampling::fixed, ops::Padding::zero);
    spec.channels = UNetSpec::default_channels(1, 4);
    UNetInstance inst = build_unet(spec, Init::random, seed + 1);
    Tensor ones = constant_image({32, 32}, 1.0);
    Tensor outp = forward(inst, ones);  // rf = 9
    const bool equal_interior =
        outp.data[static_cast<size_t>((12 * 32 + 12))] == outp.data[static_cast<size_t>((14 * 32 + 14))];
    checks.add("zero padding, rf < image: same-phase interior pixels coincide", equal_interior);
  }
  {
    // zero padding breaks periodic-f^l equivariance
    UNetSpec spec = construction_spec(2, 2, 2, 3, Upsampling::fixed, ops::Padding::zero);
    spec.channels = UNetSpec::default_channels(2, 4);
    UNetInstance inst = build_unet(spec, Init::random, seed + 2);
    auto probe = make_probe(spec, "noise", 12, 4, seed + 2);
    auto report = check_periodic_equivariance(inst, probe, spec.grid_period(), {1});
    checks.add("zero padding mismatches at shift f^l", !report.all_equal);
    write_json(out / "zero_pad_equivariance.json", report_to_json(report));
  }
  {
    // zero padding mismatches under stitching regardless of the crop rule
    UNetSpec spec = construction_spec(2, 2, 1, 3, Upsampling::fixed, ops::Padding::zero);
    spec.channels = UNetSpec::default_channels(2, 4);
    UNetInstance inst = build_unet(spec, Init::random, seed + 3);
    Tensor img = diagonal_image(2, {24, 24});
    TileLayout layout = plan_tiles(spec, {24, 24}, 8, CropRule::to_multiple, 0);
    auto rep = consistency_check(inst, img, layout);
    checks.add("zero padding stitching mismatches despite the crop rule", rep.mismatch_count > 0);
    render_mismatch_png(rep.diff_map, (out / "zero_pad_mismatch.png").string());
  }

  write_summary(out, "zero-pad-location", checks);
  return checks.all() ? 0 : 1;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "lemma1",       "prime-id",      "equivariance",  "stitch-rules",
      "capacity-15-vs-16", "noise-rescue", "deform-rescue", "zero-pad-location"};
  return names;
}

int run_experiment(const std::string& name, const std::string& config_path,
                   const std::string& out_dir, uint64_t seed) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw std::invalid_argument("unknown experiment '" + name + "'");

  json cfg = json::object();
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw std::runtime_error("cannot open config: " + config_path);
    cfg = json::parse(is);
    if (cfg.contains("schema_version") && cfg["schema_version"].get<int>() != 1)
      throw std::runtime_error("config: unsupported schema_version");
  }

  fs::path out(out_dir);
  fs::create_directories(out);

  if (name == "lemma1") return experiment_lemma1(out, seed);
  if (name == "prime-id") return experiment_prime_id(out, seed);
  if (name == "equivariance") return experiment_equivariance(out, seed);
  if (name == "stitch-rules") return experiment_stitch_rules(out, seed);
  if (name == "capacity-15-vs-16") return experiment_capacity(out, cfg, seed);
  if (name == "noise-rescue") return experiment_rescue(out, cfg, seed, false);
  if (name == "deform-rescue") return experiment_rescue(out, cfg, seed, true);
  return experiment_zero_pad(out, seed);
}

}  // namespace eqnet
