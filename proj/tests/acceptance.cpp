// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eqnet/autodiff.hpp"
#include "eqnet/constructions.hpp"
#include "eqnet/equivariance.hpp"
#include "eqnet/experiments.hpp"
#include "eqnet/metric.hpp"
#include "eqnet/rng.hpp"
#include "eqnet/synthdata.hpp"
#include "eqnet/tiling.hpp"
#include "eqnet/unet.hpp"

using namespace eqnet;

namespace {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string details;
  double seconds = 0.0;
};

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

UNetSpec make_spec(int d, int levels, int convs, int kernel, Upsampling up, int64_t base,
                   ops::Padding pad = ops::Padding::valid, int64_t out_ch = 1) {
  UNetSpec spec;
  spec.d = d;
  spec.levels = levels;
  spec.factor = 2;
  spec.convs_per_block = convs;
  spec.kernel_size = kernel;
  spec.channels = UNetSpec::default_channels(levels, base);
  spec.padding = pad;
  spec.upsampling = up;
  spec.out_channels = out_ch;
  return spec;
}

UNetSpec unit_spec(int d, int levels, int convs, int kernel, Upsampling up) {
  UNetSpec spec = make_spec(d, levels, convs, kernel, up, 1);
  spec.channels = std::vector<int64_t>(static_cast<size_t>(levels) + 1, 1);
  return spec;
}

// ---------------------------------------------------------------------------
// criterion 1: blockwise-max construction implements f^dl relative-distinct
// functions, witnessed by the diagonal image
// ---------------------------------------------------------------------------
CriterionResult criterion1() {
  CriterionResult r{1, "relative-distinct count of the blockwise-max construction"};
  UNetSpec d1 = unit_spec(1, 3, 1, 3, Upsampling::fixed);
  auto res1 = count_relative_distinct(lemma1_instance(d1),
                                      {make_probe(d1, "diagonal", d1.grid_period(),
                                                  d1.grid_period() - 1, 0)});
  UNetSpec d2 = unit_spec(2, 2, 1, 3, Upsampling::fixed);
  auto res2 = count_relative_distinct(lemma1_instance(d2),
                                      {make_probe(d2, "diagonal", d2.grid_period(),
                                                  d2.grid_period() - 1, 0)});
  r.pass = res1.count == 8 && res2.count == 16;
  std::ostringstream os;
  os << "d=1 l=3: " << res1.count << " (want 8); d=2 l=2: " << res2.count << " (want 16)";
  r.details = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// criterion 2: universal periodic-f^l equivariance; non-equivariance of the
// construction below f^l
// ---------------------------------------------------------------------------
CriterionResult criterion2() {
  CriterionResult r{2, "periodic-f^l equivariance of 20 random instances + shift-1 witness"};
  int equal_count = 0;
  const std::vector<std::pair<int, int>> combos = {{1, 2}, {1, 3}, {2, 2}, {2, 3}};
  for (int i = 0; i < 20; ++i) {
    const Upsampling up = i < 10 ? Upsampling::fixed : Upsampling::learnt;
    const auto [d, levels] = combos[static_cast<size_t>(i) % combos.size()];
    UNetSpec spec = make_spec(d, levels, 2, 3, up, 2);
    UNetInstance inst = build_unet(spec, Init::random, 9000 + static_cast<uint64_t>(i));
    const int64_t fl = spec.grid_period();
    CanvasProbe probe = make_probe(spec, "noise", 2 * fl + 1, 2 * fl, 500 + static_cast<uint64_t>(i));
    if (check_periodic_equivariance(inst, probe, fl, {1, 2}).all_equal) ++equal_count;
  }

  UNetSpec lspec = unit_spec(1, 3, 1, 3, Upsampling::fixed);
  UNetInstance lem = lemma1_instance(lspec);
  CanvasProbe diag = make_probe(lspec, "diagonal", 2 * lspec.grid_period() + 1, 8, 0);
  const bool witness = !check_periodic_equivariance(lem, diag, 1, {1}).all_equal;

  r.pass = equal_count == 20 && witness;
  std::ostringstream os;
  os << equal_count << "/20 instances bit-exact at {f^l, 2f^l}; shift-1 mismatch witness "
     << (witness ? "found" : "missing");
  r.details = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// criterion 4: prime-ID location awareness on a constant image
// ---------------------------------------------------------------------------
CriterionResult criterion4() {
  CriterionResult r{4, "prime-ID instance assigns 256 periodic unique IDs to a constant image"};
  UNetSpec spec = unit_spec(2, 4, 1, 1, Upsampling::learnt);
  UNetInstance inst = prime_id_instance(spec);
  Tensor out = forward(inst, constant_image({48, 48}, 1.0));
  const int64_t fl = spec.grid_period();  // 16

  std::set<double> vals;
  for (int64_t y = 0; y < fl; ++y)
    for (int64_t x = 0; x < fl; ++x) vals.insert(out.data[static_cast<size_t>(y * 48 + x)]);

  const bool periodic = embeddings_periodic(out, fl);

  bool factors_ok = true;
  for (double v : vals) {
    int64_t value = static_cast<int64_t>(std::llround(v));
    int distinct_primes = 0;
    for (int j = 0; j < spec.levels; ++j) {
      bool hit = false;
      for (int64_t p : prime_id_level_primes(spec, j))
        if (value % p == 0) {
          value /= p;
          hit = true;
          ++distinct_primes;
          break;
        }
      factors_ok &= hit;
    }
    factors_ok &= value == 1 && distinct_primes == 4;
  }

  r.pass = vals.size() == 256 && periodic && factors_ok;
  std::ostringstream os;
  os << vals.size() << "/256 distinct IDs, period-16 " << (periodic ? "ok" : "broken")
     << ", 4-prime factorization " << (factors_ok ? "ok" : "broken");
  r.details = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// criterion 5: stitching rules
// ---------------------------------------------------------------------------
CriterionResult criterion5() {
  CriterionResult r{5, "crop-rule stitching is bit-exact; uncropped w=f^l+4 and w=52 mismatch"};
  Rng rng(1717);
  int exact = 0;
  for (int i = 0; i < 10; ++i) {
    const int levels = i % 2 == 0 ? 2 : 3;
    UNetSpec spec = make_spec(2, levels, 2, 3, i % 4 < 2 ? Upsampling::fixed : Upsampling::learnt, 2);
    UNetInstance inst = build_unet(spec, Init::random, rng.next_u64());
    const int64_t fl = spec.grid_period();
    const int64_t w = levels == 2 ? 8 : 12;
    const int64_t region = w + fl * (1 + i % 3);
    const int64_t img = region + receptive_field_edge(spec) - 1;
    Tensor image({img, img, 1});
    for (auto& v : image.data) v = rng.uniform(0.0, 1.0);
    TileLayout layout = plan_tiles(spec, {img, img}, w, CropRule::to_multiple, 0);
    if (consistency_check(inst, image, layout).bit_exact) ++exact;
  }

  // blockwise-max instance, l=3, w = f^l + 4 = 12, uncropped
  UNetSpec l3 = unit_spec(2, 3, 2, 3, Upsampling::fixed);
  UNetInstance lem3 = lemma1_instance(l3);
  const int64_t img3 = 28 + receptive_field_edge(l3) - 1;
  Tensor diag3 = diagonal_image(2, {img3, img3});
  auto rep3 = consistency_check(lem3, diag3,
                                plan_tiles(l3, {img3, img3}, 12, CropRule::none));

  // l=4, w = 52 = 3*2^4 + 4, uncropped
  UNetSpec l4 = unit_spec(2, 4, 2, 3, Upsampling::fixed);
  UNetInstance lem4 = lemma1_instance(l4);
  const int64_t img4 = 108 + receptive_field_edge(l4) - 1;
  Tensor diag4 = diagonal_image(2, {img4, img4});
  auto rep4 = consistency_check(lem4, diag4,
                                plan_tiles(l4, {img4, img4}, 52, CropRule::none));

  r.pass = exact == 10 && rep3.mismatch_count > 0 && rep4.mismatch_count > 0;
  std::ostringstream os;
  os << exact << "/10 random instances bit-exact with the crop rule; w=12 uncropped mismatches: "
     << rep3.mismatch_count << "; w=52 uncropped mismatches: " << rep4.mismatch_count;
  r.details = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// criteria 6-8: training showcases (seed-pinned)
// ---------------------------------------------------------------------------
struct ShowcaseSet {
  std::vector<ShowcaseResult> spacing15_learnt, spacing15_fixed;
  std::vector<ShowcaseResult> spacing16;
  std::vector<ShowcaseResult> noise, deform;
  StitchMismatch stitch_noise, stitch_deform;
};

ShowcaseConfig showcase_base(uint64_t seed) {
  ShowcaseConfig cfg;
  cfg.seed = seed;
  cfg.steps = 8000;
  cfg.train_window = 28;
  cfg.train_canvas = 164;
  cfg.eval_region_min = 44;
  cfg.channel_base = 10;
  return cfg;
}

StitchMismatch trained_uncropped_w52(const ShowcaseResult& run, uint64_t seed) {
  // larger periodic scene so that a second, off-grid w=52 tile exists
  const int64_t region = 108;
  const int64_t canvas = region + receptive_field_edge(run.spec) - 1;
  DiskSceneSpec ds;
  ds.size = {canvas, canvas};
  ds.spacing = run.config.spacing;
  ds.radius = run.config.radius;
  DiskScene scene = disk_grid(ds);
  Tensor image = scene.image;
  if (run.config.elastic) {
    DeformParams dp = run.config.deform;
    dp.seed = seed;
    InstanceLabeling labels = scene.labels;
    image = elastic_deform(image, labels, dp).image;
  }
  if (run.config.noise_sigma > 0.0) image = add_gaussian_noise(image, run.config.noise_sigma, seed);
  return stitched_mismatch_uncropped(run.trained, image, 52);
}

ShowcaseSet run_showcases() {
  ShowcaseSet set;
  const std::vector<uint64_t> seeds = {1, 2, 3};
  for (uint64_t seed : seeds) {
    ShowcaseConfig cfg = showcase_base(seed);
    cfg.spacing = 15;
    cfg.upsampling = Upsampling::learnt;
    set.spacing15_learnt.push_back(run_capacity_showcase(cfg));
    std::cerr << "  [showcase] spacing15 learnt seed " << seed << ": ARI "
              << set.spacing15_learnt.back().ari << "\n";
  }
  for (uint64_t seed : seeds) {
    ShowcaseConfig cfg = showcase_base(seed);
    cfg.spacing = 15;
    cfg.upsampling = Upsampling::fixed;
    set.spacing15_fixed.push_back(run_capacity_showcase(cfg));
    std::cerr << "  [showcase] spacing15 fixed seed " << seed << ": ARI "
              << set.spacing15_fixed.back().ari << "\n";
  }
  for (uint64_t seed : seeds) {
    ShowcaseConfig cfg = showcase_base(seed);
    cfg.spacing = 16;
    cfg.upsampling = Upsampling::learnt;
    set.spacing16.push_back(run_capacity_showcase(cfg));
    std::cerr << "  [showcase] spacing16 learnt seed " << seed << ": ARI "
              << set.spacing16.back().ari << "\n";
  }
  for (uint64_t seed : seeds) {
    ShowcaseConfig cfg = showcase_base(seed);
    cfg.spacing = 16;
    cfg.upsampling = Upsampling::learnt;
    cfg.noise_sigma = 0.02;
    set.noise.push_back(run_capacity_showcase(cfg));
    std::cerr << "  [showcase] noise rescue seed " << seed << ": ARI " << set.noise.back().ari
              << "\n";
  }
  for (uint64_t seed : seeds) {
    ShowcaseConfig cfg = showcase_base(seed);
    cfg.spacing = 16;
    cfg.upsampling = Upsampling::learnt;
    cfg.elastic = true;
    set.deform.push_back(run_capacity_showcase(cfg));
    std::cerr << "  [showcase] deform rescue seed " << seed << ": ARI " << set.deform.back().ari
              << "\n";
  }
  set.stitch_noise = trained_uncropped_w52(set.noise.front(), 901);
  set.stitch_deform = trained_uncropped_w52(set.deform.front(), 902);
  return set;
}

int count_at_least(const std::vector<ShowcaseResult>& runs, double threshold) {
  int n = 0;
  for (const auto& r : runs)
    if (r.ari >= threshold) ++n;
  return n;
}

std::string ari_list(const std::vector<ShowcaseResult>& runs) {
  std::ostringstream os;
  os.precision(3);
  for (size_t i = 0; i < runs.size(); ++i) os << (i ? "/" : "") << runs[i].ari;
  return os.str();
}

CriterionResult criterion6(const ShowcaseSet& set, double per_seed_minutes) {
  CriterionResult r{6, "co-prime spacing 15: ARI >= 0.9 in >= 2 of 3 seeds, both upsamplings"};
  const int learnt_ok = count_at_least(set.spacing15_learnt, 0.9);
  const int fixed_ok = count_at_least(set.spacing15_fixed, 0.9);
  r.pass = learnt_ok >= 2 && fixed_ok >= 2 && per_seed_minutes <= 20.0;
  std::ostringstream os;
  os << "learnt ARI " << ari_list(set.spacing15_learnt) << " (" << learnt_ok
     << "/3 over 0.9); fixed ARI " << ari_list(set.spacing15_fixed) << " (" << fixed_ok
     << "/3 over 0.9); " << per_seed_minutes << " min/seed";
  r.details = os.str();
  return r;
}

CriterionResult criterion7(const ShowcaseSet& set) {
  CriterionResult r{7, "multiple spacing 16: embeddings forced equal, clustering collapses"};
  bool periodic = true;
  for (const auto& run : set.spacing16) periodic &= run.checked_periodic && run.periodic_embeddings_ok;
  int low = 0;
  for (const auto& run : set.spacing16)
    if (run.ari < 0.5) ++low;
  r.pass = periodic && low >= 2;
  std::ostringstream os;
  os << "bit-identical embeddings at one-spacing offsets: " << (periodic ? "3/3" : "violated")
     << "; ARI " << ari_list(set.spacing16) << " (" << low << "/3 below 0.5)";
  r.details = os.str();
  return r;
}

CriterionResult criterion8(const ShowcaseSet& set) {
  CriterionResult r{8, "noise/deformation rescue reaches ARI >= 0.85 yet w=52 stitching stays broken"};
  const int noise_ok = count_at_least(set.noise, 0.85);
  const int deform_ok = count_at_least(set.deform, 0.85);
  const bool mismatch = set.stitch_noise.mismatch_count > 0 && set.stitch_deform.mismatch_count > 0;
  r.pass = noise_ok >= 2 && deform_ok >= 2 && mismatch;
  std::ostringstream os;
  os << "noise ARI " << ari_list(set.noise) << " (" << noise_ok << "/3 over 0.85); deform ARI "
     << ari_list(set.deform) << " (" << deform_ok << "/3 over 0.85); uncropped w=52 diffs "
     << set.stitch_noise.max_abs_diff << " / " << set.stitch_deform.max_abs_diff;
  r.details = os.str();
  return r;
}

CriterionResult criterion3(const ShowcaseSet& set) {
  CriterionResult r{3, "capacity bound: clustering never exceeds f^dl same-looking instances"};
  int64_t worst = 0, fdl = 0;
  bool ok = true;
  auto scan = [&](const std::vector<ShowcaseResult>& runs) {
    for (const auto& run : runs) {
      ok &= run.capacity_bound_ok;
      worst = std::max(worst, run.clusters_among_instances);
      fdl = run.fdl;
    }
  };
  scan(set.spacing15_learnt);
  scan(set.spacing15_fixed);
  scan(set.spacing16);
  scan(set.noise);
  scan(set.deform);
  r.pass = ok;
  std::ostringstream os;
  os << "max clusters among same-looking instances " << worst << " <= f^dl = " << fdl << " across "
     << set.spacing15_learnt.size() + set.spacing15_fixed.size() + set.spacing16.size() +
            set.noise.size() + set.deform.size()
     << " clustering runs";
  r.details = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// criterion 9: per-operator shift relations
// ---------------------------------------------------------------------------
CriterionResult criterion9() {
  CriterionResult r{9, "eight operator shift relations hold bit-exactly over 100 trials each"};
  auto report = operator_equivariance_suite(31337, 100);
  r.pass = report.all_pass && report.checks.size() == 8;
  std::ostringstream os;
  for (const auto& c : report.checks)
    os << c.name << " " << (c.trials - c.failures) << "/" << c.trials << "; ";
  r.details = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// criterion 10: gradient correctness
// ---------------------------------------------------------------------------
CriterionResult criterion10() {
  CriterionResult r{10, "finite-difference gradient checks (1e-6; loss at 1e-5)"};
  auto a = grad_check_conv_relu(42);
  auto b = grad_check_maxpool_chain(43);
  auto c = grad_check_unet_one_level(44);

  Rng rng(4242);
  Tensor emb({5, 5, 3});
  for (auto& v : emb.data) v = rng.uniform(-1.5, 1.5);
  InstanceLabeling labels({5, 5});
  for (int64_t i = 0; i < 25; ++i) labels.ids[static_cast<size_t>(i)] = static_cast<int32_t>(i % 3);
  LossParams p;
  Tensor grad;
  discriminative_loss(emb, labels, p, &grad);
  double loss_worst = 0.0;
  const double h = 1e-6;
  for (size_t i = 0; i < emb.data.size(); ++i) {
    Tensor lo = emb, hi = emb;
    lo.data[i] -= h;
    hi.data[i] += h;
    const double fd = (discriminative_loss(hi, labels, p).total -
                       discriminative_loss(lo, labels, p).total) /
                      (2.0 * h);
    loss_worst = std::max(loss_worst, std::fabs(fd - grad.data[i]) /
                                          std::max({1.0, std::fabs(fd), std::fabs(grad.data[i])}));
  }

  r.pass = a.pass && b.pass && c.pass && loss_worst <= 1e-5;
  std::ostringstream os;
  os.precision(3);
  os << "conv+relu " << a.max_rel_err << ", maxpool chain " << b.max_rel_err << ", one-level net "
     << c.max_rel_err << " (tol 1e-6); discriminative loss " << loss_worst << " (tol 1e-5)";
  r.details = os.str();
  return r;
}

}  // namespace

int main() {
  std::vector<CriterionResult> results;
  auto timed = [&](const std::function<CriterionResult()>& fn) {
    const double t0 = now_seconds();
    CriterionResult r = fn();
    r.seconds = now_seconds() - t0;
    std::cerr << "[criterion " << r.id << "] " << (r.pass ? "PASS" : "FAIL") << " in " << r.seconds
              << "s\n";
    results.push_back(r);
  };

  timed(criterion1);
  timed(criterion2);
  timed(criterion4);
  timed(criterion5);
  timed(criterion9);
  timed(criterion10);

  std::cerr << "[showcases] training 15 seed-pinned runs (slow)\n";
  const double t0 = now_seconds();
  ShowcaseSet set = run_showcases();
  const double total_minutes = (now_seconds() - t0) / 60.0;
  const double per_seed_minutes = total_minutes / 15.0;

  timed([&] { return criterion3(set); });
  timed([&] { return criterion6(set, per_seed_minutes); });
  timed([&] { return criterion7(set); });
  timed([&] { return criterion8(set); });

  std::sort(results.begin(), results.end(),
            [](const CriterionResult& a, const CriterionResult& b) { return a.id < b.id; });
  bool all = true;
  for (const auto& r : results) {
    std::printf("[%s] criterion %2d: %s — %s\n", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(),
                r.details.c_str());
    all &= r.pass;
  }
  std::printf("%s\n", all ? "ACCEPTANCE: ALL CRITERIA PASS" : "ACCEPTANCE: FAILURES PRESENT");
  return all ? 0 : 1;
}
