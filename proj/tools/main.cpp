#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "eqnet/constructions.hpp"
#include "eqnet/equivariance.hpp"
#include "eqnet/experiments.hpp"
#include "eqnet/metric.hpp"
#include "eqnet/render.hpp"
#include "eqnet/synthdata.hpp"
#include "eqnet/tiling.hpp"
#include "eqnet/unet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eqnet;

namespace {

struct ConstructArgs {
  std::string kind;
  int d = 2;
  int levels = 2;
  int factor = 2;
  int convs = 1;
  int kernel = 3;
  std::string upsampling = "fixed";
  std::string out = "construct_out";
};

UNetSpec construct_spec(const ConstructArgs& a) {
  UNetSpec spec;
  spec.d = a.d;
  spec.levels = a.levels;
  spec.factor = a.factor;
  spec.convs_per_block = a.convs;
  spec.kernel_size = a.kernel;
  spec.channels = std::vector<int64_t>(static_cast<size_t>(a.levels) + 1, 1);
  spec.upsampling = a.upsampling == "learnt" ? Upsampling::learnt : Upsampling::fixed;
  return spec;
}

json verdicts_to_json(const EquivarianceReport& r) {
  json shifts = json::array();
  for (const auto& s : r.shifts)
    shifts.push_back(json{{"delta", s.delta},
                          {"equal", s.equal},
                          {"max_abs_diff", s.max_abs_diff},
                          {"compared", s.compared}});
  return json{{"instance", r.instance_id}, {"t", r.t},          {"probe", r.probe_kind},
              {"probe_seed", r.probe_seed}, {"shifts", shifts}, {"all_equal", r.all_equal}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shift-equivariance laboratory for encoder-decoder CNNs"};
  app.require_subcommand(1);

  // construct
  ConstructArgs ca;
  auto* construct = app.add_subcommand("construct", "emit a constructed network instance");
  construct->add_option("kind", ca.kind, "lemma1 | prime-id")->required();
  construct->add_option("--d", ca.d);
  construct->add_option("--l", ca.levels);
  construct->add_option("--f", ca.factor);
  construct->add_option("--convs", ca.convs);
  construct->add_option("--k", ca.kernel);
  construct->add_option("--upsampling", ca.upsampling)->check(CLI::IsMember({"fixed", "learnt"}));
  construct->add_option("--out", ca.out);

  // verify equivariance
  std::string v_instance, v_probe = "noise", v_out = "equivariance_report.json";
  int64_t v_t = 0;
  std::vector<int64_t> v_shifts = {1, 2};
  uint64_t v_seed = 1;
  int64_t v_min_output = 0;
  auto* verify = app.add_subcommand("verify", "verification commands");
  auto* veq = verify->add_subcommand("equivariance", "periodic shift equivariance check");
  veq->add_option("--instance", v_instance, "instance manifest or directory")->required();
  veq->add_option("--t", v_t, "candidate period (default f^l)");
  veq->add_option("--shifts", v_shifts, "multiples of t to test")->delimiter(',');
  veq->add_option("--probe", v_probe)->check(CLI::IsMember({"diagonal", "noise", "constant"}));
  veq->add_option("--seed", v_seed);
  veq->add_option("--min-output", v_min_output, "probe output window (default 2*t+1)");
  veq->add_option("--out", v_out);

  // stitch
  std::string s_instance, s_image, s_out = "stitch_out", s_crop = "fl", s_render;
  int64_t s_w = 0;
  auto* stitch = app.add_subcommand("stitch", "tile-and-stitch inference with consistency summary");
  stitch->add_option("--instance", s_instance)->required();
  stitch->add_option("--image", s_image, "input image (ETEN1)")->required();
  stitch->add_option("--w", s_w, "raw output tile edge")->required();
  stitch->add_option("--crop", s_crop)->check(CLI::IsMember({"none", "fl"}));
  stitch->add_option("--render", s_render, "write a mismatch-map PNG here");
  stitch->add_option("--out", s_out);

  // train
  std::string t_config, t_out = "train_out";
  uint64_t t_seed = 1;
  auto* tr = app.add_subcommand("train", "train on synthetic disk scenes");
  tr->add_option("--config", t_config, "showcase config JSON")->required();
  tr->add_option("--seed", t_seed);
  tr->add_option("--out", t_out);

  // infer
  std::string i_instance, i_image, i_out = "infer_out";
  int64_t i_w = 0;
  auto* infer = app.add_subcommand("infer", "predict embeddings and cluster instances");
  infer->add_option("--instance", i_instance)->required();
  infer->add_option("--image", i_image)->required();
  infer->add_option("--w", i_w, "output tile edge for stitching (0: monolithic)");
  infer->add_option("--out", i_out);

  // scene
  int64_t sc_size = 128, sc_spacing = 15, sc_radius = 5;
  std::string sc_out = "scene_out";
  auto* scene_cmd = app.add_subcommand("scene", "generate a periodic disk scene");
  scene_cmd->add_option("--size", sc_size);
  scene_cmd->add_option("--spacing", sc_spacing);
  scene_cmd->add_option("--radius", sc_radius);
  scene_cmd->add_option("--out", sc_out);

  // render
  std::string r_kind, r_input, r_out = "render.png";
  auto* render = app.add_subcommand("render", "render ETEN1 tensors to PNG");
  render->add_option("kind", r_kind, "embedding | labels | mismatch")->required();
  render->add_option("--input", r_input)->required();
  render->add_option("--out", r_out);

  // experiment run <name>
  std::string e_name, e_config, e_out;
  uint64_t e_seed = 1;
  auto* experiment = app.add_subcommand("experiment", "named experiment runner");
  auto* erun = experiment->add_subcommand("run", "run one experiment");
  erun->add_option("name", e_name, "one of the named experiments")->required();
  erun->add_option("--config", e_config);
  erun->add_option("--seed", e_seed);
  erun->add_option("--out", e_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*construct) {
      UNetSpec spec = construct_spec(ca);
      UNetInstance inst;
      if (ca.kind == "lemma1") {
        inst = lemma1_instance(spec);
      } else if (ca.kind == "prime-id") {
        spec.upsampling = Upsampling::learnt;
        inst = prime_id_instance(spec);
      } else {
        std::cerr << "unknown construction '" << ca.kind << "' (want lemma1 or prime-id)\n";
        return 2;
      }
      save_instance(ca.out, inst);
      std::cout << "wrote " << (fs::path(ca.out) / "manifest.json").string() << "\n";
      return 0;
    }

    if (*veq) {
      UNetInstance inst = load_instance(v_instance);
      const int64_t t = v_t > 0 ? v_t : inst.spec.grid_period();
      int64_t max_mult = 1;
      for (int64_t m : v_shifts) max_mult = std::max(max_mult, m);
      const int64_t min_out = v_min_output > 0 ? v_min_output : max_mult * t + 1;
      CanvasProbe probe = make_probe(inst.spec, v_probe, min_out, max_mult * t, v_seed);
      EquivarianceReport report = check_periodic_equivariance(inst, probe, t, v_shifts);
      std::ofstream os(v_out);
      os << verdicts_to_json(report).dump(2) << "\n";
      std::cout << (report.all_equal ? "equivariant" : "mismatch found") << "; report at " << v_out
                << "\n";
      return report.all_equal ? 0 : 1;
    }

    if (*stitch) {
      UNetInstance inst = load_instance(s_instance);
      Tensor image = load_tensor(s_image);
      TileLayout layout =
          plan_tiles(inst.spec, ops::spatial_shape(image), s_w,
                     s_crop == "none" ? CropRule::none : CropRule::to_multiple,
                     s_crop == "none" ? 0 : 1);
      ConsistencyReport rep = consistency_check(inst, image, layout);
      fs::create_directories(s_out);
      Tensor stitched = stitch_predict(inst, image, layout);
      save_tensor((fs::path(s_out) / "stitched.eten1").string(), stitched);
      json coords = json::array();
      for (const auto& c : rep.mismatch_coords) coords.push_back(c);
      json summary{{"bit_exact", rep.bit_exact},
                   {"max_abs_diff", rep.max_abs_diff},
                   {"mismatch_count", rep.mismatch_count},
                   {"mismatch_coords", coords},
                   {"flags", layout.flags},
                   {"w", s_w},
                   {"crop", s_crop}};
      std::ofstream os(fs::path(s_out) / "consistency.json");
      os << summary.dump(2) << "\n";
      if (!s_render.empty()) render_mismatch_png(rep.diff_map, s_render);
      std::cout << (rep.bit_exact ? "stitched == monolithic (bit-exact)"
                                  : "mismatches: " + std::to_string(rep.mismatch_count))
                << "\n";
      return 0;
    }

    if (*tr) {
      ShowcaseConfig sc = showcase_config_from_file(t_config, t_seed);
      ShowcaseResult r = run_capacity_showcase(sc);
      fs::create_directories(t_out);
      save_checkpoint((fs::path(t_out) / "checkpoint").string(), r.trained, r.adam);
      write_loss_csv((fs::path(t_out) / "loss.csv").string(), r.trace);
      render_embedding_png(r.eval_embedding, (fs::path(t_out) / "embedding.png").string());
      render_labels_png(r.predicted, (fs::path(t_out) / "labels.png").string());
      json summary{{"ari", r.ari},
                   {"clusters_among_instances", r.clusters_among_instances},
                   {"fdl", r.fdl},
                   {"final_pull", r.final_pull},
                   {"mean_within_spread", r.mean_within_spread},
                   {"min_centroid_gap", r.min_centroid_gap}};
      std::ofstream os(fs::path(t_out) / "summary.json");
      os << summary.dump(2) << "\n";
      std::cout << "ARI " << r.ari << ", clusters " << r.clusters_among_instances << "\n";
      return 0;
    }

    if (*infer) {
      UNetInstance inst = load_instance(i_instance);
      Tensor image = load_tensor(i_image);
      Tensor emb;
      if (i_w > 0) {
        TileLayout layout =
            plan_tiles(inst.spec, ops::spatial_shape(image), i_w, CropRule::to_multiple, 0);
        emb = stitch_predict(inst, image, layout);
      } else {
        emb = forward(inst, image);
      }
      InstanceLabeling labels = infer_labels(emb, LossParams{});
      fs::create_directories(i_out);
      save_tensor((fs::path(i_out) / "embedding.eten1").string(), emb);
      render_embedding_png(emb, (fs::path(i_out) / "embedding.png").string());
      render_labels_png(labels, (fs::path(i_out) / "labels.png").string());
      std::cout << "instances: " << labels.max_id() << "\n";
      return 0;
    }

    if (*scene_cmd) {
      DiskSceneSpec spec;
      spec.size = {sc_size, sc_size};
      spec.spacing = sc_spacing;
      spec.radius = sc_radius;
      DiskScene scene = disk_grid(spec);
      save_scene(sc_out, scene);
      render_labels_png(scene.labels, (fs::path(sc_out) / "labels.png").string());
      std::cout << "wrote " << sc_out << " (" << scene.labels.max_id() << " instances)\n";
      return 0;
    }

    if (*render) {
      Tensor t = load_tensor(r_input);
      if (r_kind == "embedding") {
        render_embedding_png(t, r_out);
      } else if (r_kind == "labels") {
        InstanceLabeling labels(ops::spatial_shape(t));
        for (int64_t i = 0; i < labels.numel(); ++i)
          labels.ids[static_cast<size_t>(i)] = static_cast<int32_t>(t.data[static_cast<size_t>(i)]);
        render_labels_png(labels, r_out);
      } else if (r_kind == "mismatch") {
        render_mismatch_png(t, r_out);
      } else {
        std::cerr << "unknown render kind '" << r_kind << "'\n";
        return 2;
      }
      std::cout << "wrote " << r_out << "\n";
      return 0;
    }

    if (*erun) {
      const std::string out = e_out.empty() ? "experiment_" + e_name : e_out;
      const int rc = run_experiment(e_name, e_config, out, e_seed);
      std::cout << "experiment " << e_name << ": " << (rc == 0 ? "PASS" : "FAIL") << " (artifacts in "
                << out << ")\n";
      return rc;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
