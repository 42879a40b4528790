// treereg: point-cloud registration against a hierarchical Gaussian-mixture
// model. Subcommands: register (single pair), sweep (synthetic
// speed-vs-accuracy protocol), sequence (frame-to-frame odometry protocol),
// invariants (cross-module self-checks).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "treereg/cloud_io.hpp"
#include "treereg/gmm.hpp"
#include "treereg/harness.hpp"
#include "treereg/parallel.hpp"
#include "treereg/registration.hpp"
#include "treereg/synthetic.hpp"

namespace {

using namespace treereg;

PointCloud load_cloud_arg(const std::string& arg) {
  if (is_synthetic_uri(arg)) return make_synthetic(arg);
  return read_cloud(arg);
}

void print_matrix(const RigidTransform& t) {
  const Eigen::Matrix4d m = t.matrix();
  for (int r = 0; r < 4; ++r) {
    std::printf("%.17g %.17g %.17g %.17g\n", m(r, 0), m(r, 1), m(r, 2),
                m(r, 3));
  }
}

struct CommonFlags {
  std::string variant_text = "adaptive:3";
  double lambda_c = 0.01;
  int max_iters = 50;
  double rotation_tol = 1e-5;
  double translation_tol = 1e-5;
  std::uint64_t seed = 0;
  int em_iters_per_node = 8;
  int min_points_per_node = 32;
  unsigned threads = 0;
  bool serial = false;

  void attach(CLI::App* app) {
    app->add_option("--variant", variant_text,
                    "adaptive:L | tree:L | flat:J | icp");
    app->add_option("--lambda-c", lambda_c,
                    "adaptive complexity stop threshold in [0, 1/3]");
    app->add_option("--max-iters", max_iters, "iteration cap per registration");
    app->add_option("--rot-tol", rotation_tol,
                    "convergence threshold on the update angle (radians)");
    app->add_option("--trans-tol", translation_tol,
                    "convergence threshold on the update translation, "
                    "relative to the target bounding-box diagonal");
    app->add_option("--seed", seed, "seed for all randomized stages");
    app->add_option("--em-iters-per-node", em_iters_per_node,
                    "refinement passes per node split during model build");
    app->add_option("--min-points-per-node", min_points_per_node,
                    "expected-mass floor below which a child is pruned");
    app->add_option("--threads", threads,
                    "worker thread cap (0 = hardware concurrency)");
    app->add_flag("--serial", serial,
                  "single-threaded execution (use for published timings)");
  }

  RegistrationConfig make_config() const {
    RegistrationConfig cfg;
    cfg.variant = Variant::parse(variant_text);
    cfg.lambda_c = lambda_c;
    cfg.max_em_iterations = max_iters;
    cfg.rotation_tol = rotation_tol;
    cfg.translation_tol = translation_tol;
    cfg.model_config.rng_seed = seed;
    cfg.model_config.em_iterations_per_node = em_iters_per_node;
    cfg.model_config.min_points_per_node = min_points_per_node;
    if (cfg.variant.kind != Variant::Kind::kIcpPointToPoint &&
        cfg.variant.kind != Variant::Kind::kFlatGmm) {
      cfg.model_config.max_level = cfg.variant.param;
    }
    return cfg;
  }

  void apply_threads() const {
    if (serial) {
      parallel::set_max_threads(1);
    } else if (threads != 0) {
      parallel::set_max_threads(threads);
    }
  }
};

int cmd_register(const CommonFlags& common, const std::string& target_path,
                 const std::string& source_path, const std::string& save_model,
                 const std::string& load_model) {
  common.apply_threads();
  RegistrationConfig cfg = common.make_config();
  const PointCloud source = load_cloud_arg(source_path);

  RegistrationResult result;
  if (!load_model.empty()) {
    if (cfg.variant.kind == Variant::Kind::kFlatGmm ||
        cfg.variant.kind == Variant::Kind::kIcpPointToPoint) {
      std::cerr << "--load-model requires a tree variant (adaptive:L, tree:L)\n";
      return 2;
    }
    const GmmTree tree = load_tree(load_model);
    double diag = 0.0;
    if (!target_path.empty()) {
      diag = load_cloud_arg(target_path).bbox_diagonal();
    }
    result = register_with_tree(tree, source, cfg, diag);
    result.model_components = tree.size();
  } else {
    if (target_path.empty()) {
      std::cerr << "either --target or --load-model is required\n";
      return 2;
    }
    const PointCloud target = load_cloud_arg(target_path);
    if (!save_model.empty()) {
      if (cfg.variant.kind == Variant::Kind::kFlatGmm ||
          cfg.variant.kind == Variant::Kind::kIcpPointToPoint) {
        std::cerr << "--save-model requires a tree variant\n";
        return 2;
      }
      const auto t0 = std::chrono::steady_clock::now();
      const GmmTree tree = build_tree(target, cfg.model_config);
      const auto t1 = std::chrono::steady_clock::now();
      save_tree(tree, save_model);
      result = register_with_tree(tree, source, cfg, target.bbox_diagonal());
      result.model_build_seconds =
          std::chrono::duration<double>(t1 - t0).count();
      result.model_components = tree.size();
    } else {
      result = register_clouds(target, source, cfg);
    }
  }

  print_matrix(result.transform);
  std::printf("# variant: %s\n", cfg.variant.name().c_str());
  std::printf("# iterations: %d  converged: %s\n", result.iterations,
              result.converged ? "yes" : "no");
  std::printf("# model components: %zu\n", result.model_components);
  std::printf("# build seconds: %.6f  alignment seconds: %.6f\n",
              result.model_build_seconds, result.em_seconds);
  if (!result.criterion_trace.empty()) {
    std::printf("# criterion first/last: %.17g / %.17g\n",
                result.criterion_trace.front(),
                result.criterion_after_trace.back());
  }
  std::uint64_t max_evals = 0;
  for (std::uint64_t e : result.eval_counts) max_evals = std::max(max_evals, e);
  std::printf("# max density evaluations per pass: %llu\n",
              static_cast<unsigned long long>(max_evals));
  return 0;
}

int cmd_sweep(const CommonFlags& common, const std::string& cloud_arg,
              const std::vector<int>& sizes, int trials, double rot_range,
              double trans_range, const std::vector<std::string>& variant_texts,
              const std::string& out_csv, const std::string& out_json,
              bool no_timing) {
  common.apply_threads();
  const PointCloud cloud = load_cloud_arg(cloud_arg);

  SweepOptions opt;
  for (int n : sizes) opt.sizes.push_back(static_cast<std::size_t>(n));
  opt.transform_spec.rot_range_deg = rot_range;
  opt.transform_spec.trans_range = trans_range;
  opt.transform_spec.seed = common.seed;
  opt.transform_spec.trials = trials;
  for (const std::string& v : variant_texts) {
    opt.variants.push_back(Variant::parse(v));
  }
  opt.base_config = common.make_config();

  const SweepOutput sweep = run_synthetic_sweep(cloud, opt);
  if (!out_csv.empty()) {
    write_rows_csv(sweep.rows, out_csv, /*include_timing=*/!no_timing);
    std::printf("# wrote %zu rows to %s\n", sweep.rows.size(),
                out_csv.c_str());
  }
  if (!out_json.empty()) {
    write_rows_json(sweep.rows, out_json, /*include_timing=*/!no_timing);
    std::printf("# wrote JSON mirror to %s\n", out_json.c_str());
  }
  if (out_csv.empty() && out_json.empty()) {
    std::printf("%s\n", csv_header(!no_timing).c_str());
    // Stream rows to stdout when no output file is requested.
    const auto tmp = std::filesystem::temp_directory_path() / "treereg-sweep.csv";
    write_rows_csv(sweep.rows, tmp, !no_timing);
    std::ifstream in(tmp);
    std::string line;
    std::getline(in, line);  // skip duplicate header
    while (std::getline(in, line)) std::printf("%s\n", line.c_str());
    std::filesystem::remove(tmp);
  }
  std::printf("# update steps: %llu, criterion decreased in %llu (%.2f%%)\n",
              static_cast<unsigned long long>(sweep.em_iterations_total),
              static_cast<unsigned long long>(sweep.em_iterations_descended),
              sweep.em_iterations_total == 0
                  ? 0.0
                  : 100.0 * static_cast<double>(sweep.em_iterations_descended) /
                        static_cast<double>(sweep.em_iterations_total));
  return 0;
}

int cmd_sequence(const CommonFlags& common, std::vector<std::string> frames,
                 const std::string& frame_list, int step, int downsample,
                 const std::string& gt_path, const std::string& out_csv,
                 const std::string& out_json, const std::string& traj_out,
                 bool no_timing) {
  common.apply_threads();
  if (!frame_list.empty()) {
    std::ifstream in(frame_list);
    if (!in) {
      std::cerr << "cannot open frame list " << frame_list << "\n";
      return 2;
    }
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
        line.pop_back();
      }
      if (line.empty() || line[0] == '#') continue;
      frames.push_back(line);
    }
  }
  if (frames.size() < 2) {
    std::cerr << "need at least two frames (via --frames or --frame-list)\n";
    return 2;
  }

  SequenceOptions opt;
  for (const std::string& f : frames) opt.frames.emplace_back(f);
  opt.frame_step = step;
  opt.downsample_n = static_cast<std::size_t>(downsample);
  opt.seed = common.seed;
  opt.base_config = common.make_config();
  if (!gt_path.empty()) opt.ground_truth = gt_path;

  const SequenceOutput seq = run_sequence(opt);
  if (!out_csv.empty()) {
    write_rows_csv(seq.rows, out_csv, !no_timing);
    std::printf("# wrote %zu rows to %s\n", seq.rows.size(), out_csv.c_str());
  }
  if (!out_json.empty()) {
    write_rows_json(seq.rows, out_json, !no_timing);
  }
  if (!traj_out.empty()) {
    write_trajectory(seq, traj_out);
    std::printf("# wrote trajectory (%zu poses) to %s\n",
                seq.trajectory.size(), traj_out.c_str());
  }
  if (seq.pairs_with_ground_truth > 0) {
    std::printf("# pairs with ground truth: %zu\n",
                seq.pairs_with_ground_truth);
    std::printf("# mean rotation error: %.6f deg\n",
                seq.mean_rotation_error_deg);
    std::printf("# mean translation error: %.6g\n",
                seq.mean_translation_error);
  } else {
    std::printf("# no ground truth supplied; errors not evaluated\n");
  }
  return 0;
}

int cmd_invariants(std::uint64_t seed, bool serial) {
  if (serial) parallel::set_max_threads(1);
  const std::vector<InvariantResult> results = run_invariant_suite(seed);
  int failures = 0;
  for (const InvariantResult& r : results) {
    std::printf("[%s] %-42s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
    if (!r.pass) ++failures;
  }
  std::printf("# %zu checks, %d failed (seed %llu)\n", results.size(),
              failures, static_cast<unsigned long long>(seed));
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Point-cloud registration with a hierarchical Gaussian-mixture model"};
  app.require_subcommand(1);

  // register
  auto* reg = app.add_subcommand(
      "register", "Align one cloud pair; prints the 4x4 transform");
  CommonFlags reg_flags;
  std::string reg_target, reg_source, reg_save_model, reg_load_model;
  reg->add_option("--target", reg_target,
                  "reference cloud (file or synthetic:... URI)");
  reg->add_option("--source", reg_source, "cloud to align onto the target")
      ->required();
  reg->add_option("--save-model", reg_save_model,
                  "write the fitted model as JSON before aligning");
  reg->add_option("--load-model", reg_load_model,
                  "reuse a previously saved model instead of fitting");
  reg_flags.attach(reg);

  // sweep
  auto* sweep = app.add_subcommand(
      "sweep", "Randomized-transform accuracy/speed sweep over one cloud");
  CommonFlags sweep_flags;
  std::string sweep_cloud, sweep_out, sweep_json;
  std::vector<int> sweep_sizes{5000};
  std::vector<std::string> sweep_variants{"adaptive:3"};
  int sweep_trials = 10;
  double sweep_rot = 15.0, sweep_trans = 0.05;
  bool sweep_no_timing = false;
  sweep->add_option("--cloud", sweep_cloud,
                    "cloud file or synthetic:... URI")->required();
  sweep->add_option("--sizes", sweep_sizes, "subsample sizes")
      ->delimiter(',');
  sweep->add_option("--trials", sweep_trials, "trials per size");
  sweep->add_option("--rot-range", sweep_rot,
                    "per-axis rotation range in degrees");
  sweep->add_option("--trans-range", sweep_trans,
                    "per-axis translation range (unit-normalized cloud)");
  sweep->add_option("--variants", sweep_variants,
                    "comma list: adaptive:L,tree:L,flat:J,icp")
      ->delimiter(',');
  sweep->add_option("--out", sweep_out, "CSV output path");
  sweep->add_option("--json", sweep_json, "JSON mirror output path");
  sweep->add_flag("--no-timing", sweep_no_timing,
                  "omit timing columns (byte-reproducible output)");
  sweep_flags.attach(sweep);

  // sequence
  auto* seq = app.add_subcommand(
      "sequence", "Frame-to-frame registration along a recorded sequence");
  CommonFlags seq_flags;
  std::vector<std::string> seq_frames;
  std::string seq_frame_list, seq_gt, seq_out, seq_json, seq_traj;
  int seq_step = 5, seq_down = 5000;
  bool seq_no_timing = false;
  seq->add_option("--frames", seq_frames, "frame files in capture order");
  seq->add_option("--frame-list", seq_frame_list,
                  "text file with one frame path per line");
  seq->add_option("--step", seq_step, "register every step-th frame");
  seq->add_option("--downsample", seq_down, "points kept per frame");
  seq->add_option("--gt", seq_gt, "ground-truth pose file");
  seq->add_option("--out", seq_out, "CSV output path");
  seq->add_option("--json", seq_json, "JSON mirror output path");
  seq->add_option("--trajectory-out", seq_traj,
                  "write the concatenated trajectory here");
  seq->add_flag("--no-timing", seq_no_timing, "omit timing columns");
  seq_flags.attach(seq);

  // invariants
  auto* inv = app.add_subcommand(
      "invariants", "Run the cross-module invariant suite");
  std::uint64_t inv_seed = 0;
  bool inv_serial = false;
  inv->add_option("--seed", inv_seed, "fixture seed");
  inv->add_flag("--serial", inv_serial, "single-threaded execution");

  CLI11_PARSE(app, argc, argv);

  try {
    if (reg->parsed()) {
      return cmd_register(reg_flags, reg_target, reg_source, reg_save_model,
                          reg_load_model);
    }
    if (sweep->parsed()) {
      return cmd_sweep(sweep_flags, sweep_cloud, sweep_sizes, sweep_trials,
                       sweep_rot, sweep_trans, sweep_variants, sweep_out,
                       sweep_json, sweep_no_timing);
    }
    if (seq->parsed()) {
      return cmd_sequence(seq_flags, seq_frames, seq_frame_list, seq_step,
                          seq_down, seq_gt, seq_out, seq_json, seq_traj,
                          seq_no_timing);
    }
    if (inv->parsed()) {
      return cmd_invariants(inv_seed, inv_serial);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
