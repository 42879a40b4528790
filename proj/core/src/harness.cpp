#include "treereg/harness.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace treereg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed ^ splitmix64(a + 1)) ^ splitmix64(b + 1));
}

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_time(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::uint64_t max_eval_count(const RegistrationResult& r) {
  std::uint64_t m = 0;
  for (std::uint64_t v : r.eval_counts) m = std::max(m, v);
  return m;
}

ExperimentReportRow row_from_result(const std::string& variant, std::size_t n,
                                    int trial, std::uint64_t seed,
                                    const RegistrationResult& r,
                                    const RigidTransform& gt, double diag) {
  ExperimentReportRow row;
  row.variant = variant;
  row.n = n;
  row.trial = trial;
  row.seed = seed;
  row.rotation_error_deg = rotation_error_deg(r.transform.rotation, gt.rotation);
  row.translation_error = (r.transform.translation - gt.translation).norm();
  row.translation_error_frac =
      diag > 0.0 ? row.translation_error / diag
                 : std::numeric_limits<double>::quiet_NaN();
  row.model_build_seconds = r.model_build_seconds;
  row.em_seconds = r.em_seconds;
  row.iterations = r.iterations;
  row.converged = r.converged;
  row.density_evaluations = max_eval_count(r);
  return row;
}

ExperimentReportRow failure_row(const std::string& variant, std::size_t n,
                                int trial, std::uint64_t seed,
                                const std::string& why) {
  ExperimentReportRow row;
  row.variant = variant;
  row.n = n;
  row.trial = trial;
  row.seed = seed;
  row.rotation_error_deg = std::numeric_limits<double>::quiet_NaN();
  row.translation_error = std::numeric_limits<double>::quiet_NaN();
  row.translation_error_frac = std::numeric_limits<double>::quiet_NaN();
  row.converged = false;
  row.note = why;
  return row;
}

Mat3 project_to_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace

std::string csv_header(bool include_timing) {
  std::string h = "variant,n,trial,seed,rot_err_deg,trans_err,trans_err_frac";
  if (include_timing) h += ",build_s,em_s";
  h += ",iters,converged,evals,note";
  return h;
}

void write_rows_csv(const std::vector<ExperimentReportRow>& rows,
                    const std::filesystem::path& path, bool include_timing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  out << csv_header(include_timing) << '\n';
  for (const ExperimentReportRow& r : rows) {
    out << csv_escape(r.variant) << ',' << r.n << ',' << r.trial << ','
        << r.seed << ',' << fmt_real(r.rotation_error_deg) << ','
        << fmt_real(r.translation_error) << ','
        << fmt_real(r.translation_error_frac);
    if (include_timing) {
      out << ',' << fmt_time(r.model_build_seconds) << ','
          << fmt_time(r.em_seconds);
    }
    out << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ','
        << r.density_evaluations << ',' << csv_escape(r.note) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_rows_json(const std::vector<ExperimentReportRow>& rows,
                     const std::filesystem::path& path, bool include_timing) {
  nlohmann::json arr = nlohmann::json::array();
  for (const ExperimentReportRow& r : rows) {
    nlohmann::json o;
    o["variant"] = r.variant;
    o["n"] = r.n;
    o["trial"] = r.trial;
    o["seed"] = r.seed;
    o["rot_err_deg"] = r.rotation_error_deg;
    o["trans_err"] = r.translation_error;
    o["trans_err_frac"] = r.translation_error_frac;
    if (include_timing) {
      o["build_s"] = r.model_build_seconds;
      o["em_s"] = r.em_seconds;
    }
    o["iters"] = r.iterations;
    o["converged"] = r.converged;
    o["evals"] = r.density_evaluations;
    o["note"] = r.note;
    arr.push_back(std::move(o));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  out << arr.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SweepOutput run_synthetic_sweep(const PointCloud& cloud,
                                const SweepOptions& options) {
  if (options.sizes.empty() || options.variants.empty()) {
    throw std::invalid_argument("sweep: need at least one size and variant");
  }
  for (std::size_t n : options.sizes) {
    if (n < 1 || n > cloud.size()) {
      throw std::invalid_argument("sweep: size out of range for cloud");
    }
  }
  if (options.transform_spec.trials < 1) {
    throw std::invalid_argument("sweep: trials must be >= 1");
  }
  const PointCloud normalized = unit_normalized(cloud);
  SweepOutput out;
  for (std::size_t n : options.sizes) {
    for (int trial = 0; trial < options.transform_spec.trials; ++trial) {
      const std::uint64_t sub_seed =
          mix_seed(options.transform_spec.seed, n, static_cast<std::uint64_t>(trial));
      const PointCloud target = subsample(normalized, n, sub_seed);
      const RigidTransform t_fwd =
          random_rigid_transform(options.transform_spec, trial);
      const PointCloud source = transformed(target, t_fwd);
      const RigidTransform gt = t_fwd.inverse();
      const double diag = target.bbox_diagonal();
      for (const Variant& v : options.variants) {
        RegistrationConfig cfg = options.base_config;
        cfg.variant = v;
        try {
          const RegistrationResult r = register_clouds(target, source, cfg);
          out.rows.push_back(
              row_from_result(v.name(), n, trial, sub_seed, r, gt, diag));
          for (std::size_t k = 0; k < r.criterion_trace.size(); ++k) {
            ++out.em_iterations_total;
            if (r.criterion_after_trace[k] <= r.criterion_trace[k]) {
              ++out.em_iterations_descended;
            }
          }
        } catch (const std::exception& e) {
          out.rows.push_back(failure_row(v.name(), n, trial, sub_seed,
                                         std::string("error: ") + e.what()));
        }
      }
    }
  }
  return out;
}

std::vector<RigidTransform> load_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pose file: " + path.string());
  std::vector<std::vector<double>> number_lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::vector<double> nums;
    double v;
    while (ss >> v) nums.push_back(v);
    if (!nums.empty()) number_lines.push_back(std::move(nums));
  }
  if (number_lines.empty()) {
    throw std::runtime_error("pose file has no data: " + path.string());
  }

  std::vector<Eigen::Matrix4d> mats;
  if (number_lines.front().size() == 16) {
    for (const auto& nums : number_lines) {
      if (nums.size() != 16) {
        throw std::runtime_error("pose file mixes line formats: " +
                                 path.string());
      }
      Eigen::Matrix4d m;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) m(r, c) = nums[r * 4 + c];
      }
      mats.push_back(m);
    }
  } else if (number_lines.front().size() == 3) {
    // Metadata line ("i j k") followed by four rows of the 4x4 matrix.
    if (number_lines.size() % 5 != 0) {
      throw std::runtime_error("pose block count not a multiple of 5: " +
                               path.string());
    }
    for (std::size_t b = 0; b < number_lines.size(); b += 5) {
      Eigen::Matrix4d m;
      for (int r = 0; r < 4; ++r) {
        const auto& nums = number_lines[b + 1 + r];
        if (nums.size() != 4) {
          throw std::runtime_error("malformed pose block row: " +
                                   path.string());
        }
        for (int c = 0; c < 4; ++c) m(r, c) = nums[c];
      }
      mats.push_back(m);
    }
  } else {
    throw std::runtime_error(
        "unrecognized pose format (want 16 numbers per line or 5-line "
        "blocks): " +
        path.string());
  }

  std::vector<RigidTransform> poses;
  poses.reserve(mats.size());
  for (const Eigen::Matrix4d& m : mats) {
    if (!m.allFinite()) {
      throw std::runtime_error("non-finite pose entry: " + path.string());
    }
    if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() > 1e-6) {
      throw std::runtime_error("pose bottom row is not [0 0 0 1]: " +
                               path.string());
    }
    RigidTransform t;
    t.rotation = project_to_rotation(m.topLeftCorner<3, 3>());
    t.translation = m.topRightCorner<3, 1>();
    poses.push_back(t);
  }
  return poses;
}

SequenceOutput run_sequence(const SequenceOptions& options) {
  if (options.frame_step < 1) {
    throw std::invalid_argument("sequence: frame_step must be >= 1");
  }
  if (options.downsample_n < 1) {
    throw std::invalid_argument("sequence: downsample_n must be >= 1");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < options.frames.size();
       i += static_cast<std::size_t>(options.frame_step)) {
    kept.push_back(i);
  }
  if (kept.size() < 2) {
    throw std::invalid_argument("sequence: need at least 2 frames after stepping");
  }
  std::vector<RigidTransform> gt_poses;
  if (options.ground_truth) {
    gt_poses = load_pose_file(*options.ground_truth);
    if (gt_poses.size() < options.frames.size()) {
      throw std::runtime_error("sequence: fewer ground-truth poses than frames");
    }
  }

  const auto load_frame = [&](std::size_t idx) {
    PointCloud c = read_cloud(options.frames[idx]);
    if (c.size() > options.downsample_n) {
      c = subsample(c, options.downsample_n,
                    mix_seed(options.seed, idx, 0));
    }
    return c;
  };

  SequenceOutput out;
  out.trajectory.push_back(RigidTransform::identity());
  out.trajectory_frames.push_back(options.frames[kept[0]].string());

  std::optional<PointCloud> target;
  std::size_t target_idx = kept[0];
  try {
    target = load_frame(kept[0]);
  } catch (const std::exception& e) {
    target.reset();
    out.rows.push_back(failure_row("", 0, 0, options.seed,
                                   std::string("skip first frame: ") +
                                       e.what()));
  }

  double rot_sum = 0.0, trans_sum = 0.0;
  for (std::size_t pair = 0; pair + 1 < kept.size(); ++pair) {
    const std::size_t src_idx = kept[pair + 1];
    const std::string variant_name = options.base_config.variant.name();
    std::optional<PointCloud> source;
    try {
      source = load_frame(src_idx);
    } catch (const std::exception& e) {
      out.rows.push_back(failure_row(variant_name, 0,
                                     static_cast<int>(pair), options.seed,
                                     std::string("skip pair, bad frame ") +
                                         options.frames[src_idx].string() +
                                         ": " + e.what()));
    }
    if (!target || !source) {
      // Chain continues with an identity link so the trajectory stays
      // aligned with the kept frames.
      out.trajectory.push_back(out.trajectory.back());
      out.trajectory_frames.push_back(options.frames[src_idx].string());
      if (source) {
        target = std::move(source);
        target_idx = src_idx;
      }
      continue;
    }

    ExperimentReportRow row;
    RigidTransform pairwise = RigidTransform::identity();
    try {
      const RegistrationResult r =
          register_clouds(*target, *source, options.base_config);
      pairwise = r.transform;
      if (!gt_poses.empty()) {
        const RigidTransform gt =
            gt_poses[target_idx].inverse() * gt_poses[src_idx];
        row = row_from_result(variant_name, source->size(),
                              static_cast<int>(pair), options.seed, r, gt,
                              target->bbox_diagonal());
        rot_sum += row.rotation_error_deg;
        trans_sum += row.translation_error;
        ++out.pairs_with_ground_truth;
      } else {
        row = row_from_result(variant_name, source->size(),
                              static_cast<int>(pair), options.seed, r,
                              r.transform, target->bbox_diagonal());
        row.rotation_error_deg = std::numeric_limits<double>::quiet_NaN();
        row.translation_error = std::numeric_limits<double>::quiet_NaN();
        row.translation_error_frac = std::numeric_limits<double>::quiet_NaN();
        row.note = "no ground truth";
      }
    } catch (const std::exception& e) {
      row = failure_row(variant_name, source->size(), static_cast<int>(pair),
                        options.seed, std::string("error: ") + e.what());
    }
    out.rows.push_back(row);
    out.trajectory.push_back(out.trajectory.back() * pairwise);
    out.trajectory_frames.push_back(options.frames[src_idx].string());
    target = std::move(source);
    target_idx = src_idx;
  }
  if (out.pairs_with_ground_truth > 0) {
    out.mean_rotation_error_deg =
        rot_sum / static_cast<double>(out.pairs_with_ground_truth);
    out.mean_translation_error =
        trans_sum / static_cast<double>(out.pairs_with_ground_truth);
  }
  return out;
}

void write_trajectory(const SequenceOutput& output,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  out << "# frame, then 4x4 row-major global pose (16 values)\n";
  for (std::size_t i = 0; i < output.trajectory.size(); ++i) {
    out << csv_escape(output.trajectory_frames[i]);
    const Eigen::Matrix4d m = output.trajectory[i].matrix();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) out << ' ' << fmt_real(m(r, c));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace treereg
