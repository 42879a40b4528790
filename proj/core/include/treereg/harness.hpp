#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "treereg/cloud_io.hpp"
#include "treereg/point_cloud.hpp"
#include "treereg/registration.hpp"

namespace treereg {

struct ExperimentReportRow {
  std::string variant;
  std::size_t n = 0;  // registered point count
  int trial = 0;
  std::uint64_t seed = 0;
  double rotation_error_deg = 0.0;
  double translation_error = 0.0;       // input units
  double translation_error_frac = 0.0;  // fraction of target diagonal
  double model_build_seconds = 0.0;
  double em_seconds = 0.0;
  int iterations = 0;
  bool converged = false;
  // Largest single E-step density-evaluation count of the run; divide by n
  // for the per-point association work.
  std::uint64_t density_evaluations = 0;
  std::string note;  // empty, or a failure/skip description
};

// Fixed CSV schema. Timing columns (build_s, em_s) are dropped when
// include_timing is false so repeated runs are byte-identical.
std::string csv_header(bool include_timing);
void write_rows_csv(const std::vector<ExperimentReportRow>& rows,
                    const std::filesystem::path& path, bool include_timing);
void write_rows_json(const std::vector<ExperimentReportRow>& rows,
                     const std::filesystem::path& path, bool include_timing);

struct SweepOptions {
  std::vector<std::size_t> sizes;
  SyntheticTransformSpec transform_spec;
  std::vector<Variant> variants;
  RegistrationConfig base_config;  // variant field overridden per run
};

struct SweepOutput {
  std::vector<ExperimentReportRow> rows;
  // Aggregate within-iteration descent bookkeeping across all EM runs.
  std::uint64_t em_iterations_total = 0;
  std::uint64_t em_iterations_descended = 0;
};

// Speed/accuracy protocol: the cloud is unit-normalized once; per
// (size, trial) one subsample is drawn and one random transform applied,
// shared across all variants; every registration yields one row.
SweepOutput run_synthetic_sweep(const PointCloud& cloud,
                                const SweepOptions& options);

struct SequenceOptions {
  std::vector<std::filesystem::path> frames;  // ordered frame files
  int frame_step = 5;
  std::size_t downsample_n = 5000;
  std::uint64_t seed = 0;
  RegistrationConfig base_config;  // including the variant to run
  std::optional<std::filesystem::path> ground_truth;
};

struct SequenceOutput {
  std::vector<ExperimentReportRow> rows;        // one per frame pair
  std::vector<RigidTransform> trajectory;       // global pose per used frame
  std::vector<std::string> trajectory_frames;   // matching file names
  double mean_rotation_error_deg = 0.0;         // over ground-truthed pairs
  double mean_translation_error = 0.0;
  std::size_t pairs_with_ground_truth = 0;
};

// Frame-to-frame protocol: registers every `frame_step`-th frame onto the
// previous kept frame and concatenates the pairwise transforms into a
// global trajectory.
SequenceOutput run_sequence(const SequenceOptions& options);

// Ground-truth poses: either one pose per line (16 numbers, row-major 4x4)
// or metadata-line blocks ("i j k" then four 4-number rows). '#' comments
// and blank lines are skipped. Rotations are projected onto SO(3).
std::vector<RigidTransform> load_pose_file(const std::filesystem::path& path);

void write_trajectory(const SequenceOutput& output,
                      const std::filesystem::path& path);

struct InvariantResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Executes the declared cross-module invariants on seeded fixtures,
// including a deliberately corrupted-model negative control.
std::vector<InvariantResult> run_invariant_suite(std::uint64_t seed);

}  // namespace treereg
