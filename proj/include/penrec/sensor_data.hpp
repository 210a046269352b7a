// Loading, validation, cleaning, normalization, and writer-disjoint splitting
// of labeled 13-channel pen recordings.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "penrec/alphabet.hpp"
#include "penrec/common.hpp"

namespace penrec {

// Channel order is fixed: front accelerometer xyz (m/s^2), rear accelerometer
// xyz (m/s^2), gyroscope xyz (deg/s), magnetometer xyz (uT), force (sensor
// counts, >= 0).
inline constexpr int kNumChannels = 13;
inline constexpr int kForceChannel = 12;
inline constexpr double kSampleRateHz = 100.0;

struct SensorFrame {
  std::array<double, kNumChannels> values{};

  double force() const { return values[kForceChannel]; }
  const double* acc_front() const { return values.data() + 0; }
  const double* acc_rear() const { return values.data() + 3; }
  const double* gyro() const { return values.data() + 6; }
  const double* mag() const { return values.data() + 9; }
};

// One word recording. `frames` is T x 13 in the channel order above.
struct LabeledSample {
  std::string writer_id;
  std::string label;
  Eigen::MatrixXd frames;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  SensorFrame frame(int t) const;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::string provenance;

  int size() const { return static_cast<int>(samples.size()); }
};

// One cross-validation fold. Writers on the test side never appear on the
// training side. Indices refer to the dataset the split was computed from.
struct FoldSplit {
  int fold_index = 0;  // 1-based
  std::vector<std::string> train_writers;
  std::vector<std::string> test_writers;
  std::vector<int> train_samples;
  std::vector<int> val_samples;
  std::vector<int> test_samples;
};

struct SplitManifest {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<FoldSplit> folds;
};

// JSON Lines, one sample per line:
//   {"writer_id": "...", "label": "...", "frames": [[f1..f13], ...]}
// Malformed lines are rejected with a 1-based line number in the message.
Dataset parse_dataset(const std::string& path, const Alphabet& alphabet);
void write_dataset(const Dataset& dataset, const std::string& path);

// Drops leading frames before the first force >= threshold and trailing
// frames after the last; interior dips below the threshold are kept. Throws
// AllHoverError when no frame reaches the threshold.
LabeledSample trim_hover(const LabeledSample& sample, double threshold);

struct FilterResult {
  Dataset dataset;
  int removed = 0;
};

// Keeps samples with min_frames <= T <= max_frames (inclusive bounds).
FilterResult filter_length(const Dataset& dataset, int min_frames, int max_frames);

// Per-sample, per-channel (x - mean) / (std + eps) with population std
// (divisor T) and eps = 1e-8. Constant channels map to zeros.
LabeledSample zscore_normalize(const LabeledSample& sample);

struct PrepStats {
  int dropped_all_hover = 0;
  int removed_by_length = 0;
};

// trim_hover (dropping all-hover samples) -> filter_length -> zscore_normalize.
Dataset prepare_dataset(const Dataset& dataset, double force_threshold, int min_frames,
                        int max_frames, PrepStats* stats = nullptr);

// Writers are shuffled by seed and dealt round-robin onto k folds; fold i's
// writers form the test side. Training-side sample indices are split 80/20
// into train/val by a per-fold seeded shuffle. Index lists come back sorted.
std::vector<FoldSplit> split_writer_folds(const Dataset& dataset, int k, std::uint64_t seed);

void write_split_manifest(const SplitManifest& manifest, const std::string& path);
SplitManifest read_split_manifest(const std::string& path);

// Materializes the samples named by an index list, in list order.
Dataset select_samples(const Dataset& dataset, const std::vector<int>& indices);

// Keeps only samples written by the named writers, in dataset order.
Dataset select_writers(const Dataset& dataset, const std::vector<std::string>& writers);

}  // namespace penrec
