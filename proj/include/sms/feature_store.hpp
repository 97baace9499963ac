#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sms/errors.hpp"

namespace sms {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Half-open frame-index interval [start, end).
struct IndexRange {
  int start = 0;
  int end = 0;
  int length() const { return end - start; }
  bool operator==(const IndexRange&) const = default;
};

// Per-video frame features, one row per frame.
struct FeatureMatrix {
  std::string video_id;
  Matrix rows;  // m x d

  int frame_count() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }
};

struct ManifestEntry {
  std::string video_id;
  std::string feature_path;  // relative to the manifest's directory
  int label = 0;
  int num_frames = 0;
};

// Contiguous disjoint clips covering [0, m); all but the last have length
// exactly clip_len, the last has length in [1, clip_len].
struct ClipPartition {
  int clip_len = 0;
  std::vector<IndexRange> ranges;

  int clip_count() const { return static_cast<int>(ranges.size()); }
};

struct SynthConfig {
  int num_videos = 200;
  int classes = 5;
  int frames_per_video = 32;
  int dim = 16;
  int informative_per_video = 4;
  double noise_sigma = 0.3;
  std::uint64_t seed = 1;
};

// Component-wise mean of the rows of any dense expression; multiplicity of
// equal rows is respected by construction.
template <typename Derived>
Vector mean_rows(const Eigen::MatrixBase<Derived>& rows) {
  if (rows.rows() == 0) throw ArgumentError("mean_pool: empty input");
  return rows.colwise().mean().transpose();
}

Vector mean_pool(const std::vector<Vector>& vectors);

// Mean of the rows selected by `indices` (duplicates count repeatedly).
Vector mean_pool_rows(const Matrix& rows, const std::vector<int>& indices);

ClipPartition split_clips(int m, int clip_len);

// Average feature of the frames inside `range`.
Vector clip_feature(const FeatureMatrix& features, const IndexRange& range);

// SMSF binary feature file, little-endian:
//   "SMSF" | u32 version=1 | u32 m | u32 d | m*d float64 row-major
FeatureMatrix read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureMatrix& features);

// Manifest: JSON-lines {"video_id","feature_path","label","num_frames"}.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Ground-truth sidecar: JSON-lines {"video_id","informative_frames":[ints]}.
std::vector<std::pair<std::string, std::vector<int>>> read_ground_truth(
    const std::filesystem::path& path);

// Writes class centroids, per-video SMSF files, manifest.jsonl and
// ground_truth.jsonl under out_dir. Returns the manifest path.
// Deterministic for a fixed config.
std::filesystem::path generate_synthetic(const SynthConfig& config,
                                         const std::filesystem::path& out_dir);

struct VideoSample {
  FeatureMatrix features;
  int label = 0;
};

// A manifest resolved into memory: per-video features and labels with a
// stable video order. Immutable after load; safe to share across workers.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& manifest_path);

  const std::vector<std::string>& video_ids() const { return ids_; }
  const VideoSample& at(const std::string& video_id) const;
  bool contains(const std::string& video_id) const;
  std::size_t size() const { return ids_.size(); }
  int dim() const { return dim_; }
  int class_count() const { return class_count_; }

  void add(std::string video_id, VideoSample sample);

 private:
  std::vector<std::string> ids_;
  std::map<std::string, VideoSample> samples_;
  int dim_ = 0;
  int class_count_ = 0;
};

}  // namespace sms
