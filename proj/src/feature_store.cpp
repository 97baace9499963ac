#include "sms/feature_store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "sms/binio.hpp"
#include "sms/rng.hpp"

namespace sms {

using binio::get_f64;
using binio::get_u32;
using binio::put_f64;
using binio::put_u32;

namespace {

constexpr char kMagic[4] = {'S', 'M', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

Vector mean_pool(const std::vector<Vector>& vectors) {
  if (vectors.empty()) throw ArgumentError("mean_pool: empty input");
  const Eigen::Index d = vectors.front().size();
  Vector sum = Vector::Zero(d);
  for (const Vector& v : vectors) {
    if (v.size() != d) throw ArgumentError("mean_pool: dimension mismatch");
    sum += v;
  }
  return sum / static_cast<double>(vectors.size());
}

Vector mean_pool_rows(const Matrix& rows, const std::vector<int>& indices) {
  if (indices.empty()) throw ArgumentError("mean_pool_rows: empty selection");
  Vector sum = Vector::Zero(rows.cols());
  for (int i : indices) {
    if (i < 0 || i >= rows.rows())
      throw ArgumentError("mean_pool_rows: index out of range");
    sum += rows.row(i).transpose();
  }
  return sum / static_cast<double>(indices.size());
}

ClipPartition split_clips(int m, int clip_len) {
  if (m < 1) throw ArgumentError("split_clips: m must be >= 1");
  if (clip_len < 1) throw ArgumentError("split_clips: clip_len must be >= 1");
  ClipPartition partition;
  partition.clip_len = clip_len;
  for (int start = 0; start < m; start += clip_len) {
    partition.ranges.push_back({start, std::min(start + clip_len, m)});
  }
  return partition;
}

Vector clip_feature(const FeatureMatrix& features, const IndexRange& range) {
  if (range.start < 0 || range.end > features.frame_count() || range.start >= range.end)
    throw ArgumentError("clip_feature: range out of bounds");
  return mean_rows(features.rows.middleRows(range.start, range.length()));
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 16) throw FormatError("feature file too short: " + path.string());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("bad magic in feature file: " + path.string());
  if (get_u32(bytes.data() + 4) != kVersion)
    throw FormatError("unsupported feature file version: " + path.string());

  const std::uint32_t m = get_u32(bytes.data() + 8);
  const std::uint32_t d = get_u32(bytes.data() + 12);
  if (m == 0 || d == 0) throw FormatError("feature file declares empty matrix: " + path.string());

  const std::size_t payload = static_cast<std::size_t>(m) * d * 8;
  if (bytes.size() != 16 + payload)
    throw FormatError("feature file payload size mismatch: " + path.string());

  FeatureMatrix features;
  features.video_id = path.stem().string();
  features.rows.resize(m, d);
  const char* p = bytes.data() + 16;
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t j = 0; j < d; ++j, p += 8) {
      const double v = get_f64(p);
      if (!std::isfinite(v))
        throw DataError("non-finite feature value in " + path.string());
      features.rows(i, j) = v;
    }
  }
  return features;
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& features) {
  const int m = features.frame_count();
  const int d = features.dim();
  if (m < 1 || d < 1) throw ArgumentError("write_features: empty matrix");

  std::string bytes;
  bytes.reserve(16 + static_cast<std::size_t>(m) * d * 8);
  bytes.append(kMagic, 4);
  put_u32(bytes, kVersion);
  put_u32(bytes, static_cast<std::uint32_t>(m));
  put_u32(bytes, static_cast<std::uint32_t>(d));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) put_f64(bytes, features.rows(i, j));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.video_id = j.at("video_id").get<std::string>();
      e.feature_path = j.at("feature_path").get<std::string>();
      e.label = j.at("label").get<int>();
      e.num_frames = j.at("num_frames").get<int>();
      if (!seen.insert(e.video_id).second)
        throw DataError("duplicate video_id in manifest: " + e.video_id);
      if (e.num_frames < 1) throw DataError("non-positive num_frames: " + e.video_id);
      if (e.label < 0) throw DataError("negative label: " + e.video_id);
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("bad manifest line: " + std::string(ex.what()));
    }
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const ManifestEntry& e : entries) {
    nlohmann::json j{{"video_id", e.video_id},
                     {"feature_path", e.feature_path},
                     {"label", e.label},
                     {"num_frames", e.num_frames}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::pair<std::string, std::vector<int>>> read_ground_truth(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth: " + path.string());
  std::vector<std::pair<std::string, std::vector<int>>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      out.emplace_back(j.at("video_id").get<std::string>(),
                       j.at("informative_frames").get<std::vector<int>>());
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("bad ground truth line: " + std::string(ex.what()));
    }
  }
  return out;
}

namespace {

Matrix sample_centroids(int classes, int dim, double max_cosine, Rng& rng) {
  Matrix centroids(classes, dim);
  int placed = 0;
  for (int attempt = 0; placed < classes; ++attempt) {
    if (attempt > 200000)
      throw ArgumentError("generate_synthetic: cannot place centroids with the similarity cap");
    Vector v(dim);
    for (int j = 0; j < dim; ++j) v(j) = rng.gaussian();
    const double norm = v.norm();
    if (norm < 1e-12) continue;
    v /= norm;
    bool ok = true;
    for (int c = 0; c < placed && ok; ++c)
      ok = centroids.row(c).dot(v) <= max_cosine;
    if (!ok) continue;
    centroids.row(placed++) = v.transpose();
  }
  return centroids;
}

std::vector<int> sample_distinct(int count, int upper, Rng& rng) {
  // Partial Fisher-Yates over [0, upper).
  std::vector<int> pool(upper);
  for (int i = 0; i < upper; ++i) pool[i] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(upper - i)));
    std::swap(pool[i], pool[j]);
  }
  std::vector<int> chosen(pool.begin(), pool.begin() + count);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  const std::filesystem::path base = manifest_path.parent_path();
  Dataset dataset;
  for (const ManifestEntry& entry : read_manifest(manifest_path)) {
    FeatureMatrix features = read_features(base / entry.feature_path);
    features.video_id = entry.video_id;
    if (features.frame_count() != entry.num_frames)
      throw DataError("num_frames mismatch for " + entry.video_id);
    dataset.add(entry.video_id, {std::move(features), entry.label});
  }
  return dataset;
}

void Dataset::add(std::string video_id, VideoSample sample) {
  if (dim_ == 0) {
    dim_ = sample.features.dim();
  } else if (sample.features.dim() != dim_) {
    throw DataError("inconsistent feature dimension for " + video_id);
  }
  class_count_ = std::max(class_count_, sample.label + 1);
  if (!samples_.emplace(video_id, std::move(sample)).second)
    throw DataError("duplicate video_id: " + video_id);
  ids_.push_back(std::move(video_id));
}

const VideoSample& Dataset::at(const std::string& video_id) const {
  auto it = samples_.find(video_id);
  if (it == samples_.end()) throw DataError("unknown video_id: " + video_id);
  return it->second;
}

bool Dataset::contains(const std::string& video_id) const {
  return samples_.count(video_id) != 0;
}

std::filesystem::path generate_synthetic(const SynthConfig& config,
                                         const std::filesystem::path& out_dir) {
  if (config.num_videos < 1) throw ArgumentError("generate_synthetic: num_videos must be >= 1");
  if (config.classes < 2) throw ArgumentError("generate_synthetic: classes must be >= 2");
  if (config.frames_per_video < 1 || config.dim < 1)
    throw ArgumentError("generate_synthetic: frames_per_video and dim must be >= 1");
  if (config.informative_per_video < 1 ||
      config.informative_per_video > config.frames_per_video)
    throw ArgumentError("generate_synthetic: informative_per_video must be in [1, m]");
  if (config.noise_sigma < 0) throw ArgumentError("generate_synthetic: noise_sigma must be >= 0");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir.string());

  Rng rng(config.seed);
  const Matrix centroids = sample_centroids(config.classes, config.dim, 0.3, rng);
  {
    FeatureMatrix cf;
    cf.video_id = "centroids";
    cf.rows = centroids;
    write_features(out_dir / "centroids.smsf", cf);
  }

  const int m = config.frames_per_video;
  std::vector<ManifestEntry> manifest;
  std::ofstream gt(out_dir / "ground_truth.jsonl", std::ios::trunc);
  if (!gt) throw IoError("cannot open for writing: " + (out_dir / "ground_truth.jsonl").string());

  char id_buf[32];
  for (int v = 0; v < config.num_videos; ++v) {
    std::snprintf(id_buf, sizeof(id_buf), "v%05d", v);
    const std::string video_id(id_buf);
    const int label = v % config.classes;

    const std::vector<int> informative =
        sample_distinct(config.informative_per_video, m, rng);

    FeatureMatrix features;
    features.video_id = video_id;
    features.rows.resize(m, config.dim);
    std::size_t next_informative = 0;
    for (int i = 0; i < m; ++i) {
      int cls;
      if (next_informative < informative.size() && informative[next_informative] == i) {
        cls = label;
        ++next_informative;
      } else {
        // Distractor: a uniformly random wrong class.
        int wrong = static_cast<int>(rng.uniform_int(config.classes - 1));
        if (wrong >= label) ++wrong;
        cls = wrong;
      }
      for (int j = 0; j < config.dim; ++j)
        features.rows(i, j) = centroids(cls, j) + config.noise_sigma * rng.gaussian();
    }

    const std::string rel = "features/" + video_id + ".smsf";
    write_features(out_dir / rel, features);
    manifest.push_back({video_id, rel, label, m});

    nlohmann::json j{{"video_id", video_id}, {"informative_frames", informative}};
    gt << j.dump() << '\n';
  }
  if (!gt) throw IoError("write failed: ground_truth.jsonl");

  const std::filesystem::path manifest_path = out_dir / "manifest.jsonl";
  write_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace sms
