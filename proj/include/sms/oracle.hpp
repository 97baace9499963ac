#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "sms/feature_store.hpp"
#include "sms/search.hpp"

namespace sms {

// Deterministic evaluator mapping (video, frame combination) to a scalar
// loss. Order-invariant in the combination because aggregation is the mean.
class LossOracle {
 public:
  virtual ~LossOracle() = default;

  virtual double loss(const std::string& video_id, const FrameCombination& combination) = 0;

  // Vector-level entry used by the clip phase of hierarchical search,
  // where a clip combination is represented by the mean of its clip
  // features. Oracles that only speak frame indices return false and the
  // search falls back to expanding clips into their member frames.
  virtual bool supports_vector_loss() const { return false; }
  virtual double vector_loss(const std::string& video_id, const Vector& feature);
};

// Multinomial logistic-regression head over mean-pooled frame features.
struct LinearProbe {
  Matrix weights;  // C x d
  Vector bias;     // C

  int class_count() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }
};

// Full-batch gradient descent on (mean of all frames, label) pairs.
LinearProbe fit_linear_probe(const Dataset& dataset, int epochs, double learning_rate,
                             std::uint64_t seed);

// Cross-entropy of softmax(W * mean(selected rows) + b) at `label`.
double probe_loss(const LinearProbe& probe, const FeatureMatrix& features,
                  const FrameCombination& combination, int label);
double probe_vector_loss(const LinearProbe& probe, const Vector& feature, int label);

int probe_predict(const LinearProbe& probe, const Vector& feature);

// JSON probe file: {"C", "d", "W": [[...]], "b": [...]}.
void save_probe(const std::filesystem::path& path, const LinearProbe& probe);
LinearProbe load_probe(const std::filesystem::path& path);

// Binds a probe to a dataset so it can serve the LossOracle contract.
class ProbeOracle : public LossOracle {
 public:
  ProbeOracle(LinearProbe probe, const Dataset& dataset);

  double loss(const std::string& video_id, const FrameCombination& combination) override;
  bool supports_vector_loss() const override { return true; }
  double vector_loss(const std::string& video_id, const Vector& feature) override;

  const LinearProbe& probe() const { return probe_; }

 private:
  LinearProbe probe_;
  const Dataset& dataset_;
};

// Pass-through wrapper that counts oracle evaluations.
class CountingOracle : public LossOracle {
 public:
  explicit CountingOracle(LossOracle& inner) : inner_(inner) {}

  double loss(const std::string& video_id, const FrameCombination& combination) override {
    count_.fetch_add(1, std::memory_order_relaxed);
    return inner_.loss(video_id, combination);
  }
  bool supports_vector_loss() const override { return inner_.supports_vector_loss(); }
  double vector_loss(const std::string& video_id, const Vector& feature) override {
    count_.fetch_add(1, std::memory_order_relaxed);
    return inner_.vector_loss(video_id, feature);
  }

  long long eval_count() const { return count_.load(std::memory_order_relaxed); }
  void reset() { count_.store(0, std::memory_order_relaxed); }

 private:
  LossOracle& inner_;
  std::atomic<long long> count_{0};
};

// Spawns `command` via /bin/sh and speaks line-delimited JSON over its
// stdin/stdout: request {"id", "video_id", "frames"}, response
// {"id", "loss"}. One outstanding request at a time; calls are serialized
// internally.
std::unique_ptr<LossOracle> make_remote_oracle(const std::string& command);

// Entry i is the oracle loss of the singleton combination [i].
Vector per_frame_losses(LossOracle& oracle, const std::string& video_id, int frame_count);

// Per-clip analog, evaluated on clip mean features (or on the clip's
// expanded frames for oracles without a vector entry point).
Vector per_clip_losses(LossOracle& oracle, const FeatureMatrix& features,
                       const ClipPartition& partition);

}  // namespace sms
