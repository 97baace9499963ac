#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sms/errors.hpp"
#include "sms/feature_store.hpp"

namespace sms {

enum class MapperVariant { kTransformer, kMlp };

struct MapperConfig {
  MapperVariant variant = MapperVariant::kTransformer;
  int model_dim = 16;
  int layers = 2;
  int heads = 4;
  int ffn_dim = 64;    // transformer feed-forward width
  int hidden_dim = 64; // mlp hidden width

  void validate() const;
};

// All tensors live in one flat vector; the per-tensor order is fixed and is
// also the serialization order (see docs/formats in the README).
struct MapperParams {
  MapperConfig config;
  Vector flat;

  static MapperParams init(const MapperConfig& config, std::uint64_t seed,
                           double weight_init_scale);

  std::size_t param_count() const { return static_cast<std::size_t>(flat.size()); }
};

std::size_t mapper_param_count(const MapperConfig& config);

struct TrainingExample {
  FeatureMatrix inputs;
  Vector target;  // aggregated feature of the searched combination
};

// Predicted combination feature for one video.
Vector forward(const MapperParams& params, const FeatureMatrix& inputs);

// Forward pass that also exposes per-layer, per-head attention
// probabilities (transformer only; empty for the MLP variant).
struct ForwardDetail {
  Vector output;
  std::vector<std::vector<Matrix>> attention;  // [layer][head], each m x m
};
ForwardDetail forward_detailed(const MapperParams& params, const FeatureMatrix& inputs);

double cosine_loss(const Vector& predicted, const Vector& target);

// Analytic gradients of cosine_loss(forward(params, inputs), target) with
// respect to every parameter.
struct BackwardResult {
  double loss = 0.0;
  Vector gradients;  // same layout as MapperParams::flat
};
BackwardResult backward(const MapperParams& params, const TrainingExample& example);

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 200;
  int batch_size = 16;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_init_scale = 0.1;
};

struct TrainReport {
  std::vector<double> train_loss;      // per-epoch mean over examples
  std::vector<double> validation_loss; // per-epoch, when a validation set is given
};

// Mini-batch training with seeded shuffling; deterministic for a fixed
// seed. Throws DivergenceError naming the epoch if the loss goes
// non-finite.
TrainReport train(std::vector<TrainingExample>& dataset, MapperParams& params,
                  const TrainConfig& config,
                  const std::vector<TrainingExample>* validation = nullptr);

// Central finite differences of the loss against the analytic gradients.
// Relative error uses a unit floor: |a - f| / max(1, |a|, |f|).
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};
GradCheckResult gradient_check(const MapperParams& params, const TrainingExample& example,
                               double step = 1e-6);

// SMSM model file: "SMSM" | u32 version=1 | u32 json_len | JSON header |
// raw little-endian float64 tensors in flat order.
void save_params(const std::filesystem::path& path, const MapperParams& params);
MapperParams load_params(const std::filesystem::path& path);

std::string to_string(MapperVariant variant);
MapperVariant mapper_variant_from_string(const std::string& name);

}  // namespace sms
