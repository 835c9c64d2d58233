#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gres/data.hpp"
#include "gres/losses.hpp"
#include "gres/model.hpp"
#include "gres/random.hpp"

namespace gres {

struct TrainConfig {
  double base_lr = 1e-4;
  std::size_t total_steps = 2000;
  double poly_power = 4.0;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  LossWeights weights;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// base_lr * (1 - step / total_steps)^poly_power for step in [0, total_steps].
double poly_lr(std::size_t step, const TrainConfig& cfg);

// Uniform(+-1/sqrt(fan_in)) matrices, zero biases, N(0, 0.02) token embeddings.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);

struct AdamState {
  std::size_t step = 0;  // updates applied so far
  ModelParams m;
  ModelParams v;
};
AdamState make_adam_state(const ModelParams& params);

// One (scene, expression) pair of a batch.
struct BatchItem {
  const SceneContext* context;
  const Expression* expr;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// Mean loss over the batch, backward, clip, Adam at poly_lr(state.step).
// Throws TrainingError on a non-finite loss or gradient.
StepResult train_step(std::span<const BatchItem> batch, ModelParams& params, AdamState& state,
                      const ModelConfig& mcfg, const TrainConfig& tcfg);

// Mean loss and gradient over a batch without updating anything.
double batch_loss_and_grad(std::span<const BatchItem> batch, const ModelParams& params,
                           const ModelConfig& mcfg, const LossWeights& weights, ModelParams* grad);

struct Checkpoint {
  int format_version = 1;
  ModelConfig model;
  ModelParams params;
  std::size_t step = 0;
  std::string rng_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr int kCheckpointFormatVersion = 1;

// Layout: 8-byte magic "GRESCKPT", uint64 little-endian header length, JSON
// header (version, model config, step, RNG state, tensor directory with
// name/shape/offset), then little-endian float64 payloads in directory order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct FitOptions {
  // Called after every step with (step index, result).
  std::function<void(std::size_t, const StepResult&)> on_step;
};

// Trains on the manifest's train split for exactly total_steps steps. Batches
// are drawn from a per-epoch seeded shuffle.
Checkpoint fit(const DatasetManifest& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
               const FitOptions& opts = {});

}  // namespace gres
