#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msamseg/checkpoint.hpp"
#include "msamseg/data.hpp"
#include "msamseg/network.hpp"
#include "msamseg/optimizer.hpp"

namespace msamseg {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 4;
  bool augment = true;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = final only
  AdamHyperparams adam{};

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);

struct EpochLoss {
  std::size_t epoch = 0;  // 0 = forward-only pass at initialisation
  double mean_loss = 0.0;
};

struct TrainHooks {
  // Called for every training slice fed to the network.
  std::function<void(const SliceTriplet&)> on_slice;
  // Called after each epoch with the current state.
  std::function<void(std::size_t epoch, const Checkpoint&)> on_epoch;
  // Directory for periodic checkpoints (epoch_<n>.ckpt) and final.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> log;
};

// Trains from scratch on the training patients of `fold`. Slices without
// tumour pixels are dropped; normalisation uses training-fold statistics.
// Throws ConfigError when no training slice remains and ValidationError when
// the loss or a gradient becomes non-finite.
TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& dataset, const FoldSplit& fold,
                  const TrainHooks& hooks = {});

// Continues a run from a checkpoint carrying optimizer state up to
// config.epochs. Shuffle and augmentation streams are replayed up to the
// checkpointed epoch, so the result equals the uninterrupted run.
TrainResult resume(const Checkpoint& from, const TrainConfig& config, const Dataset& dataset, const FoldSplit& fold,
                   const TrainHooks& hooks = {});

// Mean cross-entropy of `model` over pre-normalised triplets, in batches.
double mean_loss(const ModelConfig& model, const NetworkParams<float>& params, const std::vector<SliceTriplet>& slices,
                 std::size_t batch_size);

// Loss-log CSV: header "epoch,mean_loss".
void write_loss_log(const std::filesystem::path& path, const std::vector<EpochLoss>& log);

}  // namespace msamseg
