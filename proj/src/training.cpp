#include "msamseg/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "msamseg/kernels.hpp"

namespace msamseg {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(adam.lr > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 || !(adam.eps > 0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
}

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["augment"] = c.augment;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["lr"] = c.adam.lr;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["eps"] = c.adam.eps;
  return j.dump();
}

namespace {

struct Batch {
  Tensor<float> pet;
  Tensor<float> ct;
  Tensor<float> mask;
};

Batch stack(const std::vector<SliceTriplet>& items) {
  std::vector<Tensor<float>> pet, ct, mask;
  for (const auto& t : items) {
    pet.push_back(t.pet);
    ct.push_back(t.ct);
    mask.push_back(t.mask);
  }
  return {stack_batch<float>(pet), stack_batch<float>(ct), stack_batch<float>(mask)};
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

struct PreparedFold {
  std::vector<SliceTriplet> slices;  // normalised
  FoldStats stats;
};

PreparedFold prepare(const Dataset& dataset, const FoldSplit& fold) {
  auto raw = filter_tumor_slices(dataset.slices_of(fold.train_ids));
  if (raw.empty()) {
    throw ConfigError("training fold " + std::to_string(fold.fold) + " has no slices with tumour pixels");
  }
  PreparedFold p;
  p.stats = compute_fold_stats(raw, fold.train_hash());
  p.slices.reserve(raw.size());
  for (const auto& t : raw) p.slices.push_back(normalize_triplet(t, p.stats));
  return p;
}

TrainResult run(const ModelConfig& model, const TrainConfig& config, const PreparedFold& data, Checkpoint state,
                std::vector<EpochLoss> log, const TrainHooks& hooks) {
  const std::size_t n = data.slices.size();
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  Rng augment_rng(derive_seed(config.seed, "augment"));
  const std::size_t start = state.meta.epochs_completed;
  for (std::size_t e = 0; e < start; ++e) {
    permutation(n, shuffle_rng);
    if (config.augment) {
      for (std::size_t i = 0; i < n; ++i) augment_rng.uniform_int(kTransformCount);
    }
  }

  auto& params = state.params;
  auto& opt = *state.optimizer;
  for (std::size_t epoch = start; epoch < config.epochs; ++epoch) {
    const auto order = permutation(n, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      std::vector<SliceTriplet> items;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& src = data.slices[order[i]];
        items.push_back(config.augment ? augment(src, augment_rng) : src);
        if (hooks.on_slice) hooks.on_slice(items.back());
      }
      const Batch batch = stack(items);

      Graph<float> graph;
      ForwardOptions<float> opts;
      opts.params_require_grad = true;
      auto fg = build_forward(graph, model, params, batch.pet, batch.ct, opts);
      auto loss = softmax_cross_entropy(fg.logits, batch.mask);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw ValidationError("training loss became non-finite at epoch " + std::to_string(epoch + 1));
      }
      graph.backward(loss);
      std::vector<Tensor<float>> grads;
      grads.reserve(fg.params.size());
      for (std::size_t i = 0; i < fg.params.size(); ++i) {
        const auto& g = fg.params[i].grad();
        grads.push_back(g.empty() && !params.entries[i].value.empty() ? Tensor<float>(params.entries[i].value.shape())
                                                                       : g);
      }
      adam_step(params, grads, opt);
      loss_sum += value * static_cast<double>(end - begin);
    }
    state.meta.epochs_completed = epoch + 1;
    log.push_back({epoch + 1, loss_sum / static_cast<double>(n)});
    if (hooks.checkpoint_dir && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 &&
        epoch + 1 < config.epochs) {
      save_checkpoint(*hooks.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"), state);
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch + 1, state);
  }
  if (hooks.checkpoint_dir) save_checkpoint(*hooks.checkpoint_dir / "final.ckpt", state);
  return {std::move(state), std::move(log)};
}

}  // namespace

double mean_loss(const ModelConfig& model, const NetworkParams<float>& params, const std::vector<SliceTriplet>& slices,
                 std::size_t batch_size) {
  if (slices.empty()) throw ConfigError("mean_loss over an empty set");
  double sum = 0.0;
  for (std::size_t begin = 0; begin < slices.size(); begin += batch_size) {
    const std::size_t end = std::min(slices.size(), begin + batch_size);
    const Batch batch = stack(std::vector<SliceTriplet>(slices.begin() + static_cast<std::ptrdiff_t>(begin),
                                                        slices.begin() + static_cast<std::ptrdiff_t>(end)));
    Graph<float> graph;
    auto fg = build_forward(graph, model, params, batch.pet, batch.ct);
    Tensor<float> probs;
    sum += kernels::softmax_cross_entropy_forward(fg.logits.value(), batch.mask, probs) * static_cast<double>(end - begin);
  }
  return sum / static_cast<double>(slices.size());
}

TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& dataset, const FoldSplit& fold,
                  const TrainHooks& hooks) {
  model.validate();
  config.validate();
  const PreparedFold data = prepare(dataset, fold);
  Checkpoint state;
  state.config = model;
  state.params = build_model<float>(model, config.seed);
  state.optimizer = OptimizerState<float>::fresh(state.params, config.adam);
  state.meta.stats = data.stats;
  state.meta.seed = config.seed;
  state.meta.epochs_completed = 0;
  state.meta.train_config_json = train_config_to_json(config);
  std::vector<EpochLoss> log;
  log.push_back({0, mean_loss(model, state.params, data.slices, config.batch_size)});
  return run(model, config, data, std::move(state), std::move(log), hooks);
}

TrainResult resume(const Checkpoint& from, const TrainConfig& config, const Dataset& dataset, const FoldSplit& fold,
                   const TrainHooks& hooks) {
  config.validate();
  if (!from.optimizer) throw LoadError("checkpoint carries no optimizer state; cannot resume training");
  const PreparedFold data = prepare(dataset, fold);
  if (data.stats.fold_hash != from.meta.stats.fold_hash) {
    throw ConfigError("checkpoint was trained on a different fold");
  }
  if (from.meta.seed != config.seed) throw ConfigError("resume seed differs from the checkpoint's training seed");
  Checkpoint state = from;
  state.meta.train_config_json = train_config_to_json(config);
  return run(from.config, config, data, std::move(state), {}, hooks);
}

void write_loss_log(const std::filesystem::path& path, const std::vector<EpochLoss>& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "epoch,mean_loss\n";
  for (const auto& e : log) {
    std::ostringstream v;
    v << std::setprecision(9) << e.mean_loss;
    f << e.epoch << "," << v.str() << "\n";
  }
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace msamseg
