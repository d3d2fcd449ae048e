#pragma once

// U-Net segmentation backbone with an optional attention subnetwork whose
// nonnegative single-channel map scales every skip connection:
//
//   G = L * resize(M)   (map broadcast over the channels of L)
//
// The attention subnetwork is a second U-Net of the same topology ending in
// a 1x1 convolution to one channel followed by ReLU.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msamseg/autograd.hpp"
#include "msamseg/tensor.hpp"

namespace msamseg {

enum class BackboneInput { kCT, kPET, kPETCT };
enum class MsamInput { kOff, kPET, kPETCT };

std::string to_string(BackboneInput v);
std::string to_string(MsamInput v);
BackboneInput parse_backbone_input(const std::string& s);
MsamInput parse_msam_input(const std::string& s);

struct ModelConfig {
  BackboneInput backbone_input = BackboneInput::kCT;
  MsamInput msam_input = MsamInput::kPET;
  std::size_t depth = 3;
  std::size_t base_width = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  static constexpr std::size_t kClasses = 2;

  bool msam_enabled() const { return msam_input != MsamInput::kOff; }
  std::size_t backbone_channels() const { return backbone_input == BackboneInput::kPETCT ? 2 : 1; }
  std::size_t msam_channels() const;
  // Throws ConfigError.
  void validate() const;
  // Human-readable row label, e.g. "U-Net(CT)+MSAM(PET)".
  std::string label() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Compact JSON form used in checkpoints and reports.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json);

enum class Subnet { kBackbone, kMsam };

template <typename T>
struct ParamEntry {
  std::string name;  // e.g. "backbone.enc0.conv1.weight"
  Subnet subnet = Subnet::kBackbone;
  std::string stage;  // enc<i>, bottleneck, dec<i>, head
  std::size_t layer = 0;
  Tensor<T> value;
};

template <typename T>
struct NetworkParams {
  std::vector<ParamEntry<T>> entries;

  std::size_t scalar_count() const;
  const ParamEntry<T>* find(const std::string& name) const;

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    for (const auto& e : entries) out.entries.push_back({e.name, e.subnet, e.stage, e.layer, e.value.template cast<U>()});
    return out;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      if (a.entries[i].name != b.entries[i].name || a.entries[i].value != b.entries[i].value) return false;
    }
    return true;
  }
};

// One entry of the parameter layout, in initialisation order.
struct LayerSpec {
  Subnet subnet;
  std::string stage;
  std::size_t layer;
  enum class Kind { kConv3, kUpConv, kHead } kind;
  std::size_t in_channels;
  std::size_t out_channels;
};

std::vector<LayerSpec> layer_layout(const ModelConfig& config);

// He-normal weights (variance 2 / fan_in) and zero biases. The backbone is
// drawn from the seed stream before the attention subnetwork, so enabling
// attention leaves the backbone initialisation untouched.
template <typename T>
NetworkParams<T> build_model(const ModelConfig& config, std::uint64_t seed);

// Backbone and attention inputs assembled from the two modalities. PET-CT
// means channel concatenation with PET first.
template <typename T>
struct ModelInputs {
  Tensor<T> backbone;
  std::optional<Tensor<T>> msam;
};

template <typename T>
ModelInputs<T> assemble_inputs(const ModelConfig& config, const Tensor<T>& pet, const Tensor<T>& ct);

enum class Gating { kAttention, kDisabled };

template <typename T>
struct ForwardOptions {
  Gating gating = Gating::kAttention;
  const Tensor<T>* attention_override = nullptr;  // full input resolution
  bool params_require_grad = false;
  bool inputs_require_grad = false;
};

// Variables recorded on a graph by one forward pass.
template <typename T>
struct ForwardGraph {
  Var<T> logits;
  std::optional<Var<T>> attention;
  std::vector<Var<T>> gated_skips;  // one per decoder level, shallowest first
  std::vector<Var<T>> params;       // aligned with NetworkParams::entries
  Var<T> backbone_input;
  std::optional<Var<T>> msam_input;
};

template <typename T>
ForwardGraph<T> build_forward(Graph<T>& graph, const ModelConfig& config, const NetworkParams<T>& params,
                              const Tensor<T>& pet, const Tensor<T>& ct, const ForwardOptions<T>& options = {});

// Scales a skip feature map by the attention map resampled to its resolution.
template <typename T>
Var<T> gate_skip(Var<T> skip, Var<T> map);

template <typename T>
Tensor<T> msam_forward(const ModelConfig& config, const NetworkParams<T>& params, const Tensor<T>& msam_in);

template <typename T>
struct ForwardResult {
  Tensor<T> probabilities;               // (N, 2, H, W)
  std::optional<Tensor<T>> attention;    // (N, 1, H, W) when attention is active
  std::vector<Tensor<T>> gated_skips;
};

template <typename T>
ForwardResult<T> model_forward(const ModelConfig& config, const NetworkParams<T>& params, const Tensor<T>& pet,
                               const Tensor<T>& ct, const ForwardOptions<T>& options = {});

// Tumour iff p(tumour) > 0.5; exact ties go to background.
template <typename T>
Tensor<T> predict_mask(const Tensor<T>& probabilities);

template <typename T>
class AttentionOverride;

// Configuration plus parameters, with a scoped hook that replaces the
// attention map used for gating.
template <typename T>
class SegmentationModel {
 public:
  SegmentationModel(ModelConfig config, NetworkParams<T> params);
  static SegmentationModel build(const ModelConfig& config, std::uint64_t seed) {
    return SegmentationModel(config, build_model<T>(config, seed));
  }

  const ModelConfig& config() const { return config_; }
  const NetworkParams<T>& params() const { return params_; }
  NetworkParams<T>& params() { return params_; }

  ForwardResult<T> forward(const Tensor<T>& pet, const Tensor<T>& ct, Gating gating = Gating::kAttention) const;
  Tensor<T> attention(const Tensor<T>& pet, const Tensor<T>& ct) const;

  // While the handle lives, gating uses `map` instead of the subnetwork
  // output. Throws ConfigError without attention, ShapeError on a map that
  // is not (N, 1, H, W) at input resolution.
  [[nodiscard]] AttentionOverride<T> inject_attention_override(Tensor<T> map);

 private:
  friend class AttentionOverride<T>;
  ModelConfig config_;
  NetworkParams<T> params_;
  std::optional<Tensor<T>> override_;
};

template <typename T>
class AttentionOverride {
 public:
  AttentionOverride(const AttentionOverride&) = delete;
  AttentionOverride& operator=(const AttentionOverride&) = delete;
  AttentionOverride(AttentionOverride&& other) noexcept : model_(other.model_) { other.model_ = nullptr; }
  ~AttentionOverride() { release(); }

  void release() {
    if (model_) model_->override_.reset();
    model_ = nullptr;
  }

 private:
  friend class SegmentationModel<T>;
  explicit AttentionOverride(SegmentationModel<T>* model) : model_(model) {}
  SegmentationModel<T>* model_;
};

}  // namespace msamseg
