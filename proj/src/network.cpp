#include "msamseg/network.hpp"


#include <cmath>
#include <json.hpp>

#include "msamseg/kernels.hpp"
#include "msamseg/rng.hpp"

namespace msamseg {

std::string to_string(BackboneInput v) {
  switch (v) {
    case BackboneInput::kCT: return "CT";
    case BackboneInput::kPET: return "PET";
    case BackboneInput::kPETCT: return "PETCT";
  }
  return "?";
}

std::string to_string(MsamInput v) {
  switch (v) {
    case MsamInput::kOff: return "OFF";
    case MsamInput::kPET: return "PET";
    case MsamInput::kPETCT: return "PETCT";
  }
  return "?";
}

BackboneInput parse_backbone_input(const std::string& s) {
  if (s == "CT") return BackboneInput::kCT;
  if (s == "PET") return BackboneInput::kPET;
  if (s == "PETCT") return BackboneInput::kPETCT;
  throw ConfigError("unknown backbone input '" + s + "' (expected CT, PET or PETCT)");
}

MsamInput parse_msam_input(const std::string& s) {
  if (s == "OFF") return MsamInput::kOff;
  if (s == "PET") return MsamInput::kPET;
  if (s == "PETCT") return MsamInput::kPETCT;
  throw ConfigError("unknown msam input '" + s + "' (expected OFF, PET or PETCT)");
}

std::size_t ModelConfig::msam_channels() const {
  switch (msam_input) {
    case MsamInput::kOff: return 0;
    case MsamInput::kPET: return 1;
    case MsamInput::kPETCT: return 2;
  }
  return 0;
}

void ModelConfig::validate() const {
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (base_width == 0) throw ConfigError("base_width must be at least 1");
  const std::size_t factor = std::size_t{1} << depth;
  if (height == 0 || width == 0 || height % factor != 0 || width % factor != 0) {
    throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 2^depth = " + std::to_string(factor));
  }
}

std::string ModelConfig::label() const {
  std::string s = "U-Net(" + to_string(backbone_input) + ")";
  if (msam_enabled()) s += "+MSAM(" + to_string(msam_input) + ")";
  return s;
}

std::string model_config_to_json(const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["backbone_input"] = to_string(config.backbone_input);
  j["msam_input"] = to_string(config.msam_input);
  j["depth"] = config.depth;
  j["base_width"] = config.base_width;
  j["height"] = config.height;
  j["width"] = config.width;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(json);
    c.backbone_input = parse_backbone_input(j.at("backbone_input").get<std::string>());
    c.msam_input = parse_msam_input(j.at("msam_input").get<std::string>());
    c.depth = j.at("depth").get<std::size_t>();
    c.base_width = j.at("base_width").get<std::size_t>();
    c.height = j.at("height").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
std::size_t NetworkParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.value.size();
  return n;
}

template <typename T>
const ParamEntry<T>* NetworkParams<T>::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

void append_unet(std::vector<LayerSpec>& out, Subnet subnet, std::size_t in_channels, std::size_t head_channels,
                 const ModelConfig& config) {
  using K = LayerSpec::Kind;
  auto width = [&](std::size_t level) { return config.base_width << level; };
  std::size_t prev = in_channels;
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::string stage = "enc" + std::to_string(i);
    out.push_back({subnet, stage, 0, K::kConv3, prev, width(i)});
    out.push_back({subnet, stage, 1, K::kConv3, width(i), width(i)});
    prev = width(i);
  }
  out.push_back({subnet, "bottleneck", 0, K::kConv3, prev, width(config.depth)});
  out.push_back({subnet, "bottleneck", 1, K::kConv3, width(config.depth), width(config.depth)});
  for (std::size_t i = config.depth; i-- > 0;) {
    const std::string stage = "dec" + std::to_string(i);
    out.push_back({subnet, stage, 0, K::kUpConv, width(i + 1), width(i)});
    out.push_back({subnet, stage, 1, K::kConv3, 2 * width(i), width(i)});
    out.push_back({subnet, stage, 2, K::kConv3, width(i), width(i)});
  }
  out.push_back({subnet, "head", 0, K::kHead, width(0), head_channels});
}

std::string layer_prefix(const LayerSpec& l) {
  std::string s = l.subnet == Subnet::kBackbone ? "backbone." : "msam.";
  if (l.kind == LayerSpec::Kind::kHead) return s + "head";
  s += l.stage + ".";
  switch (l.kind) {
    case LayerSpec::Kind::kUpConv: s += "up"; break;
    case LayerSpec::Kind::kHead: break;
    case LayerSpec::Kind::kConv3: s += "conv" + std::to_string(l.layer); break;
  }
  return s;
}

Shape weight_shape(const LayerSpec& l) {
  switch (l.kind) {
    case LayerSpec::Kind::kConv3: return {l.out_channels, l.in_channels, 3, 3};
    case LayerSpec::Kind::kUpConv: return {l.in_channels, l.out_channels, 2, 2};
    case LayerSpec::Kind::kHead: return {l.out_channels, l.in_channels, 1, 1};
  }
  return {};
}

// Number of products summed into one output element.
std::size_t fan_in(const LayerSpec& l) {
  switch (l.kind) {
    case LayerSpec::Kind::kConv3: return l.in_channels * 9;
    case LayerSpec::Kind::kUpConv: return l.in_channels;
    case LayerSpec::Kind::kHead: return l.in_channels;
  }
  return 1;
}

}  // namespace

std::vector<LayerSpec> layer_layout(const ModelConfig& config) {
  config.validate();
  std::vector<LayerSpec> out;
  append_unet(out, Subnet::kBackbone, config.backbone_channels(), ModelConfig::kClasses, config);
  if (config.msam_enabled()) append_unet(out, Subnet::kMsam, config.msam_channels(), 1, config);
  return out;
}

template <typename T>
NetworkParams<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  NetworkParams<T> params;
  Rng rng(derive_seed(seed, "init"));
  for (const auto& layer : layer_layout(config)) {
    const std::string prefix = layer_prefix(layer);
    Tensor<T> w(weight_shape(layer));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in(layer)));
    for (auto& v : w.data()) v = static_cast<T>(rng.normal(0.0, stddev));
    params.entries.push_back({prefix + ".weight", layer.subnet, layer.stage, layer.layer, std::move(w)});
    params.entries.push_back(
        {prefix + ".bias", layer.subnet, layer.stage, layer.layer, Tensor<T>(Shape{1, 1, 1, layer.out_channels})});
  }
  return params;
}

template <typename T>
ModelInputs<T> assemble_inputs(const ModelConfig& config, const Tensor<T>& pet, const Tensor<T>& ct) {
  if (pet.shape() != ct.shape()) {
    throw ValidationError("PET " + to_string(pet.shape()) + " and CT " + to_string(ct.shape()) + " differ in shape");
  }
  if (pet.shape().c != 1) throw ValidationError("PET and CT inputs must have one channel");
  if (pet.shape().h != config.height || pet.shape().w != config.width) {
    throw ValidationError("input " + to_string(pet.shape()) + " does not match configured size " +
                          std::to_string(config.height) + "x" + std::to_string(config.width));
  }
  ModelInputs<T> in;
  switch (config.backbone_input) {
    case BackboneInput::kCT: in.backbone = ct; break;
    case BackboneInput::kPET: in.backbone = pet; break;
    case BackboneInput::kPETCT: in.backbone = kernels::concat_channels_forward(pet, ct); break;
  }
  switch (config.msam_input) {
    case MsamInput::kOff: break;
    case MsamInput::kPET: in.msam = pet; break;
    case MsamInput::kPETCT: in.msam = kernels::concat_channels_forward(pet, ct); break;
  }
  return in;
}

template <typename T>
Var<T> gate_skip(Var<T> skip, Var<T> map) {
  const auto& s = skip.shape();
  return broadcast_mul(skip, bilinear_resize(map, s.h, s.w));
}

namespace {

template <typename T>
struct ParamCursor {
  const std::vector<Var<T>>& vars;
  std::size_t next = 0;
  std::pair<Var<T>, Var<T>> take() {
    auto w = vars.at(next);
    auto b = vars.at(next + 1);
    next += 2;
    return {w, b};
  }
};

template <typename T>
Var<T> conv_relu(Var<T> x, ParamCursor<T>& cur) {
  auto [w, b] = cur.take();
  return relu(conv2d(x, w, b));
}

// Runs one U-Net. gate, when set, is applied to every skip connection.
template <typename T>
Var<T> unet_forward(Var<T> input, ParamCursor<T>& cur, std::size_t depth, const std::optional<Var<T>>& gate,
                    std::vector<Var<T>>* gated_out) {
  std::vector<Var<T>> skips;
  Var<T> x = input;
  for (std::size_t i = 0; i < depth; ++i) {
    x = conv_relu(x, cur);
    x = conv_relu(x, cur);
    skips.push_back(x);
    x = maxpool2d(x);
  }
  x = conv_relu(x, cur);
  x = conv_relu(x, cur);
  std::vector<Var<T>> gated(depth);
  for (std::size_t i = depth; i-- > 0;) {
    auto [uw, ub] = cur.take();
    Var<T> up = conv_transpose2d(x, uw, ub);
    Var<T> skip = gate ? gate_skip(skips[i], *gate) : skips[i];
    gated[i] = skip;
    x = concat_channels(skip, up);
    x = conv_relu(x, cur);
    x = conv_relu(x, cur);
  }
  if (gated_out) *gated_out = std::move(gated);
  auto [hw, hb] = cur.take();
  return conv2d(x, hw, hb);
}

}  // namespace

template <typename T>
ForwardGraph<T> build_forward(Graph<T>& graph, const ModelConfig& config, const NetworkParams<T>& params,
                              const Tensor<T>& pet, const Tensor<T>& ct, const ForwardOptions<T>& options) {
  config.validate();
  ModelInputs<T> inputs = assemble_inputs(config, pet, ct);
  ForwardGraph<T> fg;
  fg.params.reserve(params.entries.size());
  for (const auto& e : params.entries) fg.params.push_back(graph.input(e.value, options.params_require_grad));

  std::size_t backbone_params = 0;
  for (const auto& e : params.entries) backbone_params += e.subnet == Subnet::kBackbone ? 1 : 0;
  if (!config.msam_enabled() && backbone_params != params.entries.size()) {
    throw ConfigError("parameters contain attention weights but attention is disabled");
  }

  if (options.attention_override && !config.msam_enabled()) {
    throw ConfigError("attention override requires an attention-enabled model");
  }

  std::optional<Var<T>> gate;
  if (config.msam_enabled() && options.gating == Gating::kAttention) {
    if (options.attention_override) {
      const auto& m = *options.attention_override;
      const auto& ps = pet.shape();
      if (m.shape() != Shape{ps.n, 1, ps.h, ps.w}) {
        throw ShapeError("attention override " + to_string(m.shape()) + " must be " +
                         to_string(Shape{ps.n, 1, ps.h, ps.w}));
      }
      gate = graph.input(m, false);
    } else {
      ParamCursor<T> mcur{fg.params, backbone_params};
      Var<T> min = graph.input(*inputs.msam, options.inputs_require_grad);
      fg.msam_input = min;
      gate = relu(unet_forward<T>(min, mcur, config.depth, std::optional<Var<T>>{}, nullptr));
    }
    fg.attention = gate;
  }

  ParamCursor<T> bcur{fg.params, 0};
  Var<T> bin = graph.input(std::move(inputs.backbone), options.inputs_require_grad);
  fg.backbone_input = bin;
  fg.logits = unet_forward<T>(bin, bcur, config.depth, gate, &fg.gated_skips);
  return fg;
}

template <typename T>
Tensor<T> msam_forward(const ModelConfig& config, const NetworkParams<T>& params, const Tensor<T>& msam_in) {
  if (!config.msam_enabled()) throw ConfigError("msam_forward called on a model without attention");
  const auto& s = msam_in.shape();
  if (s.c != config.msam_channels() || s.h != config.height || s.w != config.width) {
    throw ShapeError("attention input " + to_string(s) + " does not match configuration " + config.label());
  }
  Graph<T> graph;
  std::vector<Var<T>> vars;
  std::size_t first = params.entries.size();
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    if (params.entries[i].subnet == Subnet::kMsam && first == params.entries.size()) first = i;
    vars.push_back(graph.input(params.entries[i].value, false));
  }
  ParamCursor<T> cur{vars, first};
  Var<T> out = relu(unet_forward<T>(graph.input(msam_in, false), cur, config.depth, std::optional<Var<T>>{}, nullptr));
  return out.value();
}

template <typename T>
ForwardResult<T> model_forward(const ModelConfig& config, const NetworkParams<T>& params, const Tensor<T>& pet,
                               const Tensor<T>& ct, const ForwardOptions<T>& options) {
  Graph<T> graph;
  ForwardOptions<T> opts = options;
  opts.params_require_grad = false;
  auto fg = build_forward(graph, config, params, pet, ct, opts);
  ForwardResult<T> result;
  result.probabilities = kernels::softmax_channels(fg.logits.value());
  if (fg.attention) result.attention = fg.attention->value();
  for (const auto& g : fg.gated_skips) result.gated_skips.push_back(g.value());
  return result;
}

template <typename T>
Tensor<T> predict_mask(const Tensor<T>& probabilities) {
  const auto& s = probabilities.shape();
  if (s.c != 2) throw ShapeError("predict_mask: expected 2 channels, got " + to_string(s));
  Tensor<T> mask(Shape{s.n, 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* p = probabilities.plane(n, 1);
    T* m = mask.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) m[i] = p[i] > T(0.5) ? T(1) : T(0);
  }
  return mask;
}

template <typename T>
SegmentationModel<T>::SegmentationModel(ModelConfig config, NetworkParams<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
}

template <typename T>
ForwardResult<T> SegmentationModel<T>::forward(const Tensor<T>& pet, const Tensor<T>& ct, Gating gating) const {
  ForwardOptions<T> opts;
  opts.gating = gating;
  opts.attention_override = override_ ? &*override_ : nullptr;
  return model_forward(config_, params_, pet, ct, opts);
}

template <typename T>
Tensor<T> SegmentationModel<T>::attention(const Tensor<T>& pet, const Tensor<T>& ct) const {
  auto inputs = assemble_inputs(config_, pet, ct);
  if (!inputs.msam) throw ConfigError("model " + config_.label() + " has no attention subnetwork");
  return msam_forward(config_, params_, *inputs.msam);
}

template <typename T>
AttentionOverride<T> SegmentationModel<T>::inject_attention_override(Tensor<T> map) {
  if (!config_.msam_enabled()) throw ConfigError("attention override requires an attention-enabled model");
  const auto& s = map.shape();
  if (s.c != 1 || s.h != config_.height || s.w != config_.width || s.n == 0) {
    throw ShapeError("attention override " + to_string(s) + " is not a single-channel map at " +
                     std::to_string(config_.height) + "x" + std::to_string(config_.width));
  }
  override_ = std::move(map);
  return AttentionOverride<T>(this);
}

#define MSAMSEG_INSTANTIATE(T)                                                                                  \
  template struct NetworkParams<T>;                                                                             \
  template NetworkParams<T> build_model<T>(const ModelConfig&, std::uint64_t);                                  \
  template ModelInputs<T> assemble_inputs(const ModelConfig&, const Tensor<T>&, const Tensor<T>&);               \
  template Var<T> gate_skip(Var<T>, Var<T>);                                                                    \
  template ForwardGraph<T> build_forward(Graph<T>&, const ModelConfig&, const NetworkParams<T>&, const Tensor<T>&, \
                                         const Tensor<T>&, const ForwardOptions<T>&);                           \
  template Tensor<T> msam_forward(const ModelConfig&, const NetworkParams<T>&, const Tensor<T>&);               \
  template ForwardResult<T> model_forward(const ModelConfig&, const NetworkParams<T>&, const Tensor<T>&,        \
                                          const Tensor<T>&, const ForwardOptions<T>&);                          \
  template Tensor<T> predict_mask(const Tensor<T>&);                                                            \
  template class SegmentationModel<T>;

MSAMSEG_INSTANTIATE(float)
MSAMSEG_INSTANTIATE(double)
MSAMSEG_INSTANTIATE(long double)
#undef MSAMSEG_INSTANTIATE

}  // namespace msamseg
