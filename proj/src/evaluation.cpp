#include "msamseg/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace msamseg {

ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("confusion: prediction " + to_string(pred.shape()) + " vs ground truth " + to_string(gt.shape()));
  }
  ConfusionCounts c;
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if ((p[i] != 0.0f && p[i] != 1.0f) || (g[i] != 0.0f && g[i] != 1.0f)) {
      throw ValidationError("confusion: masks must be binary");
    }
    const bool pp = p[i] == 1.0f;
    const bool gp = g[i] == 1.0f;
    if (pp && gp) ++c.tp;
    else if (pp) ++c.fp;
    else if (gp) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double sensitivity(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double specificity(const ConfusionCounts& c) {
  if (c.tn + c.fp == 0) return 1.0;
  return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

double dsc(const ConfusionCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

Metrics metrics_of(const ConfusionCounts& c) { return {precision(c), sensitivity(c), specificity(c), dsc(c)}; }

Metrics mean_metrics(const std::vector<Metrics>& items) {
  Metrics m;
  if (items.empty()) return m;
  for (const auto& x : items) {
    m.precision += x.precision;
    m.sensitivity += x.sensitivity;
    m.specificity += x.specificity;
    m.dsc += x.dsc;
  }
  const double n = static_cast<double>(items.size());
  m.precision /= n;
  m.sensitivity /= n;
  m.specificity /= n;
  m.dsc /= n;
  return m;
}

std::string to_string(Pooling p) { return p == Pooling::kPerSlice ? "per_slice" : "global_pixel"; }

Pooling parse_pooling(const std::string& s) {
  if (s == "per_slice") return Pooling::kPerSlice;
  if (s == "global_pixel") return Pooling::kGlobalPixel;
  throw ConfigError("unknown pooling '" + s + "' (expected per_slice or global_pixel)");
}

namespace {

struct Batch {
  std::vector<const SliceTriplet*> raw;
  Tensor<float> pet, ct, mask;
};

// Normalised, tumour-bearing test slices grouped into batches.
std::vector<Batch> make_batches(const std::vector<SliceTriplet>& test, const FoldStats& stats, std::size_t batch_size) {
  std::vector<const SliceTriplet*> kept;
  for (const auto& t : test) {
    if (has_tumor(t)) kept.push_back(&t);
  }
  std::vector<Batch> out;
  for (std::size_t begin = 0; begin < kept.size(); begin += batch_size) {
    const std::size_t end = std::min(kept.size(), begin + batch_size);
    Batch b;
    std::vector<Tensor<float>> pet, ct, mask;
    for (std::size_t i = begin; i < end; ++i) {
      const SliceTriplet n = normalize_triplet(*kept[i], stats);
      pet.push_back(n.pet);
      ct.push_back(n.ct);
      mask.push_back(n.mask);
      b.raw.push_back(kept[i]);
    }
    b.pet = stack_batch<float>(pet);
    b.ct = stack_batch<float>(ct);
    b.mask = stack_batch<float>(mask);
    out.push_back(std::move(b));
  }
  return out;
}

Tensor<float> plane_of(const Tensor<float>& t, std::size_t n) { return slice_batch(t, n, n + 1); }

}  // namespace

FoldEvaluation evaluate(const Checkpoint& checkpoint, const std::vector<SliceTriplet>& test, const FoldStats& stats,
                        const EvalOptions& options) {
  if (stats.fold_hash != checkpoint.meta.stats.fold_hash) {
    throw ValidationError("normalisation statistics belong to a different fold than the checkpoint");
  }
  if (options.batch_size == 0) throw ConfigError("evaluation batch size must be at least 1");
  FoldEvaluation result;
  ConfusionCounts pooled;
  for (const auto& b : make_batches(test, checkpoint.meta.stats, options.batch_size)) {
    const auto fwd = model_forward(checkpoint.config, checkpoint.params, b.pet, b.ct);
    const Tensor<float> pred = predict_mask(fwd.probabilities);
    for (std::size_t i = 0; i < b.raw.size(); ++i) {
      const Tensor<float> p = plane_of(pred, i);
      SliceResult r;
      r.patient_id = b.raw[i]->patient_id;
      r.slice_index = b.raw[i]->slice_index;
      r.counts = confusion(p, b.raw[i]->mask);
      r.metrics = metrics_of(r.counts);
      pooled += r.counts;
      if (options.on_slice) {
        if (fwd.attention) {
          const Tensor<float> a = plane_of(*fwd.attention, i);
          options.on_slice(*b.raw[i], p, &a);
        } else {
          options.on_slice(*b.raw[i], p, nullptr);
        }
      }
      result.slices.push_back(std::move(r));
    }
  }
  if (options.pooling == Pooling::kGlobalPixel) {
    result.metrics = metrics_of(pooled);
  } else {
    std::vector<Metrics> per;
    for (const auto& s : result.slices) per.push_back(s.metrics);
    result.metrics = mean_metrics(per);
  }
  return result;
}

AttentionContrast attention_contrast(const Checkpoint& checkpoint, const std::vector<SliceTriplet>& test,
                                     std::size_t batch_size) {
  if (!checkpoint.config.msam_enabled()) throw ConfigError("attention_contrast: model has no attention subnetwork");
  std::vector<SliceTriplet> both;
  for (const auto& t : test) {
    if (!t.hotspots || !has_tumor(t)) continue;
    const auto h = t.hotspots->data();
    if (std::any_of(h.begin(), h.end(), [](float v) { return v > 0.5f; })) both.push_back(t);
  }
  AttentionContrast out;
  double tumor_sum = 0, hot_sum = 0;
  std::size_t tumor_n = 0, hot_n = 0;
  bool first = true;
  const SegmentationModel<float> model(checkpoint.config, checkpoint.params);
  for (const auto& b : make_batches(both, checkpoint.meta.stats, std::max<std::size_t>(batch_size, 1))) {
    const auto att = model.attention(b.pet, b.ct);
    for (std::size_t i = 0; i < b.raw.size(); ++i) {
      const float* a = att.plane(i, 0);
      const auto m = b.raw[i]->mask.data();
      const auto h = b.raw[i]->hotspots->data();
      for (std::size_t j = 0; j < m.size(); ++j) {
        if (first || a[j] < out.min_value) out.min_value = a[j];
        first = false;
        if (m[j] > 0.5f) {
          tumor_sum += a[j];
          ++tumor_n;
        }
        if (h[j] > 0.5f) {
          hot_sum += a[j];
          ++hot_n;
        }
      }
    }
    out.slices += b.raw.size();
  }
  out.tumor_mean = tumor_n ? tumor_sum / static_cast<double>(tumor_n) : 0.0;
  out.hotspot_mean = hot_n ? hot_sum / static_cast<double>(hot_n) : 0.0;
  return out;
}

std::uint64_t fold_training_seed(std::uint64_t seed, std::size_t fold) { return derive_seed(seed, "fold", fold); }

std::vector<ReportRow> MetricsReport::aggregates() const {
  std::vector<ReportRow> out;
  for (const auto& r : rows) {
    if (r.fold == "mean") out.push_back(r);
  }
  return out;
}

MetricsReport cross_validate(const std::vector<ModelConfig>& configs, const TrainConfig& train, const Dataset& dataset,
                             std::uint64_t seed, const CrossValidationOptions& options) {
  if (configs.empty()) throw ConfigError("cross_validate: no configurations given");
  for (const auto& c : configs) c.validate();
  train.validate();
  const auto folds = make_folds(dataset.patient_ids(), options.k, seed);

  MetricsReport report;
  report.seed = seed;
  report.folds = folds.size();
  report.pooling = options.pooling;
  report.configs = configs;
  report.train_config_json = train_config_to_json(train);
  for (const auto& f : folds) report.fold_hashes.push_back(f.train_hash());

  for (const auto& config : configs) {
    std::vector<Metrics> per_fold;
    for (const auto& fold : folds) {
      TrainConfig tc = train;
      tc.seed = fold_training_seed(seed, fold.fold);
      TrainResult trained = msamseg::train(config, tc, dataset, fold);
      if (options.checkpoint_dir) {
        save_checkpoint(*options.checkpoint_dir / config_slug(config) / ("fold" + std::to_string(fold.fold) + ".ckpt"),
                        trained.checkpoint);
      }
      if (options.on_trained) options.on_trained(config, fold.fold, trained);
      EvalOptions eo;
      eo.pooling = options.pooling;
      eo.batch_size = train.batch_size;
      const FoldEvaluation ev =
          evaluate(trained.checkpoint, dataset.slices_of(fold.test_ids), trained.checkpoint.meta.stats, eo);
      if (options.on_fold) options.on_fold(config, fold.fold, ev);
      report.rows.push_back({config.label(), std::to_string(fold.fold), ev.metrics});
      per_fold.push_back(ev.metrics);
    }
    report.rows.push_back({config.label(), "mean", mean_metrics(per_fold)});
  }
  return report;
}

std::vector<ModelConfig> table1_matrix(const ModelConfig& base) {
  const std::pair<BackboneInput, MsamInput> rows[] = {
      {BackboneInput::kCT, MsamInput::kOff},      {BackboneInput::kPET, MsamInput::kOff},
      {BackboneInput::kPETCT, MsamInput::kOff},   {BackboneInput::kCT, MsamInput::kPET},
      {BackboneInput::kPET, MsamInput::kPET},     {BackboneInput::kPETCT, MsamInput::kPET},
      {BackboneInput::kCT, MsamInput::kPETCT},    {BackboneInput::kPETCT, MsamInput::kPETCT},
  };
  std::vector<ModelConfig> out;
  for (const auto& [b, m] : rows) {
    ModelConfig c = base;
    c.backbone_input = b;
    c.msam_input = m;
    out.push_back(c);
  }
  return out;
}

std::string config_slug(const ModelConfig& config) {
  auto lower = [](std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
  };
  std::string s = lower(to_string(config.backbone_input));
  if (config.msam_enabled()) s += "_msam-" + lower(to_string(config.msam_input));
  return s;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::string out = "config,fold,precision,sensitivity,specificity,dsc\n";
  for (const auto& r : report.rows) {
    out += r.config + "," + r.fold + "," + fixed(r.metrics.precision, 6) + "," + fixed(r.metrics.sensitivity, 6) + "," +
           fixed(r.metrics.specificity, 6) + "," + fixed(r.metrics.dsc, 6) + "\n";
  }
  write_text(path, out);
}

void write_report_summary(const std::filesystem::path& path, const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["seed"] = report.seed;
  j["folds"] = report.folds;
  j["pooling"] = to_string(report.pooling);
  j["fold_train_hashes"] = report.fold_hashes;
  j["train_config"] = nlohmann::ordered_json::parse(report.train_config_json);
  std::string configs_blob;
  auto& configs = j["configs"] = nlohmann::ordered_json::array();
  for (const auto& c : report.configs) {
    configs.push_back(nlohmann::ordered_json::parse(model_config_to_json(c)));
    configs_blob += model_config_to_json(c);
  }
  configs_blob += report.train_config_json;
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(configs_blob)));
  j["config_hash"] = hash;
  auto& agg = j["aggregate"] = nlohmann::ordered_json::array();
  for (const auto& r : report.aggregates()) {
    nlohmann::ordered_json row;
    row["config"] = r.config;
    row["precision"] = r.metrics.precision;
    row["sensitivity"] = r.metrics.sensitivity;
    row["specificity"] = r.metrics.specificity;
    row["dsc"] = r.metrics.dsc;
    agg.push_back(row);
  }
  write_text(path, j.dump(2) + "\n");
}

std::string format_comparison_table(const MetricsReport& report) {
  std::ostringstream s;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %10s %12s %12s %8s\n", "Method", "Precision", "Sensitivity", "Specificity",
                "DSC");
  s << line;
  for (const auto& r : report.aggregates()) {
    std::snprintf(line, sizeof line, "%-26s %10.2f %12.2f %12.2f %8.2f\n", r.config.c_str(), 100 * r.metrics.precision,
                  100 * r.metrics.sensitivity, 100 * r.metrics.specificity, 100 * r.metrics.dsc);
    s << line;
  }
  return s.str();
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != height * width) throw ShapeError("write_pgm: pixel count does not match dimensions");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (!f || magic != "P5" || maxval != 255) throw LoadError(path.string() + " is not an 8-bit binary PGM");
  f.get();
  PgmImage img{h, w, std::vector<std::uint8_t>(h * w)};
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw LoadError(path.string() + " is truncated");
  return img;
}

std::vector<std::uint8_t> quantize_unit_range(std::span<const float> plane) {
  std::vector<std::uint8_t> out(plane.size(), 0);
  if (plane.empty()) return out;
  const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
  const double min = *lo, range = static_cast<double>(*hi) - min;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < plane.size(); ++i) {
    const double v = (static_cast<double>(plane[i]) - min) / range * 255.0;
    out[i] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
  }
  return out;
}

void export_attention(const Tensor<float>& map, const std::filesystem::path& path, std::size_t index) {
  const auto& s = map.shape();
  if (s.c != 1 || index >= s.n) throw ShapeError("export_attention: expected (N,1,H,W), got " + to_string(s));
  write_pgm(path, s.h, s.w, quantize_unit_range({map.plane(index, 0), s.plane()}));
}

void export_mask(const Tensor<float>& mask, const std::filesystem::path& path, std::size_t index) {
  const auto& s = mask.shape();
  if (s.c != 1 || index >= s.n) throw ShapeError("export_mask: expected (N,1,H,W), got " + to_string(s));
  std::vector<std::uint8_t> px(s.plane());
  const float* m = mask.plane(index, 0);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m[i] > 0.5f ? 255 : 0;
  write_pgm(path, s.h, s.w, px);
}

std::string export_name(const std::string& patient_id, int slice_index, const std::string& kind) {
  return patient_id + "_" + std::to_string(slice_index) + "_" + kind + ".pgm";
}

}  // namespace msamseg
