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
#include "msamseg/training.hpp"

namespace msamseg {

// Pixel counts with tumour as the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Masks must share a shape and hold only 0/1 (ShapeError / ValidationError).
ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& gt);

// Empty prediction scores precision 0 against a nonempty truth and 1 when the
// truth is empty too. Sensitivity / specificity are 1 when the class they
// measure is absent. Both masks empty gives DSC 1.
double precision(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);
double dsc(const ConfusionCounts& c);

struct Metrics {
  double precision = 0, sensitivity = 0, specificity = 0, dsc = 0;
};

Metrics metrics_of(const ConfusionCounts& c);
Metrics mean_metrics(const std::vector<Metrics>& items);

// kPerSlice averages per-slice metrics; kGlobalPixel pools all pixel counts of
// a fold before computing the metrics once.
enum class Pooling { kPerSlice, kGlobalPixel };
std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

struct SliceResult {
  std::string patient_id;
  int slice_index = 0;
  ConfusionCounts counts;
  Metrics metrics;
};

struct FoldEvaluation {
  Metrics metrics;
  std::vector<SliceResult> slices;
};

struct EvalOptions {
  Pooling pooling = Pooling::kPerSlice;
  std::size_t batch_size = 4;
  // Receives each evaluated slice (raw, unnormalised), its predicted mask and
  // the attention map when the model has one.
  std::function<void(const SliceTriplet&, const Tensor<float>& pred, const Tensor<float>* attention)> on_slice;
};

// Evaluates `checkpoint` on raw test triplets. Slices without tumour pixels are
// skipped. `stats` must be the training statistics the checkpoint was trained
// with (fold hash compared; ValidationError otherwise).
FoldEvaluation evaluate(const Checkpoint& checkpoint, const std::vector<SliceTriplet>& test, const FoldStats& stats,
                        const EvalOptions& options = {});

// Attention statistics over test slices containing both tumour and benign
// hotspot pixels. Means are pooled over pixels of all such slices.
struct AttentionContrast {
  double tumor_mean = 0;
  double hotspot_mean = 0;
  double min_value = 0;  // minimum attention over every evaluated pixel
  std::size_t slices = 0;
};

AttentionContrast attention_contrast(const Checkpoint& checkpoint, const std::vector<SliceTriplet>& test,
                                     std::size_t batch_size = 4);

// The training seed used for fold `fold` under master seed `seed`; shared by
// every configuration so that only the model differs between rows.
std::uint64_t fold_training_seed(std::uint64_t seed, std::size_t fold);

struct ReportRow {
  std::string config;  // ModelConfig::label()
  std::string fold;    // fold index, or "mean"
  Metrics metrics;
};

struct MetricsReport {
  std::vector<ReportRow> rows;  // per config: k fold rows, then the mean row
  std::uint64_t seed = 0;
  std::size_t folds = 0;
  std::vector<std::uint64_t> fold_hashes;
  std::string train_config_json;
  Pooling pooling = Pooling::kPerSlice;
  std::vector<ModelConfig> configs;

  // Mean row for each configuration in input order.
  std::vector<ReportRow> aggregates() const;
};

struct CrossValidationOptions {
  std::size_t k = 5;
  Pooling pooling = Pooling::kPerSlice;
  // When set, final checkpoints go to <dir>/<config slug>/fold<i>.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const ModelConfig&, std::size_t fold, const FoldEvaluation&)> on_fold;
  std::function<void(const ModelConfig&, std::size_t fold, const TrainResult&)> on_trained;
};

// One shared fold split (from `seed`) reused for every configuration.
// train.seed is replaced by fold_training_seed(seed, fold).
MetricsReport cross_validate(const std::vector<ModelConfig>& configs, const TrainConfig& train, const Dataset& dataset,
                             std::uint64_t seed, const CrossValidationOptions& options = {});

// The eight-row ablation matrix: CT, PET, PETCT without attention; CT and PET
// with PET attention; then PETCT+MSAM(PET), CT+MSAM(PETCT), PETCT+MSAM(PETCT).
std::vector<ModelConfig> table1_matrix(const ModelConfig& base);

// File-name-safe configuration tag, e.g. "ct_msam-pet".
std::string config_slug(const ModelConfig& config);

// CSV "config,fold,precision,sensitivity,specificity,dsc".
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);
// JSON summary: run metadata plus aggregate means per configuration.
void write_report_summary(const std::filesystem::path& path, const MetricsReport& report);
// Plain-text comparison table (mean %, one row per configuration).
std::string format_comparison_table(const MetricsReport& report);

// 8-bit binary PGM ("P5", maxval 255).
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& pixels);
struct PgmImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};
PgmImage read_pgm(const std::filesystem::path& path);

// Min-max normalisation of a single plane to 0..255, rounded half-up; a
// constant plane maps to zeros.
std::vector<std::uint8_t> quantize_unit_range(std::span<const float> plane);

// Writes a (1,1,H,W) attention map, or plane `index` of an (N,1,H,W) batch.
void export_attention(const Tensor<float>& map, const std::filesystem::path& path, std::size_t index = 0);
// Binary mask as 0 / 255.
void export_mask(const Tensor<float>& mask, const std::filesystem::path& path, std::size_t index = 0);
// "{patient}_{slice}_{kind}.pgm"
std::string export_name(const std::string& patient_id, int slice_index, const std::string& kind);

}  // namespace msamseg
