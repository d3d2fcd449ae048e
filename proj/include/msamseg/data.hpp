#pragma once

// Synthetic PET-CT phantoms, dataset persistence, and the preprocessing
// protocol: tumour-slice filtering, patient-level folds, training-fold
// normalisation and on-the-fly flip/rotation augmentation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msamseg/rng.hpp"
#include "msamseg/tensor.hpp"

namespace msamseg {

struct SliceTriplet {
  Tensor<float> pet;   // (1,1,H,W)
  Tensor<float> ct;    // (1,1,H,W)
  Tensor<float> mask;  // (1,1,H,W), values in {0,1}
  // Pixels of benign high-uptake structures. Analysis-only annotation, never
  // used for training.
  std::optional<Tensor<float>> hotspots;
  std::string patient_id;
  int slice_index = 0;
};

struct IntRange {
  int min = 0;
  int max = 0;
};

struct PhantomSpec {
  int patients = 50;
  IntRange slices_per_patient{3, 5};
  std::size_t height = 64;
  std::size_t width = 64;
  IntRange tumors_per_slice{1, 2};
  IntRange benign_hotspots_per_slice{0, 2};
  double ct_tumor_contrast = 0.05;
  double pet_tumor_uptake = 4.0;
  double pet_benign_uptake = 4.0;
  double pet_noise = 0.15;
  double ct_noise = 0.05;
  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
};

// Slices of every patient, in patient then slice order. Deterministic in the
// spec; each patient draws from its own sub-seed.
std::vector<SliceTriplet> generate_phantom_slices(const PhantomSpec& spec);

// Generates and writes a dataset directory; returns the manifest path.
std::filesystem::path generate_phantoms(const PhantomSpec& spec, const std::filesystem::path& out_dir);

// Writes slices plus manifest.json. Throws IoError.
std::filesystem::path write_dataset(const std::filesystem::path& out_dir, const std::vector<SliceTriplet>& slices,
                                    std::size_t height, std::size_t width, const std::string& generator_json = "");

struct PatientSlices {
  std::string patient_id;
  std::vector<SliceTriplet> slices;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<PatientSlices> patients;

  std::vector<std::string> patient_ids() const;
  std::vector<SliceTriplet> all_slices() const;
  // Slices of the listed patients, in dataset order.
  std::vector<SliceTriplet> slices_of(const std::vector<std::string>& ids) const;
};

// Groups slices by patient in order of first appearance.
Dataset make_dataset(std::vector<SliceTriplet> slices, std::size_t height, std::size_t width);

// Accepts either the manifest path or its directory. Throws LoadError naming
// the offending file or slice.
Dataset load_dataset(const std::filesystem::path& manifest);

// CRC-32 (zlib polynomial) over a byte range, continuing from `crc`.
std::uint32_t crc32_bytes(const void* data, std::size_t size, std::uint32_t crc = 0);

struct FoldSplit {
  std::size_t fold = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;

  // Stable identifier of the training partition.
  std::uint64_t train_hash() const;
};

// Seeded shuffle, then contiguous partition into k test blocks; the first
// (patients mod k) blocks are one larger. Throws ConfigError when k is out of
// range.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& patient_ids, std::size_t k, std::uint64_t seed);

enum class Modality { kPET, kCT };

struct NormalizationStats {
  double mean = 0.0;
  double stddev = 1.0;
  static constexpr double kStdFloor = 1e-6;
};

// Population statistics over every pixel of one modality. Throws ConfigError
// on an empty set.
NormalizationStats compute_stats(const std::vector<SliceTriplet>& training, Modality modality);

Tensor<float> normalize(const Tensor<float>& image, const NormalizationStats& stats);

struct FoldStats {
  NormalizationStats pet;
  NormalizationStats ct;
  std::uint64_t fold_hash = 0;  // FoldSplit::train_hash of the source fold
};

FoldStats compute_fold_stats(const std::vector<SliceTriplet>& training, std::uint64_t fold_hash);

// PET and CT normalised with the fold statistics; the masks pass through.
SliceTriplet normalize_triplet(const SliceTriplet& t, const FoldStats& stats);

enum class Transform { kIdentity, kHFlip, kVFlip, kRot90, kRot180, kRot270 };
inline constexpr std::size_t kTransformCount = 6;

Transform inverse(Transform t);
// Throws ConfigError for rotations of non-square images.
Tensor<float> apply_transform(const Tensor<float>& image, Transform t);
SliceTriplet apply_transform(const SliceTriplet& triplet, Transform t);

// Draws one transform uniformly from the six options (one uniform_int(6)
// draw) and applies it to every image of the triplet.
SliceTriplet augment(const SliceTriplet& triplet, Rng& rng, Transform* chosen = nullptr);

bool has_tumor(const SliceTriplet& t);
std::vector<SliceTriplet> filter_tumor_slices(const std::vector<SliceTriplet>& triplets);

}  // namespace msamseg
