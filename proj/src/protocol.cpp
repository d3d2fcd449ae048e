#include <algorithm>
#include <cmath>
#include <numeric>

#include "msamseg/data.hpp"
#include "msamseg/errors.hpp"

namespace msamseg {

std::uint64_t FoldSplit::train_hash() const {
  std::vector<std::string> ids = train_ids;
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = fnv1a64("fold");
  for (const auto& id : ids) h = splitmix64(h ^ fnv1a64(id));
  return h;
}

std::vector<FoldSplit> make_folds(const std::vector<std::string>& patient_ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2, got " + std::to_string(k));
  if (k > patient_ids.size()) {
    throw ConfigError("cannot split " + std::to_string(patient_ids.size()) + " patients into " + std::to_string(k) +
                      " folds");
  }
  std::vector<std::string> order = patient_ids;
  Rng rng(derive_seed(seed, "folds"));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  const std::size_t base = order.size() / k;
  const std::size_t extra = order.size() % k;
  std::vector<FoldSplit> folds;
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t end = begin + base + (f < extra ? 1 : 0);
    FoldSplit split;
    split.fold = f;
    split.test_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
    for (const auto& id : patient_ids) {
      if (std::find(split.test_ids.begin(), split.test_ids.end(), id) == split.test_ids.end()) {
        split.train_ids.push_back(id);
      }
    }
    folds.push_back(std::move(split));
    begin = end;
  }
  return folds;
}

NormalizationStats compute_stats(const std::vector<SliceTriplet>& training, Modality modality) {
  if (training.empty()) throw ConfigError("cannot compute normalisation statistics of an empty training set");
  double sum = 0.0;
  std::size_t count = 0;
  auto image = [&](const SliceTriplet& t) -> const Tensor<float>& { return modality == Modality::kPET ? t.pet : t.ct; };
  for (const auto& t : training) {
    for (float v : image(t).data()) sum += v;
    count += image(t).size();
  }
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto& t : training) {
    for (float v : image(t).data()) sq += (v - mean) * (v - mean);
  }
  NormalizationStats s;
  s.mean = mean;
  s.stddev = std::max(std::sqrt(sq / static_cast<double>(count)), NormalizationStats::kStdFloor);
  return s;
}

Tensor<float> normalize(const Tensor<float>& image, const NormalizationStats& stats) {
  Tensor<float> out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(image[i]) - stats.mean) / stats.stddev);
  }
  return out;
}

FoldStats compute_fold_stats(const std::vector<SliceTriplet>& training, std::uint64_t fold_hash) {
  return {compute_stats(training, Modality::kPET), compute_stats(training, Modality::kCT), fold_hash};
}

SliceTriplet normalize_triplet(const SliceTriplet& t, const FoldStats& stats) {
  SliceTriplet out = t;
  out.pet = normalize(t.pet, stats.pet);
  out.ct = normalize(t.ct, stats.ct);
  return out;
}

Transform inverse(Transform t) {
  switch (t) {
    case Transform::kRot90: return Transform::kRot270;
    case Transform::kRot270: return Transform::kRot90;
    default: return t;
  }
}

Tensor<float> apply_transform(const Tensor<float>& image, Transform t) {
  const auto& s = image.shape();
  const bool rotation = t == Transform::kRot90 || t == Transform::kRot270;
  if ((rotation || t == Transform::kRot180) && s.h != s.w) {
    throw ConfigError("rotation augmentation requires square slices, got " + to_string(s));
  }
  if (t == Transform::kIdentity) return image;
  Tensor<float> out(s);
  const std::size_t H = s.h;
  const std::size_t W = s.w;
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const float* src = image.data().data() + p * s.plane();
    float* dst = out.data().data() + p * s.plane();
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        std::size_t sr = r;
        std::size_t sc = c;
        switch (t) {
          case Transform::kHFlip: sc = W - 1 - c; break;
          case Transform::kVFlip: sr = H - 1 - r; break;
          case Transform::kRot90: sr = c; sc = W - 1 - r; break;  // counter-clockwise
          case Transform::kRot180: sr = H - 1 - r; sc = W - 1 - c; break;
          case Transform::kRot270: sr = H - 1 - c; sc = r; break;
          case Transform::kIdentity: break;
        }
        dst[r * W + c] = src[sr * W + sc];
      }
    }
  }
  return out;
}

SliceTriplet apply_transform(const SliceTriplet& triplet, Transform t) {
  SliceTriplet out = triplet;
  out.pet = apply_transform(triplet.pet, t);
  out.ct = apply_transform(triplet.ct, t);
  out.mask = apply_transform(triplet.mask, t);
  if (triplet.hotspots) out.hotspots = apply_transform(*triplet.hotspots, t);
  return out;
}

SliceTriplet augment(const SliceTriplet& triplet, Rng& rng, Transform* chosen) {
  const auto t = static_cast<Transform>(rng.uniform_int(kTransformCount));
  if (chosen) *chosen = t;
  return apply_transform(triplet, t);
}

bool has_tumor(const SliceTriplet& t) {
  return std::any_of(t.mask.data().begin(), t.mask.data().end(), [](float v) { return v > 0.0f; });
}

std::vector<SliceTriplet> filter_tumor_slices(const std::vector<SliceTriplet>& triplets) {
  std::vector<SliceTriplet> out;
  std::copy_if(triplets.begin(), triplets.end(), std::back_inserter(out), has_tumor);
  return out;
}

}  // namespace msamseg
