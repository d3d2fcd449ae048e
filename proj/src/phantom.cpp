#include <algorithm>
#include <cmath>
#include <numbers>

#include "msamseg/data.hpp"
#include "msamseg/errors.hpp"

namespace msamseg {

void PhantomSpec::validate() const {
  auto check_range = [](const IntRange& r, int lo, const char* name) {
    if (r.min < lo || r.max < r.min) {
      throw ConfigError(std::string(name) + " range [" + std::to_string(r.min) + ", " + std::to_string(r.max) +
                        "] is empty or below " + std::to_string(lo));
    }
  };
  if (patients < 1) throw ConfigError("patients must be at least 1, got " + std::to_string(patients));
  check_range(slices_per_patient, 1, "slices_per_patient");
  check_range(tumors_per_slice, 1, "tumors_per_slice");
  check_range(benign_hotspots_per_slice, 0, "benign_hotspots_per_slice");
  if (height < 16 || width < 16) throw ConfigError("phantom size must be at least 16x16");
  if (ct_tumor_contrast < 0 || pet_tumor_uptake < 0 || pet_benign_uptake < 0 || pet_noise < 0 || ct_noise < 0) {
    throw ConfigError("contrasts, uptakes and noise levels must be nonnegative");
  }
}

namespace {

// Tissue values (arbitrary units). CT: air -1, soft tissue 0, lung -0.6,
// enhancing organ +0.5. PET: soft tissue 1, lung 0.6, organ 1.8 (physiologic
// uptake that frames the benign hotspots).
constexpr double kCtAir = -1.0;
constexpr double kCtLung = -0.6;
constexpr double kCtOrgan = 0.5;
constexpr double kPetAir = 0.05;
constexpr double kPetBody = 1.0;
constexpr double kPetLung = 0.6;
constexpr double kPetOrgan = 1.8;
constexpr double kCtTextureAmplitude = 0.08;
constexpr double kPetBlurSigma = 1.0;  // pixels at 64x64
constexpr double kLesionMargin = 2.0;  // pixels between lesions and the organ edge

struct Ellipse {
  double cy = 0, cx = 0, ry = 1, rx = 1, angle = 0;

  // <= 1 inside.
  double level(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return u * u + v * v;
  }
  bool contains(double y, double x) const { return level(y, x) <= 1.0; }

  Ellipse grown(double by) const { return {cy, cx, ry + by, rx + by, angle}; }
};

struct Blob {
  double cy, cx, sigma, amplitude;
};

struct Anatomy {
  Ellipse body;
  Ellipse organ;  // the enhancing organ that hosts benign hotspots
  std::vector<Ellipse> lungs;
  std::vector<Blob> texture;
};

Anatomy sample_anatomy(Rng& rng, double h, double w) {
  Anatomy a;
  a.body = {h / 2 + rng.uniform(-2, 2) * h / 64, w / 2 + rng.uniform(-2, 2) * w / 64, rng.uniform(0.36, 0.42) * h,
            rng.uniform(0.40, 0.45) * w, rng.uniform(-0.15, 0.15)};
  a.organ = {a.body.cy + rng.uniform(-0.08, 0.08) * h, a.body.cx + rng.uniform(-0.12, 0.12) * w,
             rng.uniform(0.11, 0.14) * h, rng.uniform(0.11, 0.15) * w, rng.uniform(0, std::numbers::pi)};
  const int lungs = static_cast<int>(rng.uniform_range(1, 2));
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  for (int i = 0; i < lungs; ++i) {
    const double dir = i == 0 ? side : -side;
    a.lungs.push_back({a.body.cy + rng.uniform(-0.05, 0.05) * h, a.body.cx + dir * rng.uniform(0.20, 0.25) * w,
                       rng.uniform(0.15, 0.20) * h, rng.uniform(0.08, 0.11) * w, rng.uniform(-0.3, 0.3)});
  }
  for (int i = 0; i < 4; ++i) {
    a.texture.push_back({a.body.cy + rng.uniform(-0.3, 0.3) * h, a.body.cx + rng.uniform(-0.3, 0.3) * w,
                         rng.uniform(0.10, 0.25) * h, rng.uniform(-kCtTextureAmplitude, kCtTextureAmplitude)});
  }
  return a;
}

Ellipse jitter(const Ellipse& e, Rng& rng, double px) {
  const double scale = rng.uniform(0.9, 1.1);
  return {e.cy + rng.uniform(-1.5, 1.5) * px, e.cx + rng.uniform(-1.5, 1.5) * px, e.ry * scale, e.rx * scale,
          e.angle + rng.uniform(-0.1, 0.1)};
}

// Lesion shape shared by tumours and benign hotspots.
Ellipse sample_lesion_shape(Rng& rng, double px) {
  Ellipse e;
  e.ry = rng.uniform(2.5, 6.0) * px;
  e.rx = e.ry * rng.uniform(0.6, 1.0);
  e.angle = rng.uniform(0, std::numbers::pi);
  return e;
}

bool ellipse_within(const Ellipse& inner, const Ellipse& outer) {
  for (int k = 0; k < 32; ++k) {
    const double t = 2 * std::numbers::pi * k / 32;
    const double c = std::cos(inner.angle);
    const double s = std::sin(inner.angle);
    const double u = inner.rx * std::cos(t);
    const double v = inner.ry * std::sin(t);
    if (!outer.contains(inner.cy + s * u + c * v, inner.cx + c * u - s * v)) return false;
  }
  return outer.contains(inner.cy, inner.cx);
}

bool ellipses_overlap(const Ellipse& a, const Ellipse& b) {
  // Conservative: compare against the bounding circles.
  const double ra = std::max(a.rx, a.ry);
  const double rb = std::max(b.rx, b.ry);
  return std::hypot(a.cy - b.cy, a.cx - b.cx) < ra + rb;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

void blur(std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(img.size());
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * img[y * w + clampi(static_cast<int>(x) + i, static_cast<int>(w))];
      tmp[y * w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[clampi(static_cast<int>(y) + i, static_cast<int>(h)) * w + x];
      img[y * w + x] = acc;
    }
  }
}

struct Lesion {
  Ellipse shape;
  double uptake;
};

SliceTriplet render_slice(const PhantomSpec& spec, const Anatomy& base, Rng& rng, const std::string& patient_id,
                          int slice_index) {
  const auto h = static_cast<double>(spec.height);
  const auto w = static_cast<double>(spec.width);
  const double px = h / 64.0;

  Anatomy a = base;
  a.organ = jitter(base.organ, rng, px);
  for (auto& l : a.lungs) l = jitter(l, rng, px);

  const int n_tumors = static_cast<int>(rng.uniform_range(spec.tumors_per_slice.min, spec.tumors_per_slice.max));
  const int n_hot = static_cast<int>(
      rng.uniform_range(spec.benign_hotspots_per_slice.min, spec.benign_hotspots_per_slice.max));

  std::vector<Lesion> tumors;
  std::vector<Lesion> hotspots;
  auto clear_of = [](const Ellipse& e, const std::vector<Lesion>& others) {
    return std::none_of(others.begin(), others.end(),
                        [&](const Lesion& o) { return ellipses_overlap(e.grown(kLesionMargin), o.shape); });
  };

  for (int i = 0; i < n_hot; ++i) {
    const double uptake = spec.pet_benign_uptake * rng.uniform(0.75, 1.25);
    for (int attempt = 0; attempt < 400; ++attempt) {
      Ellipse e = sample_lesion_shape(rng, px);
      // Shrink oversize draws so the hotspot fits inside the organ.
      const double limit = std::min(a.organ.rx, a.organ.ry) - 1.0 * px;
      if (std::max(e.rx, e.ry) > limit) {
        const double f = limit / std::max(e.rx, e.ry);
        e.rx *= f;
        e.ry *= f;
      }
      const double t = rng.uniform(0, 2 * std::numbers::pi);
      const double r = std::sqrt(rng.uniform());
      e.cy = a.organ.cy + r * a.organ.ry * std::sin(t);
      e.cx = a.organ.cx + r * a.organ.rx * std::cos(t);
      if (ellipse_within(e, a.organ) && clear_of(e, hotspots)) {
        hotspots.push_back({e, uptake});
        break;
      }
    }
  }

  for (int i = 0; i < n_tumors; ++i) {
    const double uptake = spec.pet_tumor_uptake * rng.uniform(0.75, 1.25);
    for (int attempt = 0; attempt < 400; ++attempt) {
      Ellipse e = sample_lesion_shape(rng, px);
      if (attempt >= 200) {
        e.rx *= 0.6;
        e.ry *= 0.6;
      }
      e.cy = rng.uniform(0, h);
      e.cx = rng.uniform(0, w);
      if (!ellipse_within(e, a.body)) continue;
      if (ellipses_overlap(e, a.organ.grown(kLesionMargin * px))) continue;
      if (!clear_of(e, tumors) || !clear_of(e, hotspots)) continue;
      tumors.push_back({e, uptake});
      break;
    }
  }

  const std::size_t H = spec.height;
  const std::size_t W = spec.width;
  std::vector<double> pet(H * W), ct(H * W);
  Tensor<float> mask(Shape{1, 1, H, W});
  Tensor<float> hot(Shape{1, 1, H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double yy = static_cast<double>(y) + 0.5;
      const double xx = static_cast<double>(x) + 0.5;
      double c = kCtAir;
      double p = kPetAir;
      if (a.body.contains(yy, xx)) {
        c = 0.0;
        p = kPetBody;
        for (const auto& l : a.lungs) {
          if (l.contains(yy, xx)) {
            c = kCtLung;
            p = kPetLung;
          }
        }
        if (a.organ.contains(yy, xx)) {
          c = kCtOrgan;
          p = kPetOrgan;
        }
        for (const auto& b : a.texture) {
          const double d2 = (yy - b.cy) * (yy - b.cy) + (xx - b.cx) * (xx - b.cx);
          c += b.amplitude * std::exp(-0.5 * d2 / (b.sigma * b.sigma));
        }
      }
      for (const auto& t : tumors) {
        if (t.shape.contains(yy, xx)) {
          c += spec.ct_tumor_contrast;
          p = t.uptake;
          mask[y * W + x] = 1.0f;
        }
      }
      for (const auto& s : hotspots) {
        if (s.shape.contains(yy, xx)) {
          p = s.uptake;
          hot[y * W + x] = 1.0f;
        }
      }
      pet[y * W + x] = p;
      ct[y * W + x] = c;
    }
  }

  // Every emitted slice carries tumour pixels: if the lesions rendered to
  // nothing (sub-pixel draws), mark the pixel nearest to the first centre.
  bool any = std::any_of(mask.data().begin(), mask.data().end(), [](float v) { return v > 0; });
  if (!any && !tumors.empty()) {
    const auto y = static_cast<std::size_t>(std::clamp(tumors[0].shape.cy, 0.0, h - 1));
    const auto x = static_cast<std::size_t>(std::clamp(tumors[0].shape.cx, 0.0, w - 1));
    mask[y * W + x] = 1.0f;
    pet[y * W + x] = tumors[0].uptake;
    ct[y * W + x] += spec.ct_tumor_contrast;
    any = true;
  }

  blur(pet, H, W, kPetBlurSigma * px);
  SliceTriplet out;
  out.pet = Tensor<float>(Shape{1, 1, H, W});
  out.ct = Tensor<float>(Shape{1, 1, H, W});
  for (std::size_t i = 0; i < H * W; ++i) {
    out.pet[i] = static_cast<float>(std::max(0.0, pet[i] + rng.normal(0.0, spec.pet_noise)));
  }
  for (std::size_t i = 0; i < H * W; ++i) out.ct[i] = static_cast<float>(ct[i] + rng.normal(0.0, spec.ct_noise));
  out.mask = std::move(mask);
  out.hotspots = std::move(hot);
  out.patient_id = patient_id;
  out.slice_index = slice_index;
  return out;
}

std::string patient_name(int index) {
  std::string digits = std::to_string(index);
  return "P" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

}  // namespace

std::vector<SliceTriplet> generate_phantom_slices(const PhantomSpec& spec) {
  spec.validate();
  std::vector<SliceTriplet> out;
  for (int p = 0; p < spec.patients; ++p) {
    const std::uint64_t patient_seed = derive_seed(spec.seed, "patient", static_cast<std::uint64_t>(p));
    Rng rng(patient_seed);
    const Anatomy anatomy = sample_anatomy(rng, static_cast<double>(spec.height), static_cast<double>(spec.width));
    const int slices = static_cast<int>(rng.uniform_range(spec.slices_per_patient.min, spec.slices_per_patient.max));
    for (int s = 0; s < slices; ++s) {
      Rng slice_rng(derive_seed(patient_seed, "slice", static_cast<std::uint64_t>(s)));
      SliceTriplet t = render_slice(spec, anatomy, slice_rng, patient_name(p), s);
      if (has_tumor(t)) out.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace msamseg
