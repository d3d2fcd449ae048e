#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "msamseg/data.hpp"
#include "msamseg/kernels.hpp"
#include "msamseg/network.hpp"
#include "msamseg/rng.hpp"

namespace msamseg::test {

inline Tensor<float> random_image(std::size_t n, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, 1, size, size});
  for (auto& v : t.storage()) v = static_cast<float>(rng.normal());
  return t;
}

inline Tensor<float> concat(const Tensor<float>& a, const Tensor<float>& b) {
  return kernels::concat_channels_forward(a, b);
}

// Depth 2, width 4, 16x16, CT backbone.
inline ModelConfig small_config(MsamInput msam, BackboneInput backbone = BackboneInput::kCT) {
  ModelConfig c;
  c.backbone_input = backbone;
  c.msam_input = msam;
  c.depth = 2;
  c.base_width = 4;
  c.height = 16;
  c.width = 16;
  return c;
}

// Initial parameters with the zero biases redrawn.
inline NetworkParams<float> randomized_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = build_model<float>(c, seed);
  Rng rng(seed + 1000);
  for (auto& e : p.entries) {
    if (e.name.ends_with(".bias"))
      for (auto& v : e.value.storage()) v = static_cast<float>(rng.normal(0.0, 0.1));
  }
  return p;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("msamseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// A few small patients, quick enough to train on in unit tests.
inline PhantomSpec tiny_phantom(int patients = 6, std::uint64_t seed = 3) {
  PhantomSpec s;
  s.patients = patients;
  s.slices_per_patient = {2, 3};
  s.height = 16;
  s.width = 16;
  s.seed = seed;
  return s;
}

inline Dataset tiny_dataset(int patients = 6, std::uint64_t seed = 3) {
  const auto spec = tiny_phantom(patients, seed);
  return make_dataset(generate_phantom_slices(spec), spec.height, spec.width);
}

}  // namespace msamseg::test
