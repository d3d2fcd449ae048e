#pragma once

// Run configuration file (JSON). Every section and key is optional; omitted
// keys keep the defaults below, unknown keys are rejected.
//
// {
//   "model":      { "backbone_input": "CT", "msam_input": "PET", "depth": 3,
//                   "base_width": 16, "height": 64, "width": 64 },
//   "training":   { "epochs": 60, "batch_size": 4, "augment": true, "seed": 1,
//                   "checkpoint_every": 0, "lr": 1e-4, "beta1": 0.9,
//                   "beta2": 0.999, "eps": 1e-8 },
//   "data":       { "path": null,
//                   "phantom": { "patients": 50, "slices_per_patient": [3, 5],
//                                "height": 64, "width": 64,
//                                "tumors_per_slice": [1, 2],
//                                "benign_hotspots_per_slice": [0, 2],
//                                "ct_tumor_contrast": 0.05,
//                                "pet_tumor_uptake": 4.0,
//                                "pet_benign_uptake": 4.0, "pet_noise": 0.15,
//                                "ct_noise": 0.05, "seed": 1 } },
//   "evaluation": { "folds": 5, "pooling": "per_slice",
//                   "report": "report.csv", "summary": "summary.json" }
// }

#include <filesystem>
#include <optional>
#include <string>

#include "msamseg/data.hpp"
#include "msamseg/evaluation.hpp"
#include "msamseg/network.hpp"
#include "msamseg/training.hpp"

namespace msamseg::cli {

struct EvaluationSection {
  std::size_t folds = 5;
  Pooling pooling = Pooling::kPerSlice;
  std::string report = "report.csv";
  std::string summary = "summary.json";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig training;
  std::optional<std::string> data_path;
  PhantomSpec phantom;
  EvaluationSection evaluation;
};

// Throws ConfigError naming the offending key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

}  // namespace msamseg::cli
