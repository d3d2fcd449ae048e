#include "run_config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace msamseg::cli {

namespace {

using Json = nlohmann::json;

void check_keys(const Json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const Json& obj, const std::string& where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type: " + obj.at(key).dump());
  }
}

void read_range(const Json& obj, const std::string& where, const char* key, IntRange& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw ConfigError(where + "." + key + " must be [min, max]");
  }
  out = {v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  check_keys(root, "config", {"model", "training", "data", "evaluation"});

  if (root.contains("model")) {
    const auto& m = root["model"];
    check_keys(m, "model", {"backbone_input", "msam_input", "depth", "base_width", "height", "width"});
    std::string backbone = to_string(c.model.backbone_input), msam = to_string(c.model.msam_input);
    read(m, "model", "backbone_input", backbone);
    read(m, "model", "msam_input", msam);
    c.model.backbone_input = parse_backbone_input(backbone);
    c.model.msam_input = parse_msam_input(msam);
    read(m, "model", "depth", c.model.depth);
    read(m, "model", "base_width", c.model.base_width);
    read(m, "model", "height", c.model.height);
    read(m, "model", "width", c.model.width);
  }
  if (root.contains("training")) {
    const auto& t = root["training"];
    check_keys(t, "training",
               {"epochs", "batch_size", "augment", "seed", "checkpoint_every", "lr", "beta1", "beta2", "eps"});
    read(t, "training", "epochs", c.training.epochs);
    read(t, "training", "batch_size", c.training.batch_size);
    read(t, "training", "augment", c.training.augment);
    read(t, "training", "seed", c.training.seed);
    read(t, "training", "checkpoint_every", c.training.checkpoint_every);
    read(t, "training", "lr", c.training.adam.lr);
    read(t, "training", "beta1", c.training.adam.beta1);
    read(t, "training", "beta2", c.training.adam.beta2);
    read(t, "training", "eps", c.training.adam.eps);
  }
  if (root.contains("data")) {
    const auto& d = root["data"];
    check_keys(d, "data", {"path", "phantom"});
    if (d.contains("path") && !d["path"].is_null()) {
      std::string p;
      read(d, "data", "path", p);
      c.data_path = p;
    }
    if (d.contains("phantom")) {
      const auto& p = d["phantom"];
      const std::string w = "data.phantom";
      check_keys(p, w,
                 {"patients", "slices_per_patient", "height", "width", "tumors_per_slice",
                  "benign_hotspots_per_slice", "ct_tumor_contrast", "pet_tumor_uptake", "pet_benign_uptake",
                  "pet_noise", "ct_noise", "seed"});
      read(p, w, "patients", c.phantom.patients);
      read_range(p, w, "slices_per_patient", c.phantom.slices_per_patient);
      read(p, w, "height", c.phantom.height);
      read(p, w, "width", c.phantom.width);
      read_range(p, w, "tumors_per_slice", c.phantom.tumors_per_slice);
      read_range(p, w, "benign_hotspots_per_slice", c.phantom.benign_hotspots_per_slice);
      read(p, w, "ct_tumor_contrast", c.phantom.ct_tumor_contrast);
      read(p, w, "pet_tumor_uptake", c.phantom.pet_tumor_uptake);
      read(p, w, "pet_benign_uptake", c.phantom.pet_benign_uptake);
      read(p, w, "pet_noise", c.phantom.pet_noise);
      read(p, w, "ct_noise", c.phantom.ct_noise);
      read(p, w, "seed", c.phantom.seed);
    }
  }
  if (root.contains("evaluation")) {
    const auto& e = root["evaluation"];
    check_keys(e, "evaluation", {"folds", "pooling", "report", "summary"});
    read(e, "evaluation", "folds", c.evaluation.folds);
    std::string pooling = to_string(c.evaluation.pooling);
    read(e, "evaluation", "pooling", pooling);
    c.evaluation.pooling = parse_pooling(pooling);
    read(e, "evaluation", "report", c.evaluation.report);
    read(e, "evaluation", "summary", c.evaluation.summary);
  }
  c.model.validate();
  c.training.validate();
  c.phantom.validate();
  if (c.evaluation.folds < 2) throw ConfigError("evaluation.folds must be at least 2");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream s;
  s << f.rdbuf();
  return parse_run_config(s.str());
}

std::string run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = nlohmann::ordered_json::parse(model_config_to_json(c.model));
  auto& t = j["training"];
  t["epochs"] = c.training.epochs;
  t["batch_size"] = c.training.batch_size;
  t["augment"] = c.training.augment;
  t["seed"] = c.training.seed;
  t["checkpoint_every"] = c.training.checkpoint_every;
  t["lr"] = c.training.adam.lr;
  t["beta1"] = c.training.adam.beta1;
  t["beta2"] = c.training.adam.beta2;
  t["eps"] = c.training.adam.eps;
  auto& d = j["data"];
  d["path"] = c.data_path ? nlohmann::ordered_json(*c.data_path) : nlohmann::ordered_json(nullptr);
  auto& p = d["phantom"];
  p["patients"] = c.phantom.patients;
  p["slices_per_patient"] = {c.phantom.slices_per_patient.min, c.phantom.slices_per_patient.max};
  p["height"] = c.phantom.height;
  p["width"] = c.phantom.width;
  p["tumors_per_slice"] = {c.phantom.tumors_per_slice.min, c.phantom.tumors_per_slice.max};
  p["benign_hotspots_per_slice"] = {c.phantom.benign_hotspots_per_slice.min, c.phantom.benign_hotspots_per_slice.max};
  p["ct_tumor_contrast"] = c.phantom.ct_tumor_contrast;
  p["pet_tumor_uptake"] = c.phantom.pet_tumor_uptake;
  p["pet_benign_uptake"] = c.phantom.pet_benign_uptake;
  p["pet_noise"] = c.phantom.pet_noise;
  p["ct_noise"] = c.phantom.ct_noise;
  p["seed"] = c.phantom.seed;
  auto& e = j["evaluation"];
  e["folds"] = c.evaluation.folds;
  e["pooling"] = to_string(c.evaluation.pooling);
  e["report"] = c.evaluation.report;
  e["summary"] = c.evaluation.summary;
  return j.dump(2) + "\n";
}

}  // namespace msamseg::cli
