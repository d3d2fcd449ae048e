#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "msamseg/data.hpp"
#include "msamseg/errors.hpp"

namespace msamseg {

namespace fs = std::filesystem;

std::uint32_t crc32_bytes(const void* data, std::size_t size, std::uint32_t crc) {
  const auto* bytes = static_cast<const Bytef*>(data);
  uLong c = crc;
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    c = ::crc32(c, bytes, chunk);
    bytes += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

namespace {

constexpr int kSchemaVersion = 1;

std::vector<char> float_bytes(const Tensor<float>& t) {
  std::vector<char> out(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

std::vector<char> mask_bytes(const Tensor<float>& t) {
  std::vector<char> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] != 0.0f ? 1 : 0;
  return out;
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("missing or unreadable file " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(8, '0');
  for (int i = 7; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

std::string slice_stem(const SliceTriplet& t) {
  std::string idx = std::to_string(t.slice_index);
  if (idx.size() < 2) idx.insert(0, 2 - idx.size(), '0');
  return t.patient_id + "_s" + idx;
}

Tensor<float> decode_floats(const std::vector<char>& bytes, std::size_t h, std::size_t w, const std::string& what) {
  if (bytes.size() != h * w * 4) {
    throw LoadError(what + ": expected " + std::to_string(h * w * 4) + " bytes, found " + std::to_string(bytes.size()));
  }
  Tensor<float> t(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    t[i] = std::bit_cast<float>(bits);
  }
  return t;
}

Tensor<float> decode_mask(const std::vector<char>& bytes, std::size_t h, std::size_t w, const std::string& what) {
  if (bytes.size() != h * w) {
    throw LoadError(what + ": expected " + std::to_string(h * w) + " bytes, found " + std::to_string(bytes.size()));
  }
  Tensor<float> t(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto v = static_cast<unsigned char>(bytes[i]);
    if (v > 1) {
      throw LoadError(what + ": mask value " + std::to_string(v) + " at pixel " + std::to_string(i) +
                      " is not binary");
    }
    t[i] = static_cast<float>(v);
  }
  return t;
}

}  // namespace

fs::path write_dataset(const fs::path& out_dir, const std::vector<SliceTriplet>& slices, std::size_t height,
                       std::size_t width, const std::string& generator_json) {
  std::error_code ec;
  fs::create_directories(out_dir / "slices", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "slices").string() + ": " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["height"] = height;
  manifest["width"] = width;
  if (!generator_json.empty()) manifest["generator"] = nlohmann::ordered_json::parse(generator_json);
  auto records = nlohmann::ordered_json::array();
  for (const auto& t : slices) {
    if (t.pet.shape() != Shape{1, 1, height, width} || t.ct.shape() != t.pet.shape() || t.mask.shape() != t.pet.shape()) {
      throw ShapeError("slice " + slice_stem(t) + " does not match dataset size");
    }
    const std::string stem = slice_stem(t);
    const auto pet = float_bytes(t.pet);
    const auto ct = float_bytes(t.ct);
    const auto mask = mask_bytes(t.mask);
    write_file(out_dir / "slices" / (stem + "_pet.f32"), pet);
    write_file(out_dir / "slices" / (stem + "_ct.f32"), ct);
    write_file(out_dir / "slices" / (stem + "_mask.u8"), mask);
    std::uint32_t crc = crc32_bytes(pet.data(), pet.size());
    crc = crc32_bytes(ct.data(), ct.size(), crc);
    crc = crc32_bytes(mask.data(), mask.size(), crc);

    nlohmann::ordered_json r;
    r["patient_id"] = t.patient_id;
    r["slice_index"] = t.slice_index;
    r["pet_file"] = "slices/" + stem + "_pet.f32";
    r["ct_file"] = "slices/" + stem + "_ct.f32";
    r["mask_file"] = "slices/" + stem + "_mask.u8";
    if (t.hotspots) {
      const auto hot = mask_bytes(*t.hotspots);
      write_file(out_dir / "slices" / (stem + "_hotspot.u8"), hot);
      r["hotspot_file"] = "slices/" + stem + "_hotspot.u8";
    }
    r["checksum"] = hex32(crc);
    records.push_back(std::move(r));
  }
  manifest["slices"] = std::move(records);

  const fs::path path = out_dir / "manifest.json";
  const std::string text = manifest.dump(2) + "\n";
  write_file(path, std::vector<char>(text.begin(), text.end()));
  return path;
}

Dataset load_dataset(const fs::path& manifest_path) {
  fs::path path = manifest_path;
  if (fs::is_directory(path)) path /= "manifest.json";
  const fs::path root = path.parent_path();
  nlohmann::json manifest;
  try {
    const auto bytes = read_file(path);
    manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + path.string() + ": " + e.what());
  }

  std::size_t height = 0, width = 0;
  std::vector<SliceTriplet> slices;
  try {
    if (manifest.at("schema_version").get<int>() != kSchemaVersion) {
      throw LoadError("unsupported dataset schema version " + manifest.at("schema_version").dump());
    }
    height = manifest.at("height").get<std::size_t>();
    width = manifest.at("width").get<std::size_t>();
    for (const auto& r : manifest.at("slices")) {
      SliceTriplet t;
      t.patient_id = r.at("patient_id").get<std::string>();
      t.slice_index = r.at("slice_index").get<int>();
      const std::string name = t.patient_id + " slice " + std::to_string(t.slice_index);
      const auto pet = read_file(root / r.at("pet_file").get<std::string>());
      const auto ct = read_file(root / r.at("ct_file").get<std::string>());
      const auto mask = read_file(root / r.at("mask_file").get<std::string>());
      std::uint32_t crc = crc32_bytes(pet.data(), pet.size());
      crc = crc32_bytes(ct.data(), ct.size(), crc);
      crc = crc32_bytes(mask.data(), mask.size(), crc);
      if (hex32(crc) != r.at("checksum").get<std::string>()) {
        throw LoadError(name + ": checksum mismatch (manifest " + r.at("checksum").get<std::string>() + ", files " +
                        hex32(crc) + ")");
      }
      t.pet = decode_floats(pet, height, width, name + " PET");
      t.ct = decode_floats(ct, height, width, name + " CT");
      t.mask = decode_mask(mask, height, width, name + " mask");
      if (r.contains("hotspot_file")) {
        t.hotspots = decode_mask(read_file(root / r.at("hotspot_file").get<std::string>()), height, width,
                                 name + " hotspot mask");
      }
      slices.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + path.string() + ": " + e.what());
  }
  return make_dataset(std::move(slices), height, width);
}

Dataset make_dataset(std::vector<SliceTriplet> slices, std::size_t height, std::size_t width) {
  Dataset ds;
  ds.height = height;
  ds.width = width;
  std::map<std::string, std::size_t> patient_index;
  for (auto& t : slices) {
    auto [it, inserted] = patient_index.try_emplace(t.patient_id, ds.patients.size());
    if (inserted) ds.patients.push_back({t.patient_id, {}});
    ds.patients[it->second].slices.push_back(std::move(t));
  }
  return ds;
}

fs::path generate_phantoms(const PhantomSpec& spec, const fs::path& out_dir) {
  const auto slices = generate_phantom_slices(spec);
  nlohmann::ordered_json g;
  g["kind"] = "phantom";
  g["patients"] = spec.patients;
  g["slices_per_patient"] = {spec.slices_per_patient.min, spec.slices_per_patient.max};
  g["tumors_per_slice"] = {spec.tumors_per_slice.min, spec.tumors_per_slice.max};
  g["benign_hotspots_per_slice"] = {spec.benign_hotspots_per_slice.min, spec.benign_hotspots_per_slice.max};
  g["ct_tumor_contrast"] = spec.ct_tumor_contrast;
  g["pet_tumor_uptake"] = spec.pet_tumor_uptake;
  g["pet_benign_uptake"] = spec.pet_benign_uptake;
  g["pet_noise"] = spec.pet_noise;
  g["ct_noise"] = spec.ct_noise;
  g["seed"] = spec.seed;
  return write_dataset(out_dir, slices, spec.height, spec.width, g.dump());
}

std::vector<std::string> Dataset::patient_ids() const {
  std::vector<std::string> ids;
  for (const auto& p : patients) ids.push_back(p.patient_id);
  return ids;
}

std::vector<SliceTriplet> Dataset::all_slices() const {
  std::vector<SliceTriplet> out;
  for (const auto& p : patients) out.insert(out.end(), p.slices.begin(), p.slices.end());
  return out;
}

std::vector<SliceTriplet> Dataset::slices_of(const std::vector<std::string>& ids) const {
  std::vector<SliceTriplet> out;
  for (const auto& p : patients) {
    if (std::find(ids.begin(), ids.end(), p.patient_id) != ids.end()) {
      out.insert(out.end(), p.slices.begin(), p.slices.end());
    }
  }
  return out;
}

}  // namespace msamseg
