#include "msamseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace msamseg {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'A', 'M', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const Tensor<float>& t) {
    for (float v : t.data()) f32(v);
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (pos_ + n > size_) throw LoadError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  void floats(Tensor<float>& t) {
    need(t.size() * 4);
    for (auto& v : t.data()) v = f32();
  }
  std::size_t position() const { return pos_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::string metadata_to_json(const TrainingMetadata& m) {
  nlohmann::ordered_json j;
  j["pet_mean"] = m.stats.pet.mean;
  j["pet_std"] = m.stats.pet.stddev;
  j["ct_mean"] = m.stats.ct.mean;
  j["ct_std"] = m.stats.ct.stddev;
  j["fold_hash"] = m.stats.fold_hash;
  j["seed"] = m.seed;
  j["epochs_completed"] = m.epochs_completed;
  j["train_config"] = nlohmann::ordered_json::parse(m.train_config_json);
  return j.dump();
}

TrainingMetadata metadata_from_json(const std::string& s) {
  TrainingMetadata m;
  const auto j = nlohmann::ordered_json::parse(s);
  m.stats.pet.mean = j.at("pet_mean").get<double>();
  m.stats.pet.stddev = j.at("pet_std").get<double>();
  m.stats.ct.mean = j.at("ct_mean").get<double>();
  m.stats.ct.stddev = j.at("ct_std").get<double>();
  m.stats.fold_hash = j.at("fold_hash").get<std::uint64_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.epochs_completed = j.at("epochs_completed").get<std::size_t>();
  m.train_config_json = j.at("train_config").dump();
  return m;
}

}  // namespace

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(model_config_to_json(ckpt.config));
  w.str(metadata_to_json(ckpt.meta));
  w.u32(static_cast<std::uint32_t>(ckpt.params.entries.size()));
  for (const auto& e : ckpt.params.entries) {
    w.str(e.name);
    const auto& s = e.value.shape();
    for (auto d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    w.floats(e.value);
  }
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const auto& o = *ckpt.optimizer;
    if (o.first_moment.size() != ckpt.params.entries.size()) {
      throw ShapeError("optimizer state does not match parameter list");
    }
    w.u64(o.step);
    w.f64(o.hyper.lr);
    w.f64(o.hyper.beta1);
    w.f64(o.hyper.beta2);
    w.f64(o.hyper.eps);
    for (const auto& m : o.first_moment) w.floats(m);
    for (const auto& v : o.second_moment) w.floats(v);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_bytes(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < sizeof kMagic + 8) throw LoadError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw LoadError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  const std::uint32_t stored = tail.u32();
  if (crc32_bytes(bytes.data(), body) != stored) throw LoadError("checkpoint checksum mismatch (corrupt or truncated)");

  Reader r(bytes.data(), body);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(r.str());
    ckpt.meta = metadata_from_json(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint metadata is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint model configuration is invalid: ") + e.what());
  }
  const auto layout = build_model<float>(ckpt.config, 0);
  const std::uint32_t count = r.u32();
  if (count != layout.entries.size()) {
    throw LoadError("checkpoint holds " + std::to_string(count) + " tensors, configuration needs " +
                    std::to_string(layout.entries.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamEntry<float> e = layout.entries[i];
    const std::string name = r.str();
    Shape s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    if (name != e.name || s != e.value.shape()) {
      throw LoadError("checkpoint tensor " + name + " " + to_string(s) + " does not match expected " + e.name + " " +
                      to_string(e.value.shape()));
    }
    r.floats(e.value);
    ckpt.params.entries.push_back(std::move(e));
  }
  if (r.u8() == 1) {
    OptimizerState<float> o = OptimizerState<float>::fresh(ckpt.params);
    o.step = r.u64();
    o.hyper.lr = r.f64();
    o.hyper.beta1 = r.f64();
    o.hyper.beta2 = r.f64();
    o.hyper.eps = r.f64();
    for (auto& m : o.first_moment) r.floats(m);
    for (auto& v : o.second_moment) r.floats(v);
    ckpt.optimizer = std::move(o);
  }
  if (r.position() != body) throw LoadError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace msamseg
