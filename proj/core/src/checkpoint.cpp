#include "pneumo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pneumo/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as little-endian floats");

namespace pneumo {

namespace {

constexpr char kMagic[16] = {'p', 'n', 'e', 'u', 'm', 'o', 's', 'c',
                             'a', 'n', '-', 'c', 'k', 'p', 't', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kKindPatch = 1;
constexpr std::uint8_t kKindFusion = 2;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& file) : out_(file, std::ios::binary) {
    if (!out_) throw DataError("cannot write checkpoint " + file.string());
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  bool ok() const { return static_cast<bool>(out_); }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& file) : in_(file, std::ios::binary), file_(file.string()) {
    if (!in_) throw MissingInputError("cannot open checkpoint " + file_);
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw DataError("checkpoint " + file_ + " is truncated");
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > 4096) throw DataError("checkpoint " + file_ + " has an implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  const std::string& file() const { return file_; }

 private:
  std::ifstream in_;
  std::string file_;
};

void write_patch_config(Writer& w, const PatchNetConfig& c) {
  w.pod<std::int32_t>(c.input_side);
  w.pod<std::int32_t>(c.base_channels);
  w.pod<std::int32_t>(c.blocks);
  w.pod<std::uint8_t>(c.extra_conv ? 1 : 0);
  w.pod<double>(c.dropout_rate);
  w.pod<std::int32_t>(c.kernel);
  w.pod<std::int32_t>(c.channel_cap);
}

PatchNetConfig read_patch_config(Reader& r) {
  PatchNetConfig c;
  c.input_side = r.pod<std::int32_t>();
  c.base_channels = r.pod<std::int32_t>();
  c.blocks = r.pod<std::int32_t>();
  c.extra_conv = r.pod<std::uint8_t>() != 0;
  c.dropout_rate = r.pod<double>();
  c.kernel = r.pod<std::int32_t>();
  c.channel_cap = r.pod<std::int32_t>();
  return c;
}

void write_meta(Writer& w, const TrainMeta& m) {
  w.pod<std::int32_t>(m.epoch);
  w.pod<std::uint64_t>(m.seed);
  w.pod<double>(m.final_lr);
}

TrainMeta read_meta(Reader& r) {
  TrainMeta m;
  m.epoch = r.pod<std::int32_t>();
  m.seed = r.pod<std::uint64_t>();
  m.final_lr = r.pod<double>();
  return m;
}

void write_blobs(Writer& w, std::vector<NamedParam> params) {
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.pod<std::uint64_t>(p.value->size());
    for (std::size_t i = 0; i < p.value->size(); ++i) w.pod<float>(static_cast<float>((*p.value)[i]));
  }
}

void read_blobs(Reader& r, std::vector<NamedParam> params) {
  const auto count = r.pod<std::uint32_t>();
  if (count != params.size())
    throw DataError("checkpoint " + r.file() + ": expected " + std::to_string(params.size()) +
                    " parameter blobs, found " + std::to_string(count));
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name)
      throw DataError("checkpoint " + r.file() + ": blob '" + name + "' does not match expected '" +
                      p.name + "'");
    const auto n = r.pod<std::uint64_t>();
    if (n != p.value->size())
      throw DataError("checkpoint " + r.file() + ": blob '" + name + "' holds " + std::to_string(n) +
                      " values but the architecture needs " + std::to_string(p.value->size()));
    for (std::size_t i = 0; i < p.value->size(); ++i)
      (*p.value)[i] = static_cast<double>(r.pod<float>());
  }
}

void read_header(Reader& r, std::uint8_t expected_kind) {
  char magic[16];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError("checkpoint " + r.file() + ": bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw DataError("checkpoint " + r.file() + ": unsupported version " + std::to_string(version));
  const auto kind = r.pod<std::uint8_t>();
  if (kind != expected_kind)
    throw DataError("checkpoint " + r.file() + ": wrong model kind");
}

}  // namespace

void save_patchnet(const std::filesystem::path& file, const PatchNet& model, const TrainMeta& meta) {
  Writer w(file);
  w.bytes(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint8_t>(kKindPatch);
  write_patch_config(w, model.config());
  write_meta(w, meta);
  write_blobs(w, const_cast<PatchNet&>(model).params());
  if (!w.ok()) throw DataError("failed writing checkpoint " + file.string());
}

PatchNet load_patchnet(const std::filesystem::path& file, TrainMeta* meta) {
  Reader r(file);
  read_header(r, kKindPatch);
  const PatchNetConfig cfg = read_patch_config(r);
  const TrainMeta m = read_meta(r);
  if (meta) *meta = m;
  Rng init(0);  // parameters are overwritten from the blobs
  PatchNet model(cfg, init);
  read_blobs(r, model.params());
  return model;
}

void save_fusionnet(const std::filesystem::path& file, const FusionNet& model, const TrainMeta& meta) {
  Writer w(file);
  w.bytes(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint8_t>(kKindFusion);
  const auto& c = model.config();
  w.pod<std::int32_t>(c.heatmap_side);
  w.pod<std::int32_t>(c.heatmap_channels);
  w.pod<double>(c.dropout_rate);
  write_patch_config(w, c.image);
  write_meta(w, meta);
  write_blobs(w, const_cast<FusionNet&>(model).params());
  if (!w.ok()) throw DataError("failed writing checkpoint " + file.string());
}

FusionNet load_fusionnet(const std::filesystem::path& file, TrainMeta* meta) {
  Reader r(file);
  read_header(r, kKindFusion);
  FusionNetConfig cfg;
  cfg.heatmap_side = r.pod<std::int32_t>();
  cfg.heatmap_channels = r.pod<std::int32_t>();
  cfg.dropout_rate = r.pod<double>();
  cfg.image = read_patch_config(r);
  const TrainMeta m = read_meta(r);
  if (meta) *meta = m;
  Rng init(0);
  FusionNet model(cfg, init);
  read_blobs(r, model.params());
  return model;
}

}  // namespace pneumo
