#pragma once
// Image stamps and their on-disk forms: raw float32 cube files and the
// JSON-lines manifest that indexes them.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lensformer/errors.hpp"
#include "lensformer/json_util.hpp"
#include "lensformer/tensor.hpp"

namespace lensformer {

struct StampMeta {
  std::string id;
  double theta_e = 0.0;     // arcsec; 0 for non-lenses
  double flux_ratio = 0.0;  // lensed-source flux / total flux
  double z_s = 0.0;
  std::uint64_t seed = 0;
};

struct ImageStamp {
  Tensor<float> pixels;  // [bands, S, S]
  int label = 0;
  StampMeta meta;

  std::size_t bands() const { return pixels.dim(0); }
  std::size_t size() const { return pixels.dim(1); }
};

using Dataset = std::vector<ImageStamp>;

inline constexpr std::uint32_t kStampMagic = 0x5453464Cu;  // "LFST"
inline constexpr std::uint32_t kStampVersion = 1;

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(what_ + ": truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace io

/// Header: 8 little-endian uint32 (magic, version, bands, S, S, 0, 0, 0),
/// then bands*S*S little-endian float32 in [band][row][col] order.
inline std::string encode_stamp(const Tensor<float>& pixels) {
  if (pixels.rank() != 3 || pixels.dim(1) != pixels.dim(2)) throw DimensionError("stamp must be [bands,S,S], got " + to_string(pixels.shape()));
  std::string out;
  out.reserve(32 + 4 * pixels.numel());
  for (std::uint32_t v : {kStampMagic, kStampVersion, static_cast<std::uint32_t>(pixels.dim(0)), static_cast<std::uint32_t>(pixels.dim(1)),
                          static_cast<std::uint32_t>(pixels.dim(2)), 0u, 0u, 0u})
    io::put_u32(out, v);
  for (float v : pixels.data()) io::put_f32(out, v);
  return out;
}

inline Tensor<float> decode_stamp(const std::string& bytes, const std::string& what = "stamp") {
  io::Reader r(bytes, what);
  std::uint32_t h[8];
  for (auto& v : h) v = r.u32();
  if (h[0] != kStampMagic) throw IoError(what + ": bad magic");
  if (h[1] != kStampVersion) throw IoError(what + ": unsupported version " + std::to_string(h[1]));
  if (h[2] == 0 || h[3] == 0 || h[3] != h[4]) throw IoError(what + ": bad dimensions");
  Tensor<float> t({h[2], h[3], h[4]});
  if (bytes.size() != 32 + 4 * t.numel()) throw IoError(what + ": size does not match header");
  for (auto& v : t.data()) v = r.f32();
  return t;
}

inline void write_stamp(const std::filesystem::path& path, const Tensor<float>& pixels) { io::write_file(path, encode_stamp(pixels)); }

inline Tensor<float> read_stamp(const std::filesystem::path& path) { return decode_stamp(io::read_file(path), path.string()); }

struct ManifestRow {
  std::string id;
  std::string path;  // relative to the manifest's directory
  int label = 0;
  double theta_e = 0.0;
  double flux_ratio = 0.0;
  double z_s = 0.0;
  std::uint64_t seed = 0;
};

inline void to_json(json& j, const ManifestRow& r) {
  j = json{{"id", r.id}, {"path", r.path}, {"label", r.label}, {"theta_e", r.theta_e},
           {"flux_ratio", r.flux_ratio}, {"z_s", r.z_s}, {"seed", r.seed}};
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::string out;
  for (const auto& r : rows) out += json(r).dump() + "\n";
  io::write_file(path, out);
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      ManifestRow r;
      r.id = j.at("id").get<std::string>();
      r.path = j.at("path").get<std::string>();
      r.label = j.at("label").get<int>();
      r.theta_e = j.value("theta_e", 0.0);
      r.flux_ratio = j.value("flux_ratio", 0.0);
      r.z_s = j.value("z_s", 0.0);
      r.seed = j.value("seed", std::uint64_t{0});
      if (r.label != 0 && r.label != 1) throw IoError("label must be 0 or 1");
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

/// Reads every stamp listed in a manifest; all stamps must share one shape.
inline Dataset load_dataset(const std::filesystem::path& manifest) {
  const auto dir = manifest.parent_path();
  Dataset out;
  for (const auto& r : read_manifest(manifest)) {
    ImageStamp s{read_stamp(dir / r.path), r.label, {r.id, r.theta_e, r.flux_ratio, r.z_s, r.seed}};
    if (!out.empty() && s.pixels.shape() != out.front().pixels.shape())
      throw IoError("stamp " + r.id + " has shape " + to_string(s.pixels.shape()) + ", expected " + to_string(out.front().pixels.shape()));
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError("manifest " + manifest.string() + " lists no stamps");
  return out;
}

}  // namespace lensformer
