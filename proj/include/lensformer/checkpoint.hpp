#pragma once
/*
 * Checkpoint container, all integers little-endian:
 *
 *   "LFCKPT\0\0"            8-byte magic
 *   u32 version
 *   u64 seed
 *   u32 len, bytes          ModelConfig as canonical JSON (sorted keys)
 *   u32 len, bytes          free-form meta JSON (training progress)
 *   u32 count
 *   count x { u32 len, name; u32 rank; u64 dims[rank]; f32 data[] }
 *
 * Tensors are stored in the model's visit order.
 */

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lensformer/detector.hpp"
#include "lensformer/stamp.hpp"

namespace lensformer {

inline constexpr char kCheckpointMagic[8] = {'L', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  json meta = json::object();
  std::vector<NamedTensor<float>> tensors;
};

template <typename T>
std::string encode_checkpoint(const DetectorModel<T>& model, const json& meta = json::object()) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  io::put_u32(out, kCheckpointVersion);
  io::put_u64(out, model.seed());
  for (const std::string& s : {json(model.config()).dump(), meta.dump()}) {
    io::put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
  }
  const auto params = model.parameters();
  io::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::put_u64(out, d);
    for (auto v : t.data()) io::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  io::Reader r(bytes, what);
  if (r.str(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) throw IoError(what + ": not a checkpoint");
  if (auto v = r.u32(); v != kCheckpointVersion) throw IoError(what + ": unsupported version " + std::to_string(v));
  Checkpoint ck;
  ck.seed = r.u64();
  try {
    ck.config = model_config_from_json(json::parse(r.str(r.u32())), "/config");
    ck.meta = json::parse(r.str(r.u32()));
  } catch (const json::exception& e) {
    throw IoError(what + ": corrupt header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(what + ": " + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor<float> nt;
    nt.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw IoError(what + ": tensor " + nt.name + " has bad rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = shape_numel(shape);
    r.need(4 * n);
    nt.tensor = Tensor<float>(shape);
    for (auto& v : nt.tensor.data()) v = r.f32();
    ck.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw IoError(what + ": trailing bytes");
  return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DetectorModel<T>& model, const json& meta = json::object()) {
  io::write_file(path, encode_checkpoint(model, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path), path.string()); }

/// Rebuilds the model and copies the stored weights in, checking names and
/// shapes against the config's architecture.
template <typename T = float>
DetectorModel<T> restore_model(const Checkpoint& ck) {
  DetectorModel<T> model(ck.config, ck.seed);
  std::size_t i = 0;
  model.visit([&](const std::string& name, Tensor<T>& t) {
    if (i >= ck.tensors.size()) throw IoError("checkpoint is missing tensor " + name);
    const auto& src = ck.tensors[i++];
    if (src.name != name || src.tensor.shape() != t.shape())
      throw IoError("checkpoint tensor " + src.name + to_string(src.tensor.shape()) + " does not match " + name + to_string(t.shape()));
    for (std::size_t k = 0; k < t.numel(); ++k) t[k] = static_cast<T>(src.tensor[k]);
  });
  if (i != ck.tensors.size()) throw IoError("checkpoint has " + std::to_string(ck.tensors.size() - i) + " unexpected tensors");
  return model;
}

}  // namespace lensformer
