#pragma once

// Checkpoint container:
//   "TVCKPT01" | u64 header length (little endian) | JSON header | float32 data
// The header holds the model config, the channel contract string and the
// name/shape of every tensor in storage order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajvid/condition.hpp"
#include "trajvid/image.hpp"
#include "trajvid/model.hpp"

namespace trajvid {

inline constexpr char kCheckpointMagic[8] = {'T', 'V', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& m, const CheckpointMeta& meta = {}) {
  nlohmann::json tensors = nlohmann::json::array();
  const auto& P = m.params();
  for (std::size_t i = 0; i < P.size(); ++i)
    tensors.push_back({{"name", P.names[i]}, {"shape", {P.tensors[i].rows(), P.tensors[i].cols()}}});
  const nlohmann::json header = {{"version", kCheckpointVersion},
                                 {"channel_contract", kChannelContract},
                                 {"config", config_to_json(m.config())},
                                 {"step", meta.step},
                                 {"extra", meta.extra},
                                 {"tensors", std::move(tensors)}};
  const std::string hs = header.dump();
  std::vector<std::uint8_t> out(sizeof kCheckpointMagic);
  std::memcpy(out.data(), kCheckpointMagic, sizeof kCheckpointMagic);
  const auto len = static_cast<std::uint64_t>(hs.size());
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(len >> (8 * b)));
  out.insert(out.end(), hs.begin(), hs.end());
  for (const auto& t : P.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(float));
  }
  return out;
}

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
  if (len > bytes.size() - 16) throw CheckpointError("truncated checkpoint header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (h.value("version", -1) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  if (h.value("channel_contract", std::string()) != kChannelContract)
    throw CheckpointError("channel contract mismatch: checkpoint has '" + h.value("channel_contract", std::string()) +
                          "', expected '" + kChannelContract + "'");
  LoadedCheckpoint out;
  try {
    out.model = Model<float>(config_from_json(h.at("config")));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid model config in checkpoint: ") + e.what());
  }
  out.meta.step = h.value("step", std::int64_t{0});
  out.meta.extra = h.value("extra", nlohmann::json::object());
  auto& P = out.model.params();
  const auto& tl = h.at("tensors");
  if (tl.size() != P.size()) throw CheckpointError("tensor count mismatch");
  std::size_t off = 16 + len;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const auto& e = tl[i];
    if (e.at("name").get<std::string>() != P.names[i] || e.at("shape")[0].get<Eigen::Index>() != P.tensors[i].rows() ||
        e.at("shape")[1].get<Eigen::Index>() != P.tensors[i].cols())
      throw CheckpointError("tensor layout mismatch at " + P.names[i]);
    const std::size_t nb = static_cast<std::size_t>(P.tensors[i].size()) * sizeof(float);
    if (off + nb > bytes.size()) throw CheckpointError("truncated checkpoint data");
    std::memcpy(P.tensors[i].data(), bytes.data() + off, nb);
    off += nb;
  }
  if (off != bytes.size()) throw CheckpointError("trailing bytes after checkpoint data");
  return out;
}

inline void save_checkpoint(const std::filesystem::path& p, const Model<float>& m, const CheckpointMeta& meta = {}) {
  const auto tmp = p.string() + ".tmp";
  write_file_bytes(tmp, encode_checkpoint(m, meta));
  std::filesystem::rename(tmp, p);
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& p) {
  return decode_checkpoint(read_file_bytes(p));
}

}  // namespace trajvid
