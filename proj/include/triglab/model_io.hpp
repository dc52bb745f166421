#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "triglab/model.hpp"

namespace triglab {

/// Model file layout (little-endian throughout):
///
///   offset 0   8 bytes   magic "TRIGLAB\0"
///   offset 8   u32       format version (kModelFormatVersion)
///   offset 12  u32       CRC-32 of the header bytes
///   offset 16  u64       header length in bytes
///   offset 24  header    UTF-8 JSON: {"format", "version", "config", "metadata",
///                        "tensors": [{"name", "rows", "cols", "offset", "crc32"}]}
///   then       data      each tensor as rows·cols IEEE-754 doubles, row-major,
///                        at header-listed byte offsets relative to the data start
///
/// Tensor order follows for_each_param. Per-tensor CRC-32 covers the raw bytes.
inline constexpr std::uint32_t kModelFormatVersion = 1;

struct ModelFile {
  ModelWeights weights;
  nlohmann::json metadata = nlohmann::json::object();
};

struct TensorCheck {
  std::string name;
  bool checksum_ok = false;
};

/// Result of reading a file without trusting its checksums.
struct ModelFileInspection {
  ModelFile file;
  std::vector<TensorCheck> tensors;
  bool all_checksums_ok() const;
};

std::vector<std::uint8_t> encode_model(const ModelWeights& w, const nlohmann::json& metadata = nlohmann::json::object());
ModelFileInspection decode_model(const std::vector<std::uint8_t>& bytes);

void save_model(const std::filesystem::path& path, const ModelWeights& w,
                const nlohmann::json& metadata = nlohmann::json::object());
/// Throws ModelIoError on any structural or checksum failure.
ModelFile load_model(const std::filesystem::path& path);
/// Like load_model but reports per-tensor checksum status instead of throwing on it.
ModelFileInspection inspect_model(const std::filesystem::path& path);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

/// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace triglab
