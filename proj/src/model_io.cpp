#include "triglab/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "triglab/error.hpp"

namespace triglab {
namespace {

constexpr char kMagic[8] = {'T', 'R', 'I', 'G', 'L', 'A', 'B', '\0'};

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t at) {
  if (at + sizeof(T) > in.size()) throw ModelIoError("model file truncated");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"d_model", c.d_model},         {"n_heads", c.n_heads},
          {"d_mlp", c.d_mlp},         {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
          {"norm_mode", to_string(c.norm_mode)}, {"norm_eps", c.norm_eps}, {"origin", to_string(c.origin)}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_mlp = j.at("d_mlp").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.norm_mode = norm_mode_from_string(j.at("norm_mode").get<std::string>());
  c.norm_eps = j.at("norm_eps").get<double>();
  c.origin = origin_from_string(j.at("origin").get<std::string>());
  c.validate();
  return c;
}

bool ModelFileInspection::all_checksums_ok() const {
  for (const auto& t : tensors)
    if (!t.checksum_ok) return false;
  return true;
}

std::vector<std::uint8_t> encode_model(const ModelWeights& w, const nlohmann::json& metadata) {
  w.validate();
  std::vector<std::uint8_t> data;
  nlohmann::json table = nlohmann::json::array();
  for_each_param(w, [&](const std::string& name, std::span<const double> p) {
    const auto [rows, cols] = param_shape(w.config, name);
    const std::size_t offset = data.size();
    for (double v : p) put(data, v);
    table.push_back({{"name", name},
                     {"rows", rows},
                     {"cols", cols},
                     {"offset", offset},
                     {"crc32", crc32_of(data.data() + offset, data.size() - offset)}});
  });
  nlohmann::json header = {{"format", "triglab-model"},
                           {"version", kModelFormatVersion},
                           {"config", config_to_json(w.config)},
                           {"metadata", metadata},
                           {"tensors", table}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put(out, kModelFormatVersion);
  put(out, crc32_of(reinterpret_cast<const std::uint8_t*>(h.data()), h.size()));
  put(out, static_cast<std::uint64_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

ModelFileInspection decode_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw ModelIoError("not a triglab model file");
  const auto version = get<std::uint32_t>(bytes, 8);
  if (version != kModelFormatVersion)
    throw ModelIoError("unsupported model format version " + std::to_string(version));
  const auto header_crc = get<std::uint32_t>(bytes, 12);
  const auto header_len = get<std::uint64_t>(bytes, 16);
  if (24 + header_len > bytes.size()) throw ModelIoError("model file truncated in header");
  if (crc32_of(bytes.data() + 24, header_len) != header_crc) throw ModelIoError("header checksum mismatch");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 24, bytes.begin() + 24 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(std::string("malformed model header: ") + e.what());
  }

  ModelFileInspection out;
  try {
    const ModelConfig config = config_from_json(header.at("config"));
    out.file.weights = ModelWeights::zeros(config);
    out.file.metadata = header.value("metadata", nlohmann::json::object());
    const std::size_t data_start = 24 + header_len;
    const auto& table = header.at("tensors");
    std::size_t idx = 0;
    for_each_param(out.file.weights, [&](const std::string& name, std::span<double> p) {
      if (idx >= table.size()) throw ModelIoError("tensor table is missing " + name);
      const auto& entry = table[idx++];
      if (entry.at("name").get<std::string>() != name) throw ModelIoError("tensor table out of order at " + name);
      const auto [rows, cols] = param_shape(config, name);
      if (entry.at("rows").get<std::size_t>() != rows || entry.at("cols").get<std::size_t>() != cols)
        throw ModelIoError("tensor " + name + " has the wrong shape");
      const std::size_t offset = data_start + entry.at("offset").get<std::size_t>();
      const std::size_t nbytes = p.size() * sizeof(double);
      if (offset + nbytes > bytes.size()) throw ModelIoError("tensor " + name + " runs past end of file");
      std::memcpy(p.data(), bytes.data() + offset, nbytes);
      out.tensors.push_back({name, crc32_of(bytes.data() + offset, nbytes) == entry.at("crc32").get<std::uint32_t>()});
    });
  } catch (const ContractViolation& e) {
    throw ModelIoError(std::string("invalid model config: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(std::string("malformed model header: ") + e.what());
  }
  return out;
}

void save_model(const std::filesystem::path& path, const ModelWeights& w, const nlohmann::json& metadata) {
  write_file_atomic(path, encode_model(w, metadata));
}

ModelFileInspection inspect_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelIoError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

ModelFile load_model(const std::filesystem::path& path) {
  auto insp = inspect_model(path);
  for (const auto& t : insp.tensors)
    if (!t.checksum_ok) throw ModelIoError("checksum mismatch in tensor " + t.name);
  try {
    insp.file.weights.validate();
  } catch (const ContractViolation& e) {
    throw ModelIoError(e.what());
  }
  return std::move(insp.file);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::vector<std::uint8_t> bytes(contents.begin(), contents.end());
  write_file_atomic(path, bytes);
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelIoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(contents.data()), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ModelIoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelIoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace triglab
