#include "gcdt/train/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>
#include <zlib.h>

#include "gcdt/data/dataset_io.h"

namespace gcdt::train {

using nlohmann::ordered_json;

static_assert(std::numeric_limits<float>::is_iec559, "float32 payload requires IEEE-754 floats");

namespace {

constexpr std::size_t kPreambleBytes = 4 + 4 + 8 + 4;

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

ordered_json standardizer_to_json(const data::Standardizer& s) { return {{"mean", s.mean}, {"std", s.std}}; }

data::Standardizer standardizer_from_json(const ordered_json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

ordered_json header_json(const model::ModelBundle& bundle, std::uint64_t& payload_bytes) {
  const model::ModelConfig& c = bundle.config();
  ordered_json j;
  j["config"] = {{"n_layers", c.n_layers},
                 {"n_heads", c.n_heads},
                 {"d_model", c.d_model},
                 {"max_timesteps", c.max_timesteps},
                 {"dropout", c.dropout}};
  j["seed"] = bundle.seed();
  j["tasks"] = ordered_json::parse(data::task_registry_to_json(bundle.task_registry()));
  ordered_json norm = ordered_json::object();
  for (const auto& [id, n] : bundle.norm_stats())
    norm[id] = {{"obs", standardizer_to_json(n.obs)},
                {"goal", standardizer_to_json(n.goal)},
                {"act", standardizer_to_json(n.act)},
                {"time_to_goal_scale", n.time_to_goal_scale}};
  j["norm"] = norm;
  ordered_json tensors = ordered_json::array();
  std::uint64_t offset = 0;
  for (const model::Param* p : bundle.parameters()) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
    offset += p->value.numel() * sizeof(float);
  }
  j["tensors"] = tensors;
  j["payload_bytes"] = offset;
  payload_bytes = offset;
  return j;
}

CheckpointInfo parse_header(const ordered_json& j, std::uint32_t version) {
  CheckpointInfo info;
  info.version = version;
  const auto& c = j.at("config");
  info.config.n_layers = c.at("n_layers").get<std::size_t>();
  info.config.n_heads = c.at("n_heads").get<std::size_t>();
  info.config.d_model = c.at("d_model").get<std::size_t>();
  info.config.max_timesteps = c.at("max_timesteps").get<std::size_t>();
  info.config.dropout = c.at("dropout").get<double>();
  info.config.validate();
  info.seed = j.at("seed").get<std::uint64_t>();
  info.tasks = data::task_registry_from_json(j.at("tasks").dump());
  for (const auto& [id, n] : j.at("norm").items()) {
    data::TaskNormStats s;
    s.obs = standardizer_from_json(n.at("obs"));
    s.goal = standardizer_from_json(n.at("goal"));
    s.act = standardizer_from_json(n.at("act"));
    s.time_to_goal_scale = n.at("time_to_goal_scale").get<double>();
    info.norm.emplace(id, std::move(s));
  }
  for (const auto& t : j.at("tensors"))
    info.manifest.push_back(
        {t.at("name").get<std::string>(), t.at("shape").get<num::Shape>(), t.at("offset").get<std::uint64_t>()});
  info.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
  return info;
}

struct Parsed {
  CheckpointInfo info;
  const std::uint8_t* payload = nullptr;
};

Parsed parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPreambleBytes) throw CheckpointError("checkpoint truncated: file shorter than its preamble");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint: bad magic bytes");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version: expected " + std::to_string(kCheckpointVersion) +
                          ", found " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  const auto header_crc = get_le<std::uint32_t>(bytes.data() + 16);
  if (header_len > bytes.size() - kPreambleBytes)
    throw CheckpointError("checkpoint truncated: header length " + std::to_string(header_len) + " exceeds file size");
  const std::uint8_t* header = bytes.data() + kPreambleBytes;
  if (crc(header, header_len) != header_crc) throw CheckpointError("corrupt checkpoint header: checksum mismatch");
  Parsed out;
  try {
    out.info = parse_header(ordered_json::parse(header, header + header_len), version);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t body = kPreambleBytes + header_len;
  const std::uint64_t expected = out.info.payload_bytes + 4;
  if (bytes.size() - body < expected)
    throw CheckpointError("checkpoint truncated: payload has " + std::to_string(bytes.size() - body) +
                          " bytes, expected " + std::to_string(expected));
  if (bytes.size() - body > expected) throw CheckpointError("checkpoint has trailing bytes after its payload");
  out.payload = bytes.data() + body;
  if (crc(out.payload, out.info.payload_bytes) != get_le<std::uint32_t>(out.payload + out.info.payload_bytes))
    throw CheckpointError("corrupt checkpoint payload: checksum mismatch");
  return out;
}

model::ModelBundle build(const Parsed& parsed) {
  const CheckpointInfo& info = parsed.info;
  model::ModelBundle bundle(info.config, info.seed);
  for (const auto& [id, spec] : info.tasks) bundle.add_task(spec);
  for (const auto& [id, _] : info.norm)
    if (!info.tasks.count(id)) throw CheckpointError("normalization statistics for unregistered task '" + id + "'");
  bundle.norm_stats() = info.norm;
  auto params = bundle.parameters();
  if (params.size() != info.manifest.size())
    throw CheckpointError("manifest lists " + std::to_string(info.manifest.size()) + " tensors, architecture has " +
                          std::to_string(params.size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ManifestEntry& e = info.manifest[i];
    model::Param& p = *params[i];
    if (e.name != p.name) throw CheckpointError("manifest entry " + std::to_string(i) + " is '" + e.name +
                                                "', expected '" + p.name + "'");
    if (e.shape != p.value.shape())
      throw CheckpointError("tensor '" + e.name + "' has shape " + num::to_string(e.shape) + ", architecture needs " +
                            num::to_string(p.value.shape()));
    if (e.offset != offset) throw CheckpointError("tensor '" + e.name + "' is not at its expected payload offset");
    const std::uint8_t* src = parsed.payload + offset;
    for (float& v : p.value.storage()) {
      v = std::bit_cast<float>(get_le<std::uint32_t>(src));
      src += 4;
    }
    offset += p.value.numel() * sizeof(float);
  }
  if (offset != info.payload_bytes) throw CheckpointError("payload size disagrees with the manifest");
  return bundle;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const model::ModelBundle& bundle) {
  std::uint64_t payload_bytes = 0;
  const std::string header = header_json(bundle, payload_bytes).dump();
  std::vector<std::uint8_t> out;
  out.reserve(kPreambleBytes + header.size() + payload_bytes + 4);
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header.size());
  put_le<std::uint32_t>(out, crc(reinterpret_cast<const std::uint8_t*>(header.data()), header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const std::size_t payload_start = out.size();
  for (const model::Param* p : bundle.parameters())
    for (float v : p->value.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  put_le<std::uint32_t>(out, crc(out.data() + payload_start, out.size() - payload_start));
  return out;
}

void save_checkpoint(const model::ModelBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(bundle);
  data::write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

model::ModelBundle deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const Parsed parsed = parse(bytes);
  try {
    return build(parsed);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
  }
}

model::ModelBundle load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_bytes(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  try {
    const auto bytes = read_bytes(path);
    deserialize_checkpoint(bytes);
    return parse(bytes).info;
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace gcdt::train
