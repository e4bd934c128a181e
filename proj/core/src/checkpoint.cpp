#include "amda/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace amda {

namespace {

constexpr char kMagic[4] = {'A', 'M', 'C', 'K'};
constexpr char kRecordMagic[4] = {'A', 'M', 'D', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kStateBlob = "__state";
constexpr const char* kConfigBlob = "__config";

void append_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t read_u32_le(const std::string& bytes, std::size_t offset) {
  const auto b = [&](std::size_t i) {
    return static_cast<std::uint32_t>(
        static_cast<unsigned char>(bytes[offset + i]));
  };
  return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

/// Rows x cols of a tensor flattened to two axes (leading axis x the rest).
std::pair<std::uint32_t, std::uint32_t> blob_dims(const Tensor& t) {
  const Shape& s = t.shape();
  std::uint32_t rows = s.empty() ? 1 : static_cast<std::uint32_t>(s[0]);
  std::uint32_t cols = 1;
  for (std::size_t i = 1; i < s.size(); ++i) {
    cols *= static_cast<std::uint32_t>(s[i]);
  }
  return {rows, cols};
}

void append_blob(std::string& out, const std::string& name, const Tensor& t,
                 std::uint32_t record_id) {
  append_u32_le(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  const auto [rows, cols] = blob_dims(t);
  out.append(kRecordMagic, 4);
  append_u32_le(out, rows);
  append_u32_le(out, cols);
  append_u32_le(out, record_id);
  for (double v : t.values()) {
    append_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
}

/// Widens raw bytes to one f32 per byte so they fit the blob payload type
/// losslessly.
Tensor bytes_to_tensor(const std::string& bytes) {
  std::vector<double> v(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    v[i] = static_cast<double>(static_cast<unsigned char>(bytes[i]));
  }
  return Tensor::from({1, bytes.size()}, std::move(v));
}

std::string tensor_to_bytes(const Tensor& t, const std::string& name) {
  std::string out;
  out.reserve(t.size());
  for (double v : t.values()) {
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
      throw FormatError("checkpoint blob '" + name +
                        "' holds a non-byte value");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return out;
}

void append_u64_bytes(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

std::uint64_t read_u64_bytes(const std::string& bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(
             bytes[offset + i]))
         << (8 * i);
  }
  return v;
}

} // namespace

const Tensor& CheckpointData::blob(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no blob named '" + name + "'");
}

bool CheckpointData::has_blob(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return true;
  }
  return false;
}

void save_checkpoint(const CheckpointData& data, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  append_u32_le(out, kVersion);

  std::uint32_t record_id = 0;
  {
    std::string state;
    append_u64_bytes(state, data.epoch);
    append_u64_bytes(state, data.opt_step);
    append_u64_bytes(state, data.rng_seed);
    append_blob(out, kStateBlob, bytes_to_tensor(state), record_id++);
  }
  append_blob(out, kConfigBlob, bytes_to_tensor(data.config.serialize()),
              record_id++);
  for (const auto& [name, tensor] : data.blobs) {
    if (name == kStateBlob || name == kConfigBlob) {
      throw ConfigError("checkpoint blob name '" + name + "' is reserved");
    }
    append_blob(out, name, tensor, record_id++);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    throw IoError("cannot write checkpoint: " + path);
  }
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open checkpoint: " + path);
  }
  std::ostringstream buf;
  buf << file.rdbuf();
  const std::string bytes = buf.str();

  const auto at = [&](std::size_t offset) {
    return " at byte offset " + std::to_string(offset);
  };
  if (bytes.size() < 8 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)" + at(0));
  }
  const std::uint32_t version = read_u32_le(bytes, 4);
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  }

  CheckpointData data;
  std::size_t offset = 8;
  std::uint32_t expect_id = 0;
  while (offset < bytes.size()) {
    if (offset + 4 > bytes.size()) {
      throw FormatError("checkpoint truncated" + at(offset));
    }
    const std::uint32_t name_len = read_u32_le(bytes, offset);
    offset += 4;
    if (offset + name_len + 16 > bytes.size()) {
      throw FormatError("checkpoint truncated" + at(offset));
    }
    const std::string name = bytes.substr(offset, name_len);
    offset += name_len;
    if (bytes.compare(offset, 4, kRecordMagic, 4) != 0) {
      throw FormatError("bad checkpoint record magic" + at(offset));
    }
    const std::uint32_t rows = read_u32_le(bytes, offset + 4);
    const std::uint32_t cols = read_u32_le(bytes, offset + 8);
    const std::uint32_t id = read_u32_le(bytes, offset + 12);
    if (id != expect_id) {
      throw FormatError("checkpoint record id mismatch" + at(offset));
    }
    ++expect_id;
    offset += 16;
    const std::size_t count = std::size_t{rows} * cols;
    if (offset + 4 * count > bytes.size()) {
      throw FormatError("checkpoint truncated" + at(offset));
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = static_cast<double>(
          std::bit_cast<float>(read_u32_le(bytes, offset + 4 * i)));
    }
    offset += 4 * count;
    data.blobs.emplace_back(name,
                            Tensor::from({rows, cols}, std::move(values)));
  }

  // Unpack and strip the reserved blobs.
  if (data.blobs.size() < 2 || data.blobs[0].first != kStateBlob ||
      data.blobs[1].first != kConfigBlob) {
    throw FormatError("checkpoint is missing its reserved state blobs");
  }
  const std::string state = tensor_to_bytes(data.blobs[0].second, kStateBlob);
  if (state.size() != 24) {
    throw FormatError("checkpoint state blob has wrong length");
  }
  data.epoch = read_u64_bytes(state, 0);
  data.opt_step = read_u64_bytes(state, 8);
  data.rng_seed = read_u64_bytes(state, 16);
  data.config = ConfigFile::parse_string(
      tensor_to_bytes(data.blobs[1].second, kConfigBlob), path + "#__config");
  data.blobs.erase(data.blobs.begin(), data.blobs.begin() + 2);
  return data;
}

} // namespace amda
