#pragma once

// Checkpoint container, version 1:
//
//   bytes 0..7    magic "VAEREGCK"
//   uint32        format version
//   uint64        header length N
//   N bytes       UTF-8 JSON header: free-form metadata plus
//                 "arrays": [{"name", "shape", "offset", "count"}, ...]
//   payload       float32 values of every array, concatenated; offsets count floats
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vaereg/errors.hpp"
#include "vaereg/tensor.hpp"

namespace vaereg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline constexpr char kCheckpointMagic[8] = {'V', 'A', 'E', 'R', 'E', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  void add(std::string name, const Tensor<float>& value) {
    arrays.push_back({std::move(name), value});
  }

  const Tensor<float>& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a.value;
    throw CheckpointError("checkpoint has no array named '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }

  // Writes to a temporary sibling and renames, so readers never see a partial file.
  void save(const std::filesystem::path& path) const {
    nlohmann::json header = meta;
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : arrays) {
      index.push_back({{"name", a.name}, {"shape", a.value.shape()}, {"offset", offset},
                       {"count", a.value.size()}});
      offset += a.value.size();
    }
    header["arrays"] = index;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
      const std::uint64_t len = text.size();
      out.write(kCheckpointMagic, sizeof kCheckpointMagic);
      out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
      out.write(reinterpret_cast<const char*>(&len), sizeof len);
      out.write(text.data(), static_cast<std::streamsize>(text.size()));
      for (const auto& a : arrays)
        out.write(reinterpret_cast<const char*>(a.value.data()),
                  static_cast<std::streamsize>(a.value.size() * sizeof(float)));
      if (!out) throw CheckpointError("short write on checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
      throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in || version != kCheckpointVersion)
      throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                            std::to_string(version));
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (std::uint64_t{1} << 32)) throw CheckpointError(path.string() + ": bad header");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError(path.string() + ": truncated header");

    Checkpoint ck;
    try {
      ck.meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(path.string() + ": corrupt header: " + e.what());
    }
    if (!ck.meta.is_object() || !ck.meta.contains("arrays") || !ck.meta["arrays"].is_array())
      throw CheckpointError(path.string() + ": header has no array index");
    const auto index = ck.meta.at("arrays");
    ck.meta.erase("arrays");
    const auto payload_start = in.tellg();
    for (const auto& entry : index) {
      NamedArray a;
      Shape shape;
      std::uint64_t count = 0, offset = 0;
      try {
        a.name = entry.at("name").get<std::string>();
        shape = entry.at("shape").get<Shape>();
        count = entry.at("count").get<std::uint64_t>();
        offset = entry.at("offset").get<std::uint64_t>();
      } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": corrupt array index: " + e.what());
      }
      if (shape_size(shape) != count) throw CheckpointError("array " + a.name + ": shape/count mismatch");
      std::vector<float> data(count);
      in.seekg(payload_start + static_cast<std::streamoff>(offset * sizeof(float)));
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
      if (!in) throw CheckpointError(path.string() + ": truncated payload for " + a.name);
      a.value = Tensor<float>(shape, std::move(data));
      ck.arrays.push_back(std::move(a));
    }
    return ck;
  }
};

}  // namespace vaereg
