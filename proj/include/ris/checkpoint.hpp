#pragma once

// Checkpoint file layout:
//   uint64 little-endian   header length N in bytes
//   N bytes                UTF-8 JSON header
//   float64 little-endian  tensor payload, concatenated
// The header lists {name, shape, offset, frozen} per tensor, offsets counted
// in float64 elements from the start of the payload, plus a free-form "meta"
// object (resolved config, vocabulary, optimizer step, ...).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ris/parameter.hpp"

namespace ris {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  bool frozen = false;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "ris-checkpoint";
  header["version"] = 1;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (numel(t.shape) != t.data.size())
      throw Error(ErrorCode::ShapeMismatch, "checkpoint tensor " + t.name + " size does not match its shape");
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"frozen", t.frozen}});
    offset += t.data.size();
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const std::uint64_t len = detail::to_little(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors)
    for (double v : t.data) {
      const std::uint64_t bits = detail::to_little(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  len = detail::to_little(len);
  if (!in || len > (1ull << 32)) throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": " + e.what());
  }
  if (header.value("format", "") != "ris-checkpoint")
    throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": not a checkpoint");

  std::vector<double> payload;
  std::uint64_t bits = 0;
  while (in.read(reinterpret_cast<char*>(&bits), sizeof bits))
    payload.push_back(std::bit_cast<double>(detail::to_little(bits)));

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    CheckpointTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    t.frozen = entry.value("frozen", false);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t n = numel(t.shape);
    if (offset + n > payload.size())
      throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": tensor " + t.name + " runs past the payload");
    t.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                  payload.begin() + static_cast<std::ptrdiff_t>(offset + n));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

inline void capture_parameters(const ParameterStore& store, Checkpoint& ckpt, const std::string& prefix = "") {
  for (const auto& p : store.params())
    ckpt.tensors.push_back({prefix + p.name, p.tensor.shape(), p.frozen,
                            std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
}

// Copies values for every parameter in `store` whose name (after `prefix`)
// matches a checkpoint entry. Missing entries are an error.
inline void restore_parameters(ParameterStore& store, const Checkpoint& ckpt, const std::string& prefix = "") {
  for (auto& p : store.params()) {
    const auto* t = ckpt.find(prefix + p.name);
    if (!t) throw Error(ErrorCode::CorruptCheckpoint, "checkpoint lacks " + prefix + p.name);
    if (t->shape != p.tensor.shape())
      throw Error(ErrorCode::ShapeMismatch, "checkpoint " + p.name + " is " + shape_string(t->shape) +
                                                ", model expects " + shape_string(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    std::copy(t->data.begin(), t->data.end(), dst.begin());
  }
}

}  // namespace ris
