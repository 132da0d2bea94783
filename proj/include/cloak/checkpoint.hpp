#pragma once

// Network checkpoint file.
//
//   "CKPT"             4 bytes
//   version            u8 (= 1)
//   lr, beta1, beta2, epsilon   f64 x 4   (Adam hyper-parameters)
//   record count       u32
//   per record:
//     name length u32, name bytes (UTF-8)
//     rank u32, dims u32 x rank
//     values f32 x prod(dims)
//     adam step u64, has_moments u8, [m f32 x prod(dims), v f32 x prod(dims)]
//
// All integers and floats little-endian.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cloak/adam.hpp"
#include "cloak/binary_io.hpp"

namespace cloak::nn {

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
  std::uint64_t adam_step = 0;
  std::vector<float> m, v;  // empty when no moments were recorded

  friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

struct Checkpoint {
  AdamConfig adam;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const {
    auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.name == name; });
    return it == records.end() ? nullptr : &*it;
  }
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  io::write_magic(os, "CKPT");
  io::write_le<std::uint8_t>(os, kCheckpointVersion);
  io::write_le(os, ckpt.adam.lr);
  io::write_le(os, ckpt.adam.beta1);
  io::write_le(os, ckpt.adam.beta2);
  io::write_le(os, ckpt.adam.epsilon);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    if (r.values.size() != shape_size(r.shape)) throw FormatError("checkpoint: record '" + r.name + "' size mismatch");
    for (float f : r.values) io::write_le(os, f);
    io::write_le<std::uint64_t>(os, r.adam_step);
    const bool moments = !r.m.empty();
    io::write_le<std::uint8_t>(os, moments ? 1 : 0);
    if (moments) {
      if (r.m.size() != r.values.size() || r.v.size() != r.values.size())
        throw FormatError("checkpoint: moment size mismatch in '" + r.name + "'");
      for (float f : r.m) io::write_le(os, f);
      for (float f : r.v) io::write_le(os, f);
    }
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, "CKPT", "checkpoint");
  const auto version = io::read_le<std::uint8_t>(is);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.adam.lr = io::read_le<double>(is);
  ckpt.adam.beta1 = io::read_le<double>(is);
  ckpt.adam.beta2 = io::read_le<double>(is);
  ckpt.adam.epsilon = io::read_le<double>(is);
  const auto count = io::read_le<std::uint32_t>(is);
  ckpt.records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointRecord r;
    const auto name_len = io::read_le<std::uint32_t>(is);
    r.name.resize(name_len);
    if (!is.read(r.name.data(), name_len)) throw FormatError("checkpoint: truncated name");
    const auto rank = io::read_le<std::uint32_t>(is);
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(io::read_le<std::uint32_t>(is));
    const std::size_t n = shape_size(r.shape);
    r.values.resize(n);
    for (auto& f : r.values) f = io::read_le<float>(is);
    r.adam_step = io::read_le<std::uint64_t>(is);
    if (io::read_le<std::uint8_t>(is)) {
      r.m.resize(n);
      r.v.resize(n);
      for (auto& f : r.m) f = io::read_le<float>(is);
      for (auto& f : r.v) f = io::read_le<float>(is);
    }
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

inline void save_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open " + path.string());
  write_checkpoint(os, ckpt);
}

inline Checkpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

/// Snapshot of parameters (as f32) and, when given, their Adam moments.
template <class T>
Checkpoint capture(const ParameterSet<T>& params, const Adam<T>* adam = nullptr) {
  Checkpoint ckpt;
  if (adam) ckpt.adam = adam->config();
  const auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    CheckpointRecord r;
    r.name = items[i].name;
    r.shape = items[i].var.value().shape();
    r.values.assign(items[i].var.value().vec().begin(), items[i].var.value().vec().end());
    if (adam && i < adam->states().size() && adam->states()[i].step > 0) {
      const auto& st = adam->states()[i];
      r.adam_step = st.step;
      r.m.assign(st.m.vec().begin(), st.m.vec().end());
      r.v.assign(st.v.vec().begin(), st.v.vec().end());
    }
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

/// Loads values by name; every parameter must be present with its shape.
template <class T>
void restore(const Checkpoint& ckpt, ParameterSet<T>& params, Adam<T>* adam = nullptr) {
  auto& items = params.items();
  if (adam) {
    adam->set_config(ckpt.adam);
    adam->states().assign(items.size(), AdamState<T>{});
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const CheckpointRecord* r = ckpt.find(items[i].name);
    if (!r) throw FormatError("checkpoint: missing parameter '" + items[i].name + "'");
    if (r->shape != items[i].var.value().shape())
      throw FormatError("checkpoint: shape mismatch for '" + items[i].name + "'");
    auto& dst = items[i].var.mutable_value().vec();
    std::copy(r->values.begin(), r->values.end(), dst.begin());
    if (adam && !r->m.empty()) {
      auto& st = adam->states()[i];
      st.step = r->adam_step;
      st.m = Tensor<T>(r->shape, std::vector<T>(r->m.begin(), r->m.end()));
      st.v = Tensor<T>(r->shape, std::vector<T>(r->v.begin(), r->v.end()));
    }
  }
}

}  // namespace cloak::nn
