#pragma once

// Dataset file.
//
//   "CLK1"          4 bytes
//   version         u8 (= 1)
//   record count    u32
//   per record:     4096 pixel bytes (row-major 64x64, 0/1), psi_r f64, psi_p f64
//
// Unknown values are stored as NaN. Little-endian throughout; a file holds
// exactly 9 + 4112 * count bytes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cloak/binary_io.hpp"
#include "cloak/geometry.hpp"

namespace cloak {

inline constexpr std::uint8_t kDatasetVersion = 1;
inline constexpr int kDatasetImageSize = 64;
inline constexpr std::size_t kDatasetHeaderBytes = 9;
inline constexpr std::size_t kDatasetRecordBytes = 64 * 64 + 16;

struct DatasetRecord {
  QuadrantImage image{kDatasetImageSize};
  double psi_r = std::numeric_limits<double>::quiet_NaN();
  double psi_p = std::numeric_limits<double>::quiet_NaN();

  bool simulated() const { return std::isfinite(psi_r); }
};

/// Bitwise equality (NaN == NaN when the payloads match).
inline bool bit_equal(const DatasetRecord& a, const DatasetRecord& b) {
  return a.image == b.image && std::bit_cast<std::uint64_t>(a.psi_r) == std::bit_cast<std::uint64_t>(b.psi_r) &&
         std::bit_cast<std::uint64_t>(a.psi_p) == std::bit_cast<std::uint64_t>(b.psi_p);
}

namespace detail {

inline void write_record(std::ostream& os, const DatasetRecord& r) {
  if (r.image.size() != kDatasetImageSize)
    throw FormatError("dataset: images must be " + std::to_string(kDatasetImageSize) + " pixels per side");
  os.write(reinterpret_cast<const char*>(r.image.pixels().data()), static_cast<std::streamsize>(r.image.pixels().size()));
  io::write_le(os, r.psi_r);
  io::write_le(os, r.psi_p);
}

inline DatasetRecord read_record(std::istream& is, std::size_t index) {
  DatasetRecord r;
  std::vector<std::uint8_t> buf(kDatasetImageSize * kDatasetImageSize);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError("dataset: truncated record " + std::to_string(index));
  for (std::size_t k = 0; k < buf.size(); ++k) {
    if (buf[k] > 1) throw FormatError("dataset: pixel byte outside {0,1} in record " + std::to_string(index));
    r.image.set(static_cast<int>(k / kDatasetImageSize), static_cast<int>(k % kDatasetImageSize), buf[k]);
  }
  r.psi_r = io::read_le<double>(is);
  r.psi_p = io::read_le<double>(is);
  return r;
}

}  // namespace detail

inline void write_dataset(std::ostream& os, const std::vector<DatasetRecord>& records) {
  io::write_magic(os, "CLK1");
  io::write_le<std::uint8_t>(os, kDatasetVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) detail::write_record(os, r);
}

inline std::vector<DatasetRecord> read_dataset(std::istream& is) {
  io::expect_magic(is, "CLK1", "dataset");
  const auto version = io::read_le<std::uint8_t>(is);
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const auto count = io::read_le<std::uint32_t>(is);
  std::vector<DatasetRecord> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) out.push_back(detail::read_record(is, k));
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("dataset: trailing bytes after last record");
  return out;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("dataset: cannot write " + tmp);
    write_dataset(os, records);
    if (!os.flush()) throw FormatError("dataset: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("dataset: cannot open " + path.string());
  const auto size = std::filesystem::file_size(path);
  auto records = read_dataset(is);
  if (size != kDatasetHeaderBytes + kDatasetRecordBytes * records.size())
    throw FormatError("dataset: file length does not match record count");
  return records;
}

/// Appends records in place and then bumps the header count, so an
/// interrupted append leaves the previous records readable after truncation.
inline void append_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  if (!std::filesystem::exists(path)) {
    save_dataset(path, records);
    return;
  }
  std::fstream fs(path, std::ios::binary | std::ios::in | std::ios::out);
  if (!fs) throw FormatError("dataset: cannot open " + path.string());
  io::expect_magic(fs, "CLK1", "dataset");
  const auto version = io::read_le<std::uint8_t>(fs);
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const auto count = io::read_le<std::uint32_t>(fs);
  const auto end = kDatasetHeaderBytes + kDatasetRecordBytes * count;
  if (std::filesystem::file_size(path) < end) throw FormatError("dataset: file shorter than its record count");
  fs.seekp(static_cast<std::streamoff>(end));
  for (const auto& r : records) detail::write_record(fs, r);
  fs.seekp(5);
  io::write_le<std::uint32_t>(fs, static_cast<std::uint32_t>(count + records.size()));
  if (!fs.flush()) throw FormatError("dataset: append failed for " + path.string());
  fs.close();
  std::filesystem::resize_file(path, end + kDatasetRecordBytes * records.size());
}

}  // namespace cloak
