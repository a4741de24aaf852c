#pragma once

// Binary PPM (P6, 8-bit RGB) and PBM (P4, 1-bit) codecs, and run-length
// encoding of binary masks.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ris/error.hpp"

namespace ris {

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;  // 0/1, row-major

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
  }
  bool operator==(const BinaryMask&) const = default;
};

// Row-major alternating run lengths, starting with a (possibly empty)
// background run.
inline std::vector<std::size_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::size_t> runs;
  std::uint8_t current = 0;
  std::size_t len = 0;
  for (auto b : mask.bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      runs.push_back(len);
      current = v;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

inline BinaryMask rle_decode(const std::vector<std::size_t>& runs, std::size_t height, std::size_t width) {
  std::size_t total = 0;
  for (auto r : runs) total += r;
  if (total != height * width)
    throw Error(ErrorCode::BadRunSum,
                "runs total " + std::to_string(total) + ", mask has " + std::to_string(height * width) + " pixels");
  BinaryMask m{height, width, {}};
  m.bits.reserve(total);
  std::uint8_t v = 0;
  for (auto r : runs) {
    m.bits.insert(m.bits.end(), r, v);
    v ^= 1;
  }
  return m;
}

inline std::string rle_to_string(const std::vector<std::size_t>& runs) {
  std::string s;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i) s.push_back(' ');
    s += std::to_string(runs[i]);
  }
  return s;
}

inline std::vector<std::size_t> rle_from_string(const std::string& s) {
  std::vector<std::size_t> runs;
  std::istringstream in(s);
  long long v;
  while (in >> v) {
    if (v < 0) throw Error(ErrorCode::BadRunSum, "negative run length");
    runs.push_back(static_cast<std::size_t>(v));
  }
  if (!in.eof()) throw Error(ErrorCode::BadRunSum, "malformed run list '" + s + "'");
  return runs;
}

namespace detail {

inline std::size_t read_header_int(std::istream& in, const std::string& path) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  std::size_t v = 0;
  if (!(in >> v)) throw Error(ErrorCode::IoError, path + ": malformed header");
  return v;
}

}  // namespace detail

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw Error(ErrorCode::IoError, path.string() + ": not a binary PPM");
  RgbImage img;
  img.width = detail::read_header_int(in, path.string());
  img.height = detail::read_header_int(in, path.string());
  if (detail::read_header_int(in, path.string()) != 255)
    throw Error(ErrorCode::IoError, path.string() + ": only 8-bit PPM is supported");
  in.get();
  img.pixels.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": truncated pixel data");
  return img;
}

inline void write_pbm(const std::filesystem::path& path, const BinaryMask& mask) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "P4\n" << mask.width << ' ' << mask.height << '\n';
  const std::size_t row_bytes = (mask.width + 7) / 8;
  std::vector<std::uint8_t> row(row_bytes);
  for (std::size_t y = 0; y < mask.height; ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (std::size_t x = 0; x < mask.width; ++x)
      if (mask.bits[y * mask.width + x]) row[x / 8] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row_bytes));
  }
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

inline BinaryMask read_pbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P4") throw Error(ErrorCode::IoError, path.string() + ": not a binary PBM");
  BinaryMask m;
  m.width = detail::read_header_int(in, path.string());
  m.height = detail::read_header_int(in, path.string());
  in.get();
  const std::size_t row_bytes = (m.width + 7) / 8;
  std::vector<std::uint8_t> row(row_bytes);
  m.bits.resize(m.width * m.height);
  for (std::size_t y = 0; y < m.height; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_bytes));
    if (!in) throw Error(ErrorCode::IoError, path.string() + ": truncated bitmap");
    for (std::size_t x = 0; x < m.width; ++x) m.bits[y * m.width + x] = (row[x / 8] >> (7 - x % 8)) & 1u;
  }
  return m;
}

}  // namespace ris
