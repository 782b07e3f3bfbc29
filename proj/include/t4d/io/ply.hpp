#pragma once

// PLY reading (ascii, binary little-endian) and writing.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "t4d/core.hpp"

namespace t4d {

enum class PlyFormat { ascii, binary_little_endian };

struct PlyWriteOptions {
  PlyFormat format = PlyFormat::binary_little_endian;
  /// Store coordinates as double instead of float.
  bool double_coordinates = false;
};

namespace detail {

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline PlyType ply_type(const std::string& s) {
  if (s == "char" || s == "int8") return PlyType::i8;
  if (s == "uchar" || s == "uint8") return PlyType::u8;
  if (s == "short" || s == "int16") return PlyType::i16;
  if (s == "ushort" || s == "uint16") return PlyType::u16;
  if (s == "int" || s == "int32") return PlyType::i32;
  if (s == "uint" || s == "uint32") return PlyType::u32;
  if (s == "float" || s == "float32") return PlyType::f32;
  if (s == "double" || s == "float64") return PlyType::f64;
  throw Error(ErrorCode::parse_failure, "malformed header: unknown property type '" + s + "'");
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <class T>
T read_le(std::istream& in) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::parse_failure, "unexpected end of PLY data");
  return v;
}

inline double read_binary(std::istream& in, PlyType t) {
  switch (t) {
    case PlyType::i8: return read_le<std::int8_t>(in);
    case PlyType::u8: return read_le<std::uint8_t>(in);
    case PlyType::i16: return read_le<std::int16_t>(in);
    case PlyType::u16: return read_le<std::uint16_t>(in);
    case PlyType::i32: return read_le<std::int32_t>(in);
    case PlyType::u32: return read_le<std::uint32_t>(in);
    case PlyType::f32: return read_le<float>(in);
    case PlyType::f64: return read_le<double>(in);
  }
  return 0.0;
}

inline double read_ascii(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw Error(ErrorCode::parse_failure, "unexpected end of PLY data");
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::parse_failure, "bad PLY value '" + tok + "'");
  }
}

template <class T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

/// Reads the vertex element. Recognized vertex properties: x, y, z (required),
/// red, green, blue (uchar scaled to [0,1], float taken as is) and segment.
inline StageCloud read_ply(std::istream& in) {
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "ply") throw Error(ErrorCode::parse_failure, "malformed header: missing 'ply' magic");

  std::optional<PlyFormat> format;
  std::vector<detail::PlyElement> elements;
  bool ended = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word.empty() || word == "comment" || word == "obj_info") continue;
    if (word == "format") {
      std::string f, version;
      ls >> f >> version;
      if (f == "ascii") format = PlyFormat::ascii;
      else if (f == "binary_little_endian") format = PlyFormat::binary_little_endian;
      else if (f == "binary_big_endian")
        throw Error(ErrorCode::unsupported_format, "big-endian PLY is not supported");
      else throw Error(ErrorCode::parse_failure, "malformed header: unknown format '" + f + "'");
    } else if (word == "element") {
      detail::PlyElement e;
      long long count = -1;
      ls >> e.name >> count;
      if (e.name.empty() || count < 0) throw Error(ErrorCode::parse_failure, "malformed header: bad element line");
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (word == "property") {
      if (elements.empty()) throw Error(ErrorCode::parse_failure, "malformed header: property before element");
      detail::PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it;
        p.is_list = true;
        p.count_type = detail::ply_type(ct);
        p.type = detail::ply_type(it);
      } else {
        p.type = detail::ply_type(type);
      }
      ls >> p.name;
      if (p.name.empty()) throw Error(ErrorCode::parse_failure, "malformed header: unnamed property");
      elements.back().properties.push_back(std::move(p));
    } else if (word == "end_header") {
      ended = true;
      break;
    } else {
      throw Error(ErrorCode::parse_failure, "malformed header: unexpected '" + word + "'");
    }
  }
  if (!ended) throw Error(ErrorCode::parse_failure, "malformed header: missing end_header");
  if (!format) throw Error(ErrorCode::parse_failure, "malformed header: missing format line");

  StageCloud cloud;
  bool seen_vertex = false;
  for (const auto& e : elements) {
    const bool vertex = e.name == "vertex";
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, iseg = -1;
    if (vertex) {
      seen_vertex = true;
      for (std::size_t k = 0; k < e.properties.size(); ++k) {
        const auto& n = e.properties[k].name;
        const int ki = static_cast<int>(k);
        if (e.properties[k].is_list) continue;
        if (n == "x") ix = ki;
        else if (n == "y") iy = ki;
        else if (n == "z") iz = ki;
        else if (n == "red") ir = ki;
        else if (n == "green") ig = ki;
        else if (n == "blue") ib = ki;
        else if (n == "segment") iseg = ki;
      }
      if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorCode::missing_property, "missing coordinate property");
      cloud.positions.resize(e.count);
      if (ir >= 0 && ig >= 0 && ib >= 0) cloud.colors.emplace(e.count);
      if (iseg >= 0) cloud.segment_ids.emplace(e.count);
    }
    std::vector<double> row(e.properties.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      for (std::size_t k = 0; k < e.properties.size(); ++k) {
        const auto& p = e.properties[k];
        if (p.is_list) {
          const double n = *format == PlyFormat::ascii ? detail::read_ascii(in) : detail::read_binary(in, p.count_type);
          if (n < 0) throw Error(ErrorCode::parse_failure, "negative PLY list length");
          for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j)
            *format == PlyFormat::ascii ? detail::read_ascii(in) : detail::read_binary(in, p.type);
          row[k] = 0.0;
        } else {
          row[k] = *format == PlyFormat::ascii ? detail::read_ascii(in) : detail::read_binary(in, p.type);
        }
      }
      if (!vertex) continue;
      cloud.positions[i] = {row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                            row[static_cast<std::size_t>(iz)]};
      if (cloud.colors) {
        auto channel = [&](int k) {
          const auto& p = e.properties[static_cast<std::size_t>(k)];
          const double v = row[static_cast<std::size_t>(k)];
          return static_cast<float>(p.type == detail::PlyType::u8 ? v / 255.0 : v);
        };
        (*cloud.colors)[i] = {channel(ir), channel(ig), channel(ib)};
      }
      if (cloud.segment_ids) (*cloud.segment_ids)[i] = static_cast<std::int64_t>(row[static_cast<std::size_t>(iseg)]);
    }
    if (vertex) break;
  }
  if (!seen_vertex) throw Error(ErrorCode::missing_property, "PLY has no vertex element");
  return cloud;
}

inline StageCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  return read_ply(in);
}

inline void write_ply(std::ostream& out, const StageCloud& cloud, const PlyWriteOptions& opt = {}) {
  const auto n = cloud.point_count();
  if (cloud.colors && cloud.colors->size() != n)
    throw Error(ErrorCode::dimension_mismatch, "color count differs from point count");
  if (cloud.segment_ids && cloud.segment_ids->size() != n)
    throw Error(ErrorCode::dimension_mismatch, "segment count differs from point count");
  const bool ascii = opt.format == PlyFormat::ascii;
  const char* ctype = opt.double_coordinates ? "double" : "float";
  out << "ply\nformat " << (ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
  out << "element vertex " << n << "\n";
  out << "property " << ctype << " x\nproperty " << ctype << " y\nproperty " << ctype << " z\n";
  if (cloud.colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.segment_ids) out << "property int segment\n";
  out << "end_header\n";

  auto to_u8 = [](float c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(c), 0.0, 1.0) * 255.0));
  };
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cloud.positions[i];
    if (ascii) {
      for (int a = 0; a < 3; ++a) {
        if (opt.double_coordinates) std::snprintf(buf, sizeof buf, "%.17g", p[a]);
        else std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(p[a])));
        out << (a ? " " : "") << buf;
      }
      if (cloud.colors)
        for (int c = 0; c < 3; ++c) out << ' ' << static_cast<int>(to_u8((*cloud.colors)[i][c]));
      if (cloud.segment_ids) out << ' ' << static_cast<std::int32_t>((*cloud.segment_ids)[i]);
      out << '\n';
    } else {
      for (int a = 0; a < 3; ++a) {
        if (opt.double_coordinates) detail::write_le<double>(out, p[a]);
        else detail::write_le<float>(out, static_cast<float>(p[a]));
      }
      if (cloud.colors)
        for (int c = 0; c < 3; ++c) detail::write_le<std::uint8_t>(out, to_u8((*cloud.colors)[i][c]));
      if (cloud.segment_ids) detail::write_le<std::int32_t>(out, static_cast<std::int32_t>((*cloud.segment_ids)[i]));
    }
  }
  if (!out) throw Error(ErrorCode::io_failure, "PLY write failed");
}

inline void write_ply(const std::filesystem::path& path, const StageCloud& cloud, const PlyWriteOptions& opt = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot open " + path.string() + " for writing");
  write_ply(out, cloud, opt);
}

}  // namespace t4d
