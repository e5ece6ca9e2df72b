#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "kpdiff/error.hpp"
#include "kpdiff/geometry.hpp"

namespace kpdiff {

enum class CloudFormat { XyzText, PlyAscii };

using ParsedCloud = std::variant<PointCloud, LabeledPointCloud>;

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  // strtod accepts forms from_chars<double> rejects on older toolchains ("+1").
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<int> parse_label(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && ptr == s.data() + s.size() && v >= 0) return v;
  // Labels written by float-typed PLY writers ("2.0").
  auto d = parse_real(s);
  if (d && *d >= 0 && *d == std::floor(*d) && *d < 2147483647.0) return static_cast<int>(*d);
  return std::nullopt;
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i <= text.size()) {
    std::size_t j = text.find('\n', i);
    if (j == std::string_view::npos) j = text.size();
    std::string_view line = text.substr(i, j - i);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    if (j == text.size()) break;
    i = j + 1;
  }
  return out;
}

inline ParsedCloud finish(std::vector<double>&& xyz, std::vector<int>&& labels, bool labeled) {
  const auto n = static_cast<Eigen::Index>(xyz.size() / 3);
  if (n == 0) throw Error(ErrorCode::EmptyCloud, "no points in input");
  Points p(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) p.row(i) << xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2];
  if (labeled) return LabeledPointCloud{PointCloud(std::move(p)), std::move(labels)};
  return PointCloud(std::move(p));
}

inline ParsedCloud parse_xyz(std::string_view text) {
  std::vector<double> xyz;
  std::vector<int> labels;
  std::optional<std::size_t> columns;
  const auto lines = lines_of(text);
  for (std::size_t row = 0; row < lines.size(); ++row) {
    auto fields = split_ws(lines[row]);
    if (fields.empty() || fields.front().front() == '#') continue;
    if (fields.size() != 3 && fields.size() != 4) {
      throw MalformedLine(row, "expected 3 or 4 fields, got " + std::to_string(fields.size()));
    }
    if (!columns) columns = fields.size();
    if (*columns != fields.size()) throw MalformedLine(row, "inconsistent column count");
    for (std::size_t c = 0; c < 3; ++c) {
      auto v = parse_real(fields[c]);
      if (!v) throw MalformedLine(row, "bad coordinate '" + std::string(fields[c]) + "'");
      xyz.push_back(*v);
    }
    if (fields.size() == 4) {
      auto l = parse_label(fields[3]);
      if (!l) throw MalformedLine(row, "bad label '" + std::string(fields[3]) + "'");
      labels.push_back(*l);
    }
  }
  return finish(std::move(xyz), std::move(labels), columns.value_or(3) == 4);
}

inline ParsedCloud parse_ply(std::string_view text) {
  const auto lines = lines_of(text);
  std::size_t row = 0;
  auto header_line = [&](std::size_t r) { return split_ws(lines.at(r)); };
  if (lines.empty() || split_ws(lines[0]).empty() || split_ws(lines[0])[0] != "ply") {
    throw MalformedLine(0, "missing 'ply' magic");
  }
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::vector<std::string> props;
  std::size_t elements_before_vertex_rows = 0;
  std::size_t pending_rows = 0;
  for (row = 1; row < lines.size(); ++row) {
    auto f = header_line(row);
    if (f.empty()) continue;
    if (f[0] == "end_header") break;
    if (f[0] == "format") {
      if (f.size() < 2 || f[1] != "ascii") throw MalformedLine(row, "only ascii PLY is supported");
    } else if (f[0] == "element") {
      if (f.size() != 3) throw MalformedLine(row, "bad element line");
      std::size_t count = 0;
      auto [p, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), count);
      if (ec != std::errc()) throw MalformedLine(row, "bad element count");
      in_vertex = f[1] == "vertex";
      if (in_vertex) {
        vertex_count = count;
        seen_vertex = true;
        elements_before_vertex_rows = pending_rows;
      } else if (!seen_vertex) {
        pending_rows += count;
      }
    } else if (f[0] == "property") {
      if (in_vertex) {
        if (f.size() < 3) throw MalformedLine(row, "bad property line");
        if (f[1] == "list") throw MalformedLine(row, "list properties on vertices are not supported");
        props.emplace_back(f.back());
      }
    } else if (f[0] != "comment" && f[0] != "obj_info") {
      throw MalformedLine(row, "unexpected header line");
    }
  }
  if (row >= lines.size()) throw MalformedLine(row, "missing end_header");
  if (!seen_vertex) throw Error(ErrorCode::EmptyCloud, "PLY has no vertex element");
  auto find = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i] == name) return i;
    return std::nullopt;
  };
  const auto ix = find("x"), iy = find("y"), iz = find("z");
  const auto il = find("label");
  if (!ix || !iy || !iz) throw MalformedLine(row, "vertex element lacks x/y/z");
  std::vector<double> xyz;
  std::vector<int> labels;
  xyz.reserve(3 * vertex_count);
  std::size_t r = row + 1 + elements_before_vertex_rows;
  for (std::size_t v = 0; v < vertex_count; ++v, ++r) {
    if (r >= lines.size()) throw MalformedLine(r, "truncated vertex data");
    auto f = split_ws(lines[r]);
    if (f.size() != props.size()) throw MalformedLine(r, "expected " + std::to_string(props.size()) + " fields");
    for (auto idx : {*ix, *iy, *iz}) {
      auto val = parse_real(f[idx]);
      if (!val) throw MalformedLine(r, "bad coordinate '" + std::string(f[idx]) + "'");
      xyz.push_back(*val);
    }
    if (il) {
      auto l = parse_label(f[*il]);
      if (!l) throw MalformedLine(r, "bad label");
      labels.push_back(*l);
    }
  }
  return finish(std::move(xyz), std::move(labels), il.has_value());
}

inline std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline ParsedCloud parse_pointcloud(std::string_view bytes, CloudFormat format) {
  return format == CloudFormat::XyzText ? detail::parse_xyz(bytes) : detail::parse_ply(bytes);
}

inline PointCloud cloud_of(const ParsedCloud& parsed) {
  if (auto* l = std::get_if<LabeledPointCloud>(&parsed)) return l->cloud;
  return std::get<PointCloud>(parsed);
}

inline CloudFormat format_for_path(const std::string& path) {
  auto dot = path.rfind('.');
  if (dot != std::string::npos && path.substr(dot) == ".ply") return CloudFormat::PlyAscii;
  return CloudFormat::XyzText;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

inline ParsedCloud load_pointcloud(const std::string& path) {
  return parse_pointcloud(read_file(path), format_for_path(path));
}

/// Coordinates are written with 9 significant digits.
inline std::string serialize_xyz(const Points& p, const std::vector<int>* labels = nullptr) {
  std::string out;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    out += detail::fmt9(p(i, 0)) + ' ' + detail::fmt9(p(i, 1)) + ' ' + detail::fmt9(p(i, 2));
    if (labels) out += ' ' + std::to_string((*labels)[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

inline std::string serialize_ply(const Points& p, const std::vector<int>* labels = nullptr) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(p.rows()) +
                    "\nproperty double x\nproperty double y\nproperty double z\n";
  if (labels) out += "property int label\n";
  out += "end_header\n";
  return out + serialize_xyz(p, labels);
}

inline std::string serialize(const Points& p, CloudFormat format, const std::vector<int>* labels = nullptr) {
  return format == CloudFormat::XyzText ? serialize_xyz(p, labels) : serialize_ply(p, labels);
}

inline void save_points(const std::string& path, const Points& p, const std::vector<int>* labels = nullptr) {
  write_file(path, serialize(p, format_for_path(path), labels));
}

}  // namespace kpdiff
