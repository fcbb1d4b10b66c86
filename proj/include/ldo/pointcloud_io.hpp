#pragma once

// XYZ (whitespace-separated triples, one per line) and the ASCII PLY subset
// with x/y/z vertex properties. Readers reject malformed input instead of
// truncating.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ldo/error.hpp"
#include "ldo/point_cloud.hpp"

namespace ldo {

namespace io_detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw format_error("cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw format_error("cannot write " + path.string());
  return out;
}

inline bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

inline float parse_float(const std::string& token, std::size_t line_no) {
  // strtof rather than stof: subnormal values are legal coordinates
  char* end = nullptr;
  const float v = std::strtof(token.c_str(), &end);
  if (token.empty() || end != token.c_str() + token.size() || !std::isfinite(v)) {
    throw parse_error("not a finite number: '" + token + "'", line_no);
  }
  return v;
}

// 9 significant digits round-trip every float exactly
inline std::string format_point(const Point3& p) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", static_cast<double>(p[0]), static_cast<double>(p[1]),
                static_cast<double>(p[2]));
  return buf;
}

}  // namespace io_detail

inline PointCloud parse_xyz(std::istream& in) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io_detail::blank(line)) continue;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(t);
    if (tokens.size() != 3) {
      throw parse_error("expected 3 coordinates, found " + std::to_string(tokens.size()), line_no);
    }
    cloud.points.push_back({io_detail::parse_float(tokens[0], line_no), io_detail::parse_float(tokens[1], line_no),
                            io_detail::parse_float(tokens[2], line_no)});
  }
  if (cloud.empty()) throw format_error("xyz input contains no points");
  return cloud;
}

inline PointCloud read_xyz(const std::filesystem::path& path) {
  auto in = io_detail::open_input(path);
  return parse_xyz(in);
}

inline void write_xyz(const PointCloud& cloud, std::ostream& out) {
  for (const auto& p : cloud.points) out << io_detail::format_point(p) << '\n';
}

inline void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  auto out = io_detail::open_output(path);
  write_xyz(cloud, out);
  if (!out) throw format_error("failed writing " + path.string());
}

inline PointCloud parse_ply(std::istream& in) {
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
    bool has_list = false;
  };
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line() || line != "ply") throw parse_error("missing 'ply' magic", line_no);
  std::vector<Element> elements;
  bool saw_format = false;
  for (;;) {
    if (!next_line()) throw parse_error("header not terminated by end_header", line_no);
    std::istringstream fields(line);
    std::string keyword;
    fields >> keyword;
    if (keyword == "end_header") break;
    if (keyword == "comment" || keyword == "obj_info" || keyword.empty()) continue;
    if (keyword == "format") {
      std::string kind;
      fields >> kind;
      if (kind != "ascii") throw format_error("unsupported PLY format '" + kind + "': only ascii is supported");
      saw_format = true;
    } else if (keyword == "element") {
      Element e;
      long long count = -1;
      fields >> e.name >> count;
      if (e.name.empty() || count < 0 || !fields) throw parse_error("malformed element declaration", line_no);
      e.count = static_cast<std::size_t>(count);
      elements.push_back(e);
    } else if (keyword == "property") {
      if (elements.empty()) throw parse_error("property before any element", line_no);
      std::string type;
      fields >> type;
      if (type == "list") {
        elements.back().has_list = true;
        std::string count_type, item_type, name;
        fields >> count_type >> item_type >> name;
        elements.back().properties.push_back(name);
      } else {
        std::string name;
        fields >> name;
        elements.back().properties.push_back(name);
      }
    } else {
      throw parse_error("unknown header keyword '" + keyword + "'", line_no);
    }
  }
  if (!saw_format) throw format_error("PLY header lacks a format line");

  PointCloud cloud;
  bool found_vertex = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) {
        if (!next_line()) throw parse_error("file ends inside element '" + e.name + "'", line_no);
      }
      continue;
    }
    found_vertex = true;
    if (e.has_list) throw format_error("unsupported PLY: list property on vertex element");
    int ix = -1, iy = -1, iz = -1;
    for (std::size_t p = 0; p < e.properties.size(); ++p) {
      if (e.properties[p] == "x") ix = static_cast<int>(p);
      if (e.properties[p] == "y") iy = static_cast<int>(p);
      if (e.properties[p] == "z") iz = static_cast<int>(p);
    }
    if (ix < 0 || iy < 0 || iz < 0) throw format_error("unsupported PLY: vertex element lacks x, y or z property");
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!next_line()) throw parse_error("file ends after " + std::to_string(i) + " of " + std::to_string(e.count) + " vertices", line_no);
      std::istringstream fields(line);
      std::vector<std::string> tokens;
      for (std::string t; fields >> t;) tokens.push_back(t);
      if (tokens.size() != e.properties.size()) {
        throw parse_error("expected " + std::to_string(e.properties.size()) + " vertex values, found " +
                              std::to_string(tokens.size()),
                          line_no);
      }
      cloud.points.push_back({io_detail::parse_float(tokens[static_cast<std::size_t>(ix)], line_no),
                              io_detail::parse_float(tokens[static_cast<std::size_t>(iy)], line_no),
                              io_detail::parse_float(tokens[static_cast<std::size_t>(iz)], line_no)});
    }
  }
  if (!found_vertex) throw format_error("unsupported PLY: no vertex element");
  if (cloud.empty()) throw format_error("PLY input contains no vertices");
  return cloud;
}

inline PointCloud read_ply(const std::filesystem::path& path) {
  auto in = io_detail::open_input(path);
  return parse_ply(in);
}

inline void write_ply(const PointCloud& cloud, std::ostream& out) {
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : cloud.points) out << io_detail::format_point(p) << '\n';
}

inline void write_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  auto out = io_detail::open_output(path);
  write_ply(cloud, out);
  if (!out) throw format_error("failed writing " + path.string());
}

/// Dispatches on extension: .ply, otherwise XYZ.
inline PointCloud read_cloud(const std::filesystem::path& path) {
  return path.extension() == ".ply" ? read_ply(path) : read_xyz(path);
}

inline void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  if (path.extension() == ".ply") {
    write_ply(cloud, path);
  } else {
    write_xyz(cloud, path);
  }
}

}  // namespace ldo
