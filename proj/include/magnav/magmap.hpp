#pragma once

// Scalar magnetic-field map over a 2D workspace.
//
// Grid node (i, j) sits at origin + (i, j) * cell_size; values are stored
// row-major with row 0 at minimum y. Queries between nodes use bilinear
// interpolation, so the field is continuous across cell boundaries.
//
// Text format (magmap v1):
//   magmap v1 <width> <height> <origin_x> <origin_y> <cell_size>
//   <height lines of width whitespace-separated values in nT>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "magnav/error.hpp"

namespace magnav {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct MapGeometry {
  Vec2 origin;
  double cell_size = 1.0;
  std::size_t width = 2;
  std::size_t height = 2;

  void validate() const {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
      throw InvalidArgument("cell_size must be finite and > 0");
    if (width < 2) throw InvalidArgument("width must be >= 2");
    if (height < 2) throw InvalidArgument("height must be >= 2");
    if (!std::isfinite(origin.x) || !std::isfinite(origin.y))
      throw InvalidArgument("origin must be finite");
  }
};

// Immutable after construction; safe to share across threads.
class MagMap {
 public:
  MagMap(MapGeometry geometry, std::vector<double> values)
      : geometry_(geometry), values_(std::move(values)) {
    geometry_.validate();
    if (values_.size() != geometry_.width * geometry_.height)
      throw InvalidArgument("value count " + std::to_string(values_.size()) +
                            " does not match width*height");
    for (double v : values_) {
      if (!std::isfinite(v) || !(v > 0.0))
        throw InvalidArgument("map values must be finite and > 0");
    }
  }

  const MapGeometry& geometry() const { return geometry_; }
  std::size_t width() const { return geometry_.width; }
  std::size_t height() const { return geometry_.height; }
  double cell_size() const { return geometry_.cell_size; }
  Vec2 origin() const { return geometry_.origin; }
  const std::vector<double>& values() const { return values_; }

  double x_max() const {
    return geometry_.origin.x + static_cast<double>(geometry_.width - 1) * geometry_.cell_size;
  }
  double y_max() const {
    return geometry_.origin.y + static_cast<double>(geometry_.height - 1) * geometry_.cell_size;
  }

  double at(std::size_t i, std::size_t j) const { return values_[j * geometry_.width + i]; }

  Vec2 node_position(std::size_t i, std::size_t j) const {
    return {geometry_.origin.x + static_cast<double>(i) * geometry_.cell_size,
            geometry_.origin.y + static_cast<double>(j) * geometry_.cell_size};
  }

  bool contains(Vec2 p) const {
    return p.x >= geometry_.origin.x && p.x <= x_max() && p.y >= geometry_.origin.y &&
           p.y <= y_max();
  }

  // Nearest point of the rectangular extent.
  Vec2 clamp(Vec2 p) const {
    return {std::clamp(p.x, geometry_.origin.x, x_max()),
            std::clamp(p.y, geometry_.origin.y, y_max())};
  }

  // Bilinear field value in nT. Throws OutOfMapError outside the extent.
  double sample(Vec2 p) const {
    if (!contains(p)) throw OutOfMapError(p.x, p.y);
    return interpolate(p);
  }

 private:
  double interpolate(Vec2 p) const {
    const double gx = (p.x - geometry_.origin.x) / geometry_.cell_size;
    const double gy = (p.y - geometry_.origin.y) / geometry_.cell_size;
    const auto last_i = geometry_.width - 2;
    const auto last_j = geometry_.height - 2;
    const std::size_t i =
        std::min(static_cast<std::size_t>(std::max(0.0, std::floor(gx))), last_i);
    const std::size_t j =
        std::min(static_cast<std::size_t>(std::max(0.0, std::floor(gy))), last_j);
    const double fx = std::clamp(gx - static_cast<double>(i), 0.0, 1.0);
    const double fy = std::clamp(gy - static_cast<double>(j), 0.0, 1.0);

    const double v00 = at(i, j);
    const double v10 = at(i + 1, j);
    const double v01 = at(i, j + 1);
    const double v11 = at(i + 1, j + 1);
    const double lower = v00 + fx * (v10 - v00);
    const double upper = v01 + fx * (v11 - v01);
    return lower + fy * (upper - lower);
  }

  MapGeometry geometry_;
  std::vector<double> values_;
};

// Single Gaussian peak on a uniform background.
struct SyntheticMapSpec {
  double base_field = 25000.0;  // nT
  Vec2 peak_center;
  double peak_amplitude = 1000.0;  // nT
  Vec2 peak_sigma{1.0, 1.0};       // m, per axis

  void validate() const {
    if (!(base_field > 0.0)) throw InvalidArgument("base_field must be > 0");
    if (!(peak_sigma.x > 0.0) || !(peak_sigma.y > 0.0))
      throw InvalidArgument("peak_sigma must be > 0");
    if (!std::isfinite(peak_amplitude)) throw InvalidArgument("peak_amplitude must be finite");
  }
};

inline double synthetic_field(const SyntheticMapSpec& spec, Vec2 p) {
  const double dx = (p.x - spec.peak_center.x) / spec.peak_sigma.x;
  const double dy = (p.y - spec.peak_center.y) / spec.peak_sigma.y;
  return spec.base_field + spec.peak_amplitude * std::exp(-0.5 * (dx * dx + dy * dy));
}

inline MagMap generate_synthetic(const SyntheticMapSpec& spec, const MapGeometry& geometry) {
  spec.validate();
  geometry.validate();
  std::vector<double> values;
  values.reserve(geometry.width * geometry.height);
  for (std::size_t j = 0; j < geometry.height; ++j) {
    for (std::size_t i = 0; i < geometry.width; ++i) {
      const Vec2 p{geometry.origin.x + static_cast<double>(i) * geometry.cell_size,
                   geometry.origin.y + static_cast<double>(j) * geometry.cell_size};
      values.push_back(synthetic_field(spec, p));
    }
  }
  return MagMap(geometry, std::move(values));
}

namespace detail {

inline bool parse_double(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline bool parse_size(std::string_view token, std::size_t& out) {
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos > start) tokens.push_back(line.substr(start, pos - start));
  }
  return tokens;
}

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline void write_map(std::ostream& os, const MagMap& map) {
  const auto& g = map.geometry();
  os << "magmap v1 " << g.width << ' ' << g.height << ' ' << detail::format_double(g.origin.x)
     << ' ' << detail::format_double(g.origin.y) << ' ' << detail::format_double(g.cell_size)
     << '\n';
  for (std::size_t j = 0; j < g.height; ++j) {
    for (std::size_t i = 0; i < g.width; ++i) {
      if (i) os << ' ';
      os << detail::format_double(map.at(i, j));
    }
    os << '\n';
  }
}

inline MagMap read_map(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError(0, "empty map file");
  ++line_no;

  const auto header = detail::split_ws(line);
  if (header.size() != 7 || header[0] != "magmap" || header[1] != "v1")
    throw ParseError(line_no,
                     "expected header 'magmap v1 <width> <height> <origin_x> <origin_y> "
                     "<cell_size>'");
  MapGeometry g;
  if (!detail::parse_size(header[2], g.width) || !detail::parse_size(header[3], g.height) ||
      !detail::parse_double(header[4], g.origin.x) ||
      !detail::parse_double(header[5], g.origin.y) ||
      !detail::parse_double(header[6], g.cell_size))
    throw ParseError(line_no, "malformed header field");
  try {
    g.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(line_no, e.what());
  }

  std::vector<double> values;
  values.reserve(g.width * g.height);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) {
      // Only trailing blank lines are tolerated.
      std::string rest;
      while (std::getline(is, rest)) {
        ++line_no;
        if (!detail::split_ws(rest).empty()) throw ParseError(line_no, "content after blank line");
      }
      break;
    }
    if (rows == g.height)
      throw ParseError(line_no, "more rows than the declared height " + std::to_string(g.height));
    if (tokens.size() != g.width)
      throw ParseError(line_no, "expected " + std::to_string(g.width) + " values, found " +
                                    std::to_string(tokens.size()));
    for (auto t : tokens) {
      double v = 0.0;
      if (!detail::parse_double(t, v)) throw ParseError(line_no, "bad number '" + std::string(t) + "'");
      if (!std::isfinite(v) || !(v > 0.0)) throw ParseError(line_no, "field values must be finite and > 0");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows != g.height)
    throw ParseError(line_no, "declared height " + std::to_string(g.height) + " but found " +
                                  std::to_string(rows) + " rows");
  return MagMap(g, std::move(values));
}

inline void save_map(const MagMap& map, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_map(os, map);
  if (!os) throw Error("failed writing '" + path + "'");
}

inline MagMap load_map(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  return read_map(is);
}

}  // namespace magnav
