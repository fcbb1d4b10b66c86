#pragma once

// Desk-scale stand-in for a shape repository: uniform surface samples of
// parametric primitives with random proportions, normalized to the unit sphere.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ldo/error.hpp"
#include "ldo/point_cloud.hpp"
#include "ldo/rng.hpp"

namespace ldo {

enum class ShapeClass { ellipsoid, box, cylinder, composite };

inline std::string to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::ellipsoid:
      return "ellipsoid";
    case ShapeClass::box:
      return "box";
    case ShapeClass::cylinder:
      return "cylinder";
    case ShapeClass::composite:
      return "composite";
  }
  return "unknown";
}

inline ShapeClass parse_shape_class(const std::string& name) {
  for (auto c : {ShapeClass::ellipsoid, ShapeClass::box, ShapeClass::cylinder, ShapeClass::composite}) {
    if (to_string(c) == name) return c;
  }
  throw argument_error("unknown shape class '" + name + "'");
}

struct SizeRange {
  double min = 0.4;
  double max = 1.0;
};

struct SyntheticSpec {
  std::vector<ShapeClass> classes{ShapeClass::ellipsoid};
  SizeRange extent;  // range for every size parameter of every class
  std::size_t points_per_cloud = 256;
  std::size_t count = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes.empty()) throw argument_error("synthetic spec: no shape classes");
    if (count < 1) throw argument_error("synthetic spec: count must be at least 1");
    if (points_per_cloud < 1) throw argument_error("synthetic spec: points_per_cloud must be at least 1");
    if (!(extent.min > 0.0) || !(extent.max >= extent.min) || !std::isfinite(extent.max)) {
      throw argument_error("synthetic spec: size range must satisfy 0 < min <= max");
    }
  }
};

struct LabeledCloud {
  PointCloud cloud;
  ShapeClass label;
};

namespace synthetic_detail {

using Rng = std::mt19937_64;

struct AxisBox {
  std::array<double, 3> lo;
  std::array<double, 3> hi;
};

inline double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

// Area-weighted sampling over the faces of a set of boxes.
inline std::vector<std::array<double, 3>> sample_boxes(const std::vector<AxisBox>& boxes, std::size_t n, Rng& rng) {
  struct Face {
    std::array<double, 3> lo, hi;
    int fixed_axis;
    double fixed_value;
    double area;
  };
  std::vector<Face> faces;
  for (const auto& b : boxes) {
    for (int axis = 0; axis < 3; ++axis) {
      const int u = (axis + 1) % 3;
      const int v = (axis + 2) % 3;
      const double area = (b.hi[u] - b.lo[u]) * (b.hi[v] - b.lo[v]);
      faces.push_back({b.lo, b.hi, axis, b.lo[axis], area});
      faces.push_back({b.lo, b.hi, axis, b.hi[axis], area});
    }
  }
  std::vector<double> weights;
  for (const auto& f : faces) weights.push_back(f.area);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<std::array<double, 3>> pts(n);
  for (auto& p : pts) {
    const auto& f = faces[pick(rng)];
    for (int k = 0; k < 3; ++k) p[k] = k == f.fixed_axis ? f.fixed_value : uniform(rng, f.lo[k], f.hi[k]);
  }
  return pts;
}

inline std::array<double, 3> unit_direction(Rng& rng) {
  std::normal_distribution<double> normal;
  for (;;) {
    std::array<double, 3> d{normal(rng), normal(rng), normal(rng)};
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (len > 1e-12) return {d[0] / len, d[1] / len, d[2] / len};
  }
}

// Rejection on the area element so samples are uniform on the ellipsoid surface.
inline std::vector<std::array<double, 3>> sample_ellipsoid(double a, double b, double c, std::size_t n, Rng& rng) {
  const double gmax = std::max({b * c, a * c, a * b});
  std::vector<std::array<double, 3>> pts;
  pts.reserve(n);
  while (pts.size() < n) {
    const auto u = unit_direction(rng);
    const double g = std::sqrt(std::pow(b * c * u[0], 2) + std::pow(a * c * u[1], 2) + std::pow(a * b * u[2], 2));
    if (uniform(rng, 0.0, gmax) <= g) pts.push_back({a * u[0], b * u[1], c * u[2]});
  }
  return pts;
}

inline std::vector<std::array<double, 3>> sample_cylinder(double radius, double height, std::size_t n, Rng& rng) {
  const double side = 2.0 * std::numbers::pi * radius * height;
  const double cap = std::numbers::pi * radius * radius;
  std::discrete_distribution<int> part({side, cap, cap});
  std::vector<std::array<double, 3>> pts(n);
  for (auto& p : pts) {
    const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const int which = part(rng);
    if (which == 0) {
      p = {radius * std::cos(theta), radius * std::sin(theta), uniform(rng, -height / 2, height / 2)};
    } else {
      const double r = radius * std::sqrt(uniform(rng, 0.0, 1.0));
      p = {r * std::cos(theta), r * std::sin(theta), which == 1 ? height / 2 : -height / 2};
    }
  }
  return pts;
}

struct Sampled {
  std::vector<std::array<double, 3>> points;
  std::array<double, 3> centroid{0, 0, 0};  // area centroid of the surface, not of the samples
};

// Area-weighted centre of the box faces.
inline std::array<double, 3> boxes_centroid(const std::vector<AxisBox>& boxes) {
  std::array<double, 3> c{0, 0, 0};
  double total = 0.0;
  for (const auto& b : boxes) {
    for (int axis = 0; axis < 3; ++axis) {
      const int u = (axis + 1) % 3;
      const int v = (axis + 2) % 3;
      const double area = (b.hi[u] - b.lo[u]) * (b.hi[v] - b.lo[v]);
      for (double side : {b.lo[axis], b.hi[axis]}) {
        for (int k = 0; k < 3; ++k) c[k] += area * (k == axis ? side : 0.5 * (b.lo[k] + b.hi[k]));
        total += area;
      }
    }
  }
  for (auto& v : c) v /= total;
  return c;
}

inline PointCloud normalize(const Sampled& sampled) {
  const auto& pts = sampled.points;
  const auto& centre = sampled.centroid;
  double radius = 0.0;
  for (const auto& p : pts) {
    radius = std::max(radius, std::sqrt(std::pow(p[0] - centre[0], 2) + std::pow(p[1] - centre[1], 2) +
                                        std::pow(p[2] - centre[2], 2)));
  }
  if (radius == 0.0) radius = 1.0;
  PointCloud cloud;
  cloud.points.reserve(pts.size());
  for (const auto& p : pts) {
    Point3 q;
    for (int k = 0; k < 3; ++k) q[k] = static_cast<float>((p[k] - centre[k]) / radius);
    // guard against float rounding pushing a point outside the unit sphere
    const double len = std::sqrt(static_cast<double>(q[0]) * q[0] + static_cast<double>(q[1]) * q[1] +
                                 static_cast<double>(q[2]) * q[2]);
    if (len > 1.0) {
      for (auto& v : q) v = static_cast<float>(v / len);
    }
    cloud.points.push_back(q);
  }
  return cloud;
}

inline Sampled sample_shape(ShapeClass cls, const SizeRange& range, std::size_t n, Rng& rng) {
  auto draw = [&] { return uniform(rng, range.min, range.max); };
  switch (cls) {
    case ShapeClass::ellipsoid: {
      const double a = draw(), b = draw(), c = draw();
      return {sample_ellipsoid(a, b, c, n, rng)};
    }
    case ShapeClass::box: {
      const double x = draw(), y = draw(), z = draw();
      return {sample_boxes({{{-x / 2, -y / 2, -z / 2}, {x / 2, y / 2, z / 2}}}, n, rng)};
    }
    case ShapeClass::cylinder: {
      const double r = draw() / 2, h = draw();
      return {sample_cylinder(r, h, n, rng)};
    }
    case ShapeClass::composite: {
      // table-like: a thin top slab resting on a central pedestal
      const double w = draw(), d = draw(), h = draw();
      const double thickness = 0.08 * range.max;
      const double pedestal = 0.25 * std::min(w, d);
      const std::vector<AxisBox> parts{{{-w / 2, -d / 2, h}, {w / 2, d / 2, h + thickness}},
                                       {{-pedestal / 2, -pedestal / 2, 0.0}, {pedestal / 2, pedestal / 2, h}}};
      return {sample_boxes(parts, n, rng), boxes_centroid(parts)};
    }
  }
  throw argument_error("unknown shape class");
}

}  // namespace synthetic_detail

/// Clouds cycle through spec.classes; every cloud has points_per_cloud points.
inline std::vector<LabeledCloud> generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<LabeledCloud> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const ShapeClass cls = spec.classes[i % spec.classes.size()];
    auto rng = make_rng(spec.seed, "dataset", i);
    out.push_back({synthetic_detail::normalize(
                       synthetic_detail::sample_shape(cls, spec.extent, spec.points_per_cloud, rng)),
                   cls});
  }
  return out;
}

}  // namespace ldo
