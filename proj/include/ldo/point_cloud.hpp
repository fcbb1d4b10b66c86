#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace ldo {

using Point3 = std::array<float, 3>;

/// Ordered point list; order carries no meaning for any metric in this library.
struct PointCloud {
  std::vector<Point3> points;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  const Point3& operator[](std::size_t i) const { return points[i]; }
  Point3& operator[](std::size_t i) { return points[i]; }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

inline double distance(const Point3& a, const Point3& b) {
  const double dx = static_cast<double>(a[0]) - b[0];
  const double dy = static_cast<double>(a[1]) - b[1];
  const double dz = static_cast<double>(a[2]) - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline bool all_finite(const PointCloud& cloud) {
  for (const auto& p : cloud.points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) return false;
  }
  return true;
}

}  // namespace ldo
