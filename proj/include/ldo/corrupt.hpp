#pragma once

// Test-time corruptions: nearest-neighbour ball masking, uniform downsampling,
// and replicate padding back to a fixed size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ldo/error.hpp"
#include "ldo/point_cloud.hpp"
#include "ldo/rng.hpp"

namespace ldo {

/// Appends copies of one randomly chosen existing point until `target` points.
inline PointCloud pad_replicate(PointCloud cloud, std::size_t target, std::mt19937_64& rng) {
  if (cloud.empty()) throw argument_error("pad_replicate: empty cloud");
  if (cloud.size() > target) {
    throw argument_error("pad_replicate: cloud has " + std::to_string(cloud.size()) + " points, more than target " +
                         std::to_string(target));
  }
  if (cloud.size() == target) return cloud;
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  const Point3 replica = cloud[pick(rng)];
  cloud.points.resize(target, replica);
  return cloud;
}

inline PointCloud pad_replicate(PointCloud cloud, std::size_t target, std::uint64_t seed) {
  auto rng = make_rng(seed, "pad");
  return pad_replicate(std::move(cloud), target, rng);
}

struct MaskResult {
  PointCloud cloud;                  // survivors in original order, then replicas
  std::vector<std::size_t> removed;  // original indices, seed point first, then by distance
};

/// Removes a random seed point and its floor(N*fraction)-1 nearest neighbours,
/// then pads back to N by replicating one survivor. Distance ties go to the
/// lower original index.
inline MaskResult mask_knn(const PointCloud& cloud, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw argument_error("mask_knn: fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  const std::size_t n = cloud.size();
  if (n < 2) throw argument_error("mask_knn: need at least 2 points, got " + std::to_string(n));
  const auto count = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  if (count >= n) throw argument_error("mask_knn: masking would remove every point");

  auto rng = make_rng(seed, "mask");
  const std::size_t centre = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);

  // squared distances of float coordinates are exact in double, so ties are genuine
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = static_cast<double>(cloud[i][k]) - cloud[centre][k];
      s += d * d;
    }
    d2[i] = s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if ((a == centre) != (b == centre)) return a == centre;
    if (d2[a] != d2[b]) return d2[a] < d2[b];
    return a < b;
  });

  MaskResult result;
  result.removed.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::vector<bool> gone(n, false);
  for (auto i : result.removed) gone[i] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (!gone[i]) result.cloud.points.push_back(cloud[i]);
  }
  result.cloud = pad_replicate(std::move(result.cloud), n, rng);
  return result;
}

/// Uniform subset of round(N*keep_fraction) points without replacement,
/// original order preserved; optionally replicate-padded to `pad_to`.
inline PointCloud downsample(const PointCloud& cloud, double keep_fraction, std::uint64_t seed,
                             std::optional<std::size_t> pad_to = std::nullopt) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw argument_error("downsample: keep fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  }
  const auto keep = static_cast<std::size_t>(std::llround(static_cast<double>(cloud.size()) * keep_fraction));
  if (keep == 0) throw argument_error("downsample: result would be empty");
  auto rng = make_rng(seed, "downsample");
  PointCloud out;
  out.points.reserve(keep);
  std::sample(cloud.points.begin(), cloud.points.end(), std::back_inserter(out.points), keep, rng);
  if (pad_to) out = pad_replicate(std::move(out), *pad_to, rng);
  return out;
}

enum class CorruptionKind { mask_knn, downsample };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::mask_knn;
  double fraction = 0.5;  // masked fraction, or kept fraction when downsampling
  std::uint64_t seed = 0;
  std::optional<std::size_t> pad_to;

  void validate() const {
    if (!(fraction > 0.0 && fraction < 1.0)) {
      throw argument_error("corruption fraction must lie in (0, 1), got " + std::to_string(fraction));
    }
  }

  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;
};

inline std::string to_string(CorruptionKind kind) { return kind == CorruptionKind::mask_knn ? "mask_knn" : "downsample"; }

/// Canonical one-line form, e.g. "kind=mask_knn fraction=0.5 seed=7 pad_to=256".
inline std::string to_string(const CorruptionSpec& spec) {
  std::ostringstream out;
  out.precision(17);
  out << "kind=" << to_string(spec.kind) << " fraction=" << spec.fraction << " seed=" << spec.seed;
  if (spec.pad_to) out << " pad_to=" << *spec.pad_to;
  return out.str();
}

inline CorruptionSpec parse_corruption_spec(const std::string& text) {
  CorruptionSpec spec;
  bool have_kind = false;
  bool have_fraction = false;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw argument_error("corruption spec: expected key=value, got '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    try {
      if (key == "kind") {
        if (value == "mask_knn") {
          spec.kind = CorruptionKind::mask_knn;
        } else if (value == "downsample") {
          spec.kind = CorruptionKind::downsample;
        } else {
          throw argument_error("corruption spec: unknown kind '" + value + "'");
        }
        have_kind = true;
      } else if (key == "fraction") {
        spec.fraction = std::stod(value);
        have_fraction = true;
      } else if (key == "seed") {
        spec.seed = std::stoull(value);
      } else if (key == "pad_to") {
        spec.pad_to = static_cast<std::size_t>(std::stoull(value));
      } else {
        throw argument_error("corruption spec: unknown key '" + key + "'");
      }
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const argument_error*>(&e)) throw;
      throw argument_error("corruption spec: bad value for '" + key + "': " + value);
    }
  }
  if (!have_kind || !have_fraction) throw argument_error("corruption spec: kind and fraction are required");
  spec.validate();
  return spec;
}

struct CorruptionResult {
  PointCloud cloud;
  std::vector<std::size_t> removed;  // empty for downsampling
};

inline CorruptionResult apply_corruption(const PointCloud& cloud, const CorruptionSpec& spec) {
  spec.validate();
  if (spec.kind == CorruptionKind::mask_knn) {
    auto masked = mask_knn(cloud, spec.fraction, spec.seed);
    if (spec.pad_to && *spec.pad_to != masked.cloud.size()) {
      // re-pad from the survivors only
      PointCloud survivors;
      survivors.points.assign(masked.cloud.points.begin(),
                              masked.cloud.points.begin() + static_cast<std::ptrdiff_t>(cloud.size() - masked.removed.size()));
      masked.cloud = pad_replicate(std::move(survivors), *spec.pad_to, spec.seed);
    }
    return {std::move(masked.cloud), std::move(masked.removed)};
  }
  return {downsample(cloud, spec.fraction, spec.seed, spec.pad_to), {}};
}

}  // namespace ldo
