#pragma once

// Independent reference computations for tests: double-precision forward
// passes, brute-force assignment, central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "ldo/nets.hpp"
#include "ldo/point_cloud.hpp"
#include "ldo/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_double(const ldo::Tensor& t) { return Vec(t.values.begin(), t.values.end()); }

/// Central differences of f at x with step h.
inline Vec finite_difference(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-6) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b||_inf / max(||b||_inf, floor).
inline double relative_error(const Vec& a, const Vec& b, double floor = 1e-12) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

/// Row-major [rows x in] times [in x out] plus bias.
inline Vec affine(const Vec& x, std::size_t rows, std::size_t in, const Vec& w, const Vec& b, std::size_t out) {
  Vec y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s;
    }
  }
  return y;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Double-precision forward pass of a network on `rows` stacked inputs. Pointwise
/// networks max-pool over each of `segments` equal row blocks.
inline Vec network_forward(const ldo::Network& net, Vec x, std::size_t rows, std::size_t segments = 1,
                           bool logits = false) {
  std::size_t in = net.descriptor.input_width;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::size_t out = net.descriptor.layers[l].width;
    x = affine(x, rows, in, to_double(net.layers[l].weight), to_double(net.layers[l].bias), out);
    const bool last = l + 1 == net.layers.size();
    if (!(logits && last)) {
      for (auto& v : x) {
        if (net.descriptor.layers[l].activation == ldo::Activation::relu) v = std::max(v, 0.0);
        if (net.descriptor.layers[l].activation == ldo::Activation::sigmoid) v = sigmoid(v);
      }
    }
    in = out;
  }
  if (net.descriptor.kind == ldo::NetworkKind::pointwise_maxpool) {
    const std::size_t n = rows / segments;
    Vec pooled(segments * in, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < in; ++c) pooled[(r / n) * in + c] = std::max(pooled[(r / n) * in + c], x[r * in + c]);
    }
    return pooled;
  }
  return x;
}

inline double point_distance(const double* a, const double* b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

/// Minimum over all permutations of sum_i |a_i - b_perm(i)|; both given as flat xyz.
inline double brute_force_emd(const Vec& a, const Vec& b) {
  const std::size_t n = a.size() / 3;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += point_distance(&a[3 * i], &b[3 * perm[i]]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline Vec flatten(const ldo::PointCloud& c) {
  Vec v;
  for (const auto& p : c.points) v.insert(v.end(), p.begin(), p.end());
  return v;
}

inline ldo::PointCloud random_cloud(std::size_t n, std::mt19937_64& rng, float scale = 1.0f) {
  std::uniform_real_distribution<float> u(-scale, scale);
  ldo::PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({u(rng), u(rng), u(rng)});
  return c;
}

inline ldo::Tensor random_tensor(ldo::Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
  std::uniform_real_distribution<float> u(-scale, scale);
  ldo::Tensor t(std::move(shape));
  for (auto& v : t.values) v = u(rng);
  return t;
}

}  // namespace oracle
