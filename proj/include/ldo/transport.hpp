#pragma once

// Earth Mover's Distance between equal-size point clouds under L2 ground cost.
//
// emd_exact solves the dense assignment problem with the Jonker-Volgenant
// shortest augmenting path method. emd_approx runs a forward auction with
// epsilon scaling, whose result is within N * epsilon_final of the optimum.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ldo/error.hpp"
#include "ldo/point_cloud.hpp"

namespace ldo {

/// Bijection from points of the first cloud to points of the second.
struct Matching {
  std::vector<std::size_t> assignment;  // assignment[i] = index in the second cloud
  double cost = 0.0;                    // sum of matched L2 distances
};

inline constexpr std::size_t kDefaultExactCap = 512;
inline constexpr double kDefaultAuctionTolerance = 1e-4;

namespace transport_detail {

inline void require_equal_sizes(const PointCloud& a, const PointCloud& b, const char* op) {
  if (a.size() != b.size()) {
    throw cardinality_error(std::string(op) + ": clouds have " + std::to_string(a.size()) + " and " +
                            std::to_string(b.size()) + " points");
  }
  if (a.empty()) throw argument_error(std::string(op) + ": clouds are empty");
  if (!all_finite(a) || !all_finite(b)) throw numerical_error(std::string(op) + ": non-finite coordinates");
}

inline std::vector<double> cost_matrix(const PointCloud& a, const PointCloud& b) {
  const std::size_t n = a.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = distance(a[i], b[j]);
  }
  return cost;
}

inline double matching_cost(const PointCloud& a, const PointCloud& b, const std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += distance(a[i], b[assignment[i]]);
  return total;
}

// Dense LAPJV. Returns rowsol (column for each row).
inline std::vector<std::size_t> solve_lapjv(std::size_t dim, const std::vector<double>& cost) {
  const long n = static_cast<long>(dim);
  auto c = [&](long i, long j) { return cost[static_cast<std::size_t>(i * n + j)]; };
  std::vector<long> rowsol(dim, -1), colsol(dim, -1), free_rows(dim), collist(dim), matches(dim, 0), pred(dim);
  std::vector<double> v(dim), d(dim);

  if (n == 1) return {0};

  // column reduction
  for (long j = n - 1; j >= 0; --j) {
    double min = c(0, j);
    long imin = 0;
    for (long i = 1; i < n; ++i) {
      if (c(i, j) < min) {
        min = c(i, j);
        imin = i;
      }
    }
    v[j] = min;
    if (++matches[imin] == 1) {
      rowsol[imin] = j;
      colsol[j] = imin;
    } else {
      colsol[j] = -1;
    }
  }

  // reduction transfer
  long numfree = 0;
  for (long i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      free_rows[numfree++] = i;
    } else if (matches[i] == 1) {
      const long j1 = rowsol[i];
      double min = std::numeric_limits<double>::max();
      for (long j = 0; j < n; ++j) {
        if (j != j1 && c(i, j) - v[j] < min) min = c(i, j) - v[j];
      }
      v[j1] -= min;
    }
  }

  // augmenting row reduction, two passes; immediate re-processing is bounded
  // so near-equal float costs cannot cycle
  for (int pass = 0; pass < 2; ++pass) {
    long k = 0;
    const long prvnumfree = numfree;
    numfree = 0;
    long budget = n * 4;
    while (k < prvnumfree) {
      const long i = free_rows[k++];
      double umin = c(i, 0) - v[0];
      long j1 = 0;
      long j2 = -1;
      double usubmin = std::numeric_limits<double>::max();
      for (long j = 1; j < n; ++j) {
        const double h = c(i, j) - v[j];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            umin = h;
            j2 = j1;
            j1 = j;
          }
        }
      }
      long i0 = colsol[j1];
      const bool strict = umin < usubmin;
      if (strict) {
        v[j1] -= usubmin - umin;
      } else if (i0 >= 0) {
        j1 = j2;
        i0 = colsol[j2];
      }
      if (rowsol[i] >= 0 && colsol[rowsol[i]] == i) colsol[rowsol[i]] = -1;
      rowsol[i] = j1;
      colsol[j1] = i;
      if (i0 >= 0) {
        rowsol[i0] = -1;
        if (strict && budget-- > 0) {
          free_rows[--k] = i0;
        } else {
          free_rows[numfree++] = i0;
        }
      }
    }
  }

  // augmentation: Dijkstra-like shortest augmenting path for each free row
  for (long f = 0; f < numfree; ++f) {
    const long freerow = free_rows[f];
    for (long j = 0; j < n; ++j) {
      d[j] = c(freerow, j) - v[j];
      pred[j] = freerow;
      collist[j] = j;
    }
    long low = 0;
    long up = 0;
    long last = 0;
    long endofpath = -1;
    bool found = false;
    double min = 0.0;
    do {
      if (up == low) {
        last = low - 1;
        min = d[collist[up++]];
        for (long k = up; k < n; ++k) {
          const long j = collist[k];
          const double h = d[j];
          if (h <= min) {
            if (h < min) {
              up = low;
              min = h;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (long k = low; k < up; ++k) {
          if (colsol[collist[k]] < 0) {
            endofpath = collist[k];
            found = true;
            break;
          }
        }
      }
      if (!found) {
        const long j1 = collist[low++];
        const long i = colsol[j1];
        const double h = c(i, j1) - v[j1] - min;
        for (long k = up; k < n; ++k) {
          const long j = collist[k];
          const double v2 = c(i, j) - v[j] - h;
          if (v2 < d[j]) {
            pred[j] = i;
            if (v2 == min) {
              if (colsol[j] < 0) {
                endofpath = j;
                found = true;
                break;
              }
              collist[k] = collist[up];
              collist[up++] = j;
            }
            d[j] = v2;
          }
        }
      }
    } while (!found);

    for (long k = 0; k <= last; ++k) {
      const long j1 = collist[k];
      v[j1] += d[j1] - min;
    }
    long i;
    do {
      i = pred[endofpath];
      colsol[endofpath] = i;
      const long j1 = endofpath;
      endofpath = rowsol[i];
      rowsol[i] = j1;
    } while (i != freerow);
  }

  std::vector<std::size_t> result(dim);
  for (std::size_t i = 0; i < dim; ++i) result[i] = static_cast<std::size_t>(rowsol[i]);
  return result;
}

// Forward auction with epsilon scaling on benefit = -cost (Gauss-Seidel bids).
inline std::vector<std::size_t> solve_auction(std::size_t n, const std::vector<double>& cost,
                                              const std::vector<double>& schedule) {
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<double> price(n, 0.0);
  std::vector<std::size_t> owner(n, none), assigned(n, none), unassigned;
  unassigned.reserve(n);
  for (double eps : schedule) {
    std::fill(owner.begin(), owner.end(), none);
    std::fill(assigned.begin(), assigned.end(), none);
    unassigned.clear();
    for (std::size_t i = n; i-- > 0;) unassigned.push_back(i);
    while (!unassigned.empty()) {
      const std::size_t i = unassigned.back();
      unassigned.pop_back();
      const double* row = cost.data() + i * n;
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double value = -row[j] - price[j];
        if (value > best) {
          second = best;
          best = value;
          best_j = j;
        } else if (value > second) {
          second = value;
        }
      }
      const double increment = (n == 1 ? 0.0 : best - second) + eps;
      price[best_j] += increment;
      if (owner[best_j] != none) {
        assigned[owner[best_j]] = none;
        unassigned.push_back(owner[best_j]);
      }
      owner[best_j] = i;
      assigned[i] = best_j;
    }
  }
  return assigned;
}

}  // namespace transport_detail

/// Default epsilon schedule: max cost / 4, halved until below tolerance * mean cost.
inline std::vector<double> default_epsilon_schedule(const PointCloud& a, const PointCloud& b,
                                                    double tolerance = kDefaultAuctionTolerance) {
  transport_detail::require_equal_sizes(a, b, "default_epsilon_schedule");
  double max_cost = 0.0;
  double total = 0.0;
  for (const auto& p : a.points) {
    for (const auto& q : b.points) {
      const double c = distance(p, q);
      max_cost = std::max(max_cost, c);
      total += c;
    }
  }
  const double mean_cost = total / static_cast<double>(a.size() * b.size());
  std::vector<double> schedule;
  if (max_cost == 0.0) return schedule;
  const double floor = tolerance * mean_cost;
  double eps = max_cost / 4.0;
  schedule.push_back(eps);
  while (eps >= floor) {
    eps /= 2.0;
    schedule.push_back(eps);
  }
  return schedule;
}

/// Exact minimum-cost bijection. Sizes above `cap` are refused; use emd_approx instead.
inline Matching emd_exact(const PointCloud& a, const PointCloud& b, std::size_t cap = kDefaultExactCap) {
  transport_detail::require_equal_sizes(a, b, "emd_exact");
  if (a.size() > cap) {
    throw argument_error("emd_exact: " + std::to_string(a.size()) + " points exceeds the exact-solver cap of " +
                         std::to_string(cap) + "; use emd_approx");
  }
  Matching m;
  m.assignment = transport_detail::solve_lapjv(a.size(), transport_detail::cost_matrix(a, b));
  m.cost = transport_detail::matching_cost(a, b, m.assignment);
  return m;
}

/// Auction approximation. An empty schedule selects default_epsilon_schedule(a, b).
inline Matching emd_approx(const PointCloud& a, const PointCloud& b, std::vector<double> epsilon_schedule = {}) {
  transport_detail::require_equal_sizes(a, b, "emd_approx");
  for (double eps : epsilon_schedule) {
    if (!(eps > 0.0)) throw argument_error("emd_approx: epsilon values must be positive");
  }
  if (epsilon_schedule.empty()) epsilon_schedule = default_epsilon_schedule(a, b);
  Matching m;
  if (epsilon_schedule.empty()) {
    // every pairwise cost is zero
    m.assignment.resize(a.size());
    std::iota(m.assignment.begin(), m.assignment.end(), std::size_t{0});
  } else {
    m.assignment = transport_detail::solve_auction(a.size(), transport_detail::cost_matrix(a, b), epsilon_schedule);
  }
  m.cost = transport_detail::matching_cost(a, b, m.assignment);
  return m;
}

enum class EmdMethod { exact, approximate, automatic };

struct EmdOptions {
  EmdMethod method = EmdMethod::automatic;
  std::size_t exact_cap = kDefaultExactCap;
  double auction_tolerance = kDefaultAuctionTolerance;
};

/// Exact below the cap, auction above it (automatic), or as requested.
inline Matching emd(const PointCloud& a, const PointCloud& b, const EmdOptions& options = {}) {
  const bool exact = options.method == EmdMethod::exact ||
                     (options.method == EmdMethod::automatic && a.size() <= options.exact_cap);
  if (exact) return emd_exact(a, b, options.method == EmdMethod::exact ? options.exact_cap : a.size());
  transport_detail::require_equal_sizes(a, b, "emd");
  return emd_approx(a, b, default_epsilon_schedule(a, b, options.auction_tolerance));
}

inline bool is_valid_matching(const Matching& m, std::size_t n) {
  if (m.assignment.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (auto j : m.assignment) {
    if (j >= n || seen[j]) return false;
    seen[j] = true;
  }
  return true;
}

/// Gradient of the matched cost with respect to each point of b, holding the
/// matching fixed. Coincident matched pairs contribute a zero vector.
inline std::vector<Point3> emd_gradient(const PointCloud& a, const PointCloud& b, const Matching& m) {
  transport_detail::require_equal_sizes(a, b, "emd_gradient");
  if (!is_valid_matching(m, a.size())) throw argument_error("emd_gradient: matching is not a bijection");
  std::vector<Point3> grad(b.size(), Point3{0.0f, 0.0f, 0.0f});
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = m.assignment[i];
    const double len = distance(a[i], b[j]);
    if (len == 0.0) continue;
    for (int k = 0; k < 3; ++k) {
      grad[j][k] = static_cast<float>((static_cast<double>(b[j][k]) - a[i][k]) / len);
    }
  }
  return grad;
}

}  // namespace ldo
