#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ldo/error.hpp"
#include "ldo/rng.hpp"

namespace ldo {

struct SplitRatios {
  double train = 0.85;
  double val = 0.05;
  double test = 0.10;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  SplitRatios ratios;
};

/// Seeded shuffle, then contiguous train/val/test partition with rounded sizes.
inline DatasetSplit split_dataset(std::vector<std::string> ids, SplitRatios ratios = {}, std::uint64_t seed = 0) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw argument_error("split_dataset: ratios must be non-negative and sum to 1");
  }
  auto rng = make_rng(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t n = ids.size();
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.train)));
  const auto n_val =
      std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.val)));
  DatasetSplit split;
  split.ratios = ratios;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return split;
}

/// One entry per line; blank lines are skipped, the first token of each line is the id.
inline std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw format_error("cannot open " + path.string());
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;
    const auto end = line.find_first_of(" \t\r", start);
    ids.push_back(line.substr(start, end == std::string::npos ? std::string::npos : end - start));
  }
  return ids;
}

inline void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw format_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw format_error("failed writing " + path.string());
}

}  // namespace ldo
