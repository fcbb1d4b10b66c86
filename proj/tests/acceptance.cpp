// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "ldo/bundle_io.hpp"
#include "ldo/cli.hpp"
#include "ldo/corrupt.hpp"
#include "ldo/dataset.hpp"
#include "ldo/ldo.hpp"
#include "ldo/pipeline.hpp"
#include "ldo/synthetic.hpp"
#include "ldo/transport.hpp"
#include "oracles.hpp"

using namespace ldo;
using oracle::Vec;
namespace fs = std::filesystem;

namespace {

// desk-scale experiment
constexpr std::size_t kCloudCount = 600;
constexpr std::size_t kPoints = 256;
constexpr std::uint64_t kDataSeed = 1;
constexpr std::uint64_t kTrainSeed = 3;
constexpr std::uint64_t kMaskSeed = 7;
constexpr double kBudgetSeconds = 2.0 * 3600.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// ---------------------------------------------------------------- 1, 2

Outcome emd_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + static_cast<std::size_t>(i) % 6;
    const auto a = oracle::random_cloud(n, rng), b = oracle::random_cloud(n, rng);
    const double exact = emd_exact(a, b).cost;
    const double brute = oracle::brute_force_emd(oracle::flatten(a), oracle::flatten(b));
    worst = std::max(worst, std::abs(exact - brute) / brute);
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 10.0, "200 pairs, max rel err " + fmt(worst) + ", " + fmt(t, 3) + " s"};
}

Outcome emd_approx_quality() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(102);
  const std::size_t sizes[] = {32, 64, 128};
  double lo = 1e300, hi = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = sizes[i % 3];
    const auto a = oracle::random_cloud(n, rng), b = oracle::random_cloud(n, rng);
    const double ratio = emd_approx(a, b).cost / emd_exact(a, b).cost;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  const double t = seconds_since(t0);
  return {lo >= 1.0 && hi <= 1.01 && t < 60.0,
          "100 pairs, ratio in [" + fmt(lo, 8) + ", " + fmt(hi, 8) + "], " + fmt(t, 3) + " s"};
}

// ---------------------------------------------------------------- 3

double probe(const Vec& y, const Vec& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - c[i]) * (y[i] - c[i]);
  return s;
}

struct OpCase {
  std::vector<Tensor> inputs;
  std::function<ad::Var(const std::vector<ad::Var>&)> forward;
  std::function<Vec(const std::vector<Vec>&)> reference;
};

// worst relative gradient error over every input of one case
double gradient_error(const OpCase& c, std::mt19937_64& rng) {
  std::vector<ad::Var> vars;
  for (const auto& t : c.inputs) vars.push_back(ad::parameter(t));
  const auto y = c.forward(vars);
  const auto target = oracle::random_tensor(y->shape(), rng);
  ad::backward(ad::l2_distance_sq(y, ad::constant(target)));
  std::vector<Vec> base;
  for (const auto& t : c.inputs) base.push_back(oracle::to_double(t));
  const Vec cd = oracle::to_double(target);
  double worst = 0.0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    auto f = [&](const Vec& v) {
      auto args = base;
      args[k] = v;
      return probe(c.reference(args), cd);
    };
    worst = std::max(worst, oracle::relative_error(oracle::to_double(vars[k]->grad()),
                                                   oracle::finite_difference(f, base[k], 1e-4)));
  }
  return worst;
}

// inputs in [-2, 2] kept at least 1e-3 from the relu kink
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  auto t = oracle::random_tensor(std::move(shape), rng, 2.0f);
  for (auto& v : t.values) {
    if (std::abs(v) < 1e-3f) v = v < 0 ? -1e-3f : 1e-3f;
  }
  return t;
}

// distinct values on an even grid over [-2, 2] keep max-pool winners well separated
Tensor separated(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::iota(t.values.begin(), t.values.end(), 0.0f);
  std::shuffle(t.values.begin(), t.values.end(), rng);
  const float step = 4.0f / static_cast<float>(t.values.size());
  for (auto& v : t.values) v = -2.0f + step * (v + 0.5f);
  return t;
}

Vec map(const Vec& v, const std::function<double(double)>& f) {
  Vec y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = f(v[i]);
  return y;
}

Vec pool(const Vec& x, std::size_t segments, std::size_t rows, std::size_t cols) {
  Vec y(segments * cols, -1e300);
  const std::size_t n = rows / segments;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < cols; ++k) y[(r / n) * cols + k] = std::max(y[(r / n) * cols + k], x[r * cols + k]);
  }
  return y;
}

Outcome autodiff_soundness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(103);
  constexpr int kShapes = 50;
  using Maker = std::function<OpCase()>;
  std::vector<std::pair<std::string, Maker>> ops;

  ops.emplace_back("linear", [&] {
    const std::size_t r = draw(rng, 1, 5), i = draw(rng, 1, 6), o = draw(rng, 1, 6);
    return OpCase{{oracle::random_tensor({r, i}, rng, 2.0f), oracle::random_tensor({i, o}, rng, 2.0f), oracle::random_tensor({o}, rng, 2.0f)},
                  [](const auto& v) { return ad::linear(v[0], v[1], v[2]); },
                  [=](const auto& v) { return oracle::affine(v[0], r, i, v[1], v[2], o); }};
  });
  ops.emplace_back("pointwise_linear", [&] {
    const std::size_t r = draw(rng, 1, 120), i = draw(rng, 1, 4), o = draw(rng, 1, 5);
    return OpCase{{oracle::random_tensor({r, i}, rng, 2.0f), oracle::random_tensor({i, o}, rng, 2.0f), oracle::random_tensor({o}, rng, 2.0f)},
                  [](const auto& v) { return ad::pointwise_linear(v[0], v[1], v[2]); },
                  [=](const auto& v) { return oracle::affine(v[0], r, i, v[1], v[2], o); }};
  });
  ops.emplace_back("relu", [&] {
    return OpCase{{away_from_zero({draw(rng, 1, 5), draw(rng, 1, 6)}, rng)},
                  [](const auto& v) { return ad::relu(v[0]); },
                  [](const auto& v) { return map(v[0], [](double x) { return std::max(x, 0.0); }); }};
  });
  ops.emplace_back("sigmoid", [&] {
    return OpCase{{oracle::random_tensor({draw(rng, 1, 5), draw(rng, 1, 6)}, rng, 2.0f)},
                  [](const auto& v) { return ad::sigmoid(v[0]); },
                  [](const auto& v) { return map(v[0], oracle::sigmoid); }};
  });
  ops.emplace_back("max_pool_segments", [&] {
    const std::size_t s = draw(rng, 1, 3), n = draw(rng, 1, 5), c = draw(rng, 1, 4);
    return OpCase{{separated({s * n, c}, rng)}, [=](const auto& v) { return ad::max_pool_segments(v[0], s); },
                  [=](const auto& v) { return pool(v[0], s, s * n, c); }};
  });
  ops.emplace_back("max_pool_points", [&] {
    const std::size_t n = draw(rng, 1, 8), c = draw(rng, 1, 4);
    return OpCase{{separated({n, c}, rng)}, [](const auto& v) { return ad::max_pool_points(v[0]); },
                  [=](const auto& v) { return pool(v[0], 1, n, c); }};
  });
  ops.emplace_back("reshape", [&] {
    const std::size_t r = draw(rng, 1, 5), c = draw(rng, 1, 6);
    return OpCase{{oracle::random_tensor({r, c}, rng, 2.0f)}, [=](const auto& v) { return ad::reshape(v[0], {c, r}); },
                  [](const auto& v) { return v[0]; }};
  });
  ops.emplace_back("add", [&] {
    const Shape s{draw(rng, 1, 5), draw(rng, 1, 6)};
    return OpCase{{oracle::random_tensor(s, rng, 2.0f), oracle::random_tensor(s, rng, 2.0f)},
                  [](const auto& v) { return ad::add(v[0], v[1]); },
                  [](const auto& v) {
                    Vec y(v[0].size());
                    for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[0][i] + v[1][i];
                    return y;
                  }};
  });
  ops.emplace_back("sub", [&] {
    const Shape s{draw(rng, 1, 5), draw(rng, 1, 6)};
    return OpCase{{oracle::random_tensor(s, rng, 2.0f), oracle::random_tensor(s, rng, 2.0f)},
                  [](const auto& v) { return ad::sub(v[0], v[1]); },
                  [](const auto& v) {
                    Vec y(v[0].size());
                    for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[0][i] - v[1][i];
                    return y;
                  }};
  });
  ops.emplace_back("scale", [&] {
    const float f = std::uniform_real_distribution<float>(-3.0f, 3.0f)(rng);
    return OpCase{{oracle::random_tensor({draw(rng, 1, 5), draw(rng, 1, 6)}, rng, 2.0f)},
                  [=](const auto& v) { return ad::scale(v[0], f); },
                  [=](const auto& v) { return map(v[0], [=](double x) { return static_cast<double>(f) * x; }); }};
  });
  ops.emplace_back("sum", [&] {
    return OpCase{{oracle::random_tensor({draw(rng, 1, 5), draw(rng, 1, 6)}, rng, 2.0f)},
                  [](const auto& v) { return ad::sum(v[0]); },
                  [](const auto& v) { return Vec{std::accumulate(v[0].begin(), v[0].end(), 0.0)}; }};
  });
  ops.emplace_back("mean", [&] {
    return OpCase{{oracle::random_tensor({draw(rng, 1, 5), draw(rng, 1, 6)}, rng, 2.0f)},
                  [](const auto& v) { return ad::mean(v[0]); },
                  [](const auto& v) {
                    return Vec{std::accumulate(v[0].begin(), v[0].end(), 0.0) / static_cast<double>(v[0].size())};
                  }};
  });
  ops.emplace_back("l2_distance_sq", [&] {
    const Shape s{draw(rng, 1, 5), draw(rng, 1, 6)};
    return OpCase{{oracle::random_tensor(s, rng, 2.0f), oracle::random_tensor(s, rng, 2.0f)},
                  [](const auto& v) { return ad::l2_distance_sq(v[0], v[1]); },
                  [](const auto& v) { return Vec{probe(v[0], v[1])}; }};
  });
  ops.emplace_back("row_norms", [&] {
    const std::size_t r = draw(rng, 1, 5), c = draw(rng, 1, 6);
    return OpCase{{away_from_zero({r, c}, rng)}, [](const auto& v) { return ad::row_norms(v[0]); },
                  [=](const auto& v) {
                    Vec y(r);
                    for (std::size_t i = 0; i < r; ++i) {
                      double s = 0.0;
                      for (std::size_t k = 0; k < c; ++k) s += v[0][i * c + k] * v[0][i * c + k];
                      y[i] = std::sqrt(s);
                    }
                    return y;
                  }};
  });

  double worst = 0.0;
  std::string worst_op;
  for (auto& [name, make] : ops) {
    for (int k = 0; k < kShapes; ++k) {
      const double e = gradient_error(make(), rng);
      if (e > worst) {
        worst = e;
        worst_op = name;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 60.0, std::to_string(ops.size()) + " ops x " + std::to_string(kShapes) +
                                        " shapes, max rel err " + fmt(worst) + " (" + worst_op + "), " + fmt(t, 3) +
                                        " s"};
}

// ---------------------------------------------------------------- 4, 5

Outcome encoder_invariance() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(104);
  int failures = 0;
  for (int i = 0; i < 100; ++i) {
    const auto enc = init_params(encoder_descriptor(), static_cast<std::uint64_t>(i));
    const auto cloud = oracle::random_cloud(draw(rng, 1, 300), rng);
    const auto code = encode(enc, cloud);
    auto shuffled = cloud;
    std::shuffle(shuffled.points.begin(), shuffled.points.end(), rng);
    const auto padded = pad_replicate(cloud, cloud.size() + draw(rng, 1, 200), static_cast<std::uint64_t>(i));
    failures += !(encode(enc, shuffled) == code) + !(encode(enc, padded) == code);
  }
  const double t = seconds_since(t0);
  return {failures == 0 && t < 10.0,
          "100 cases, " + std::to_string(failures) + " bitwise mismatches, " + fmt(t, 3) + " s"};
}

double sq(const Point3& a, const Point3& b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += (static_cast<double>(a[k]) - b[k]) * (static_cast<double>(a[k]) - b[k]);
  return s;
}

Outcome masking_protocol() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(105);
  std::vector<std::string> problems;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = draw(rng, 4, 64);
    const auto c = oracle::random_cloud(n, rng);
    const auto m = mask_knn(c, 0.5, static_cast<std::uint64_t>(trial));
    const auto& centre = c[m.removed.front()];
    double radius = 0.0;
    std::vector<bool> gone(n, false);
    for (auto i : m.removed) {
      radius = std::max(radius, sq(c[i], centre));
      gone[i] = true;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!gone[i] && sq(c[i], centre) < radius) problems.push_back("ball violated at n=" + std::to_string(n));
    }
  }
  const auto big = oracle::random_cloud(2048, rng);
  const auto m = mask_knn(big, 0.5, 99);
  if (m.removed.size() != 1024) problems.push_back("removed " + std::to_string(m.removed.size()));
  if (std::set<std::size_t>(m.removed.begin(), m.removed.end()).size() != 1024) problems.push_back("repeated index");
  if (m.cloud.size() != 2048) problems.push_back("output has " + std::to_string(m.cloud.size()) + " points");
  std::set<std::size_t> removed(m.removed.begin(), m.removed.end());
  std::vector<Point3> survivors;
  for (std::size_t i = 0; i < big.size(); ++i) {
    if (!removed.count(i)) survivors.push_back(big[i]);
  }
  if (!std::equal(survivors.begin(), survivors.end(), m.cloud.points.begin())) problems.push_back("survivors altered");
  const Point3 replica = m.cloud[1024];
  if (std::find(survivors.begin(), survivors.end(), replica) == survivors.end()) problems.push_back("pad not a survivor");
  for (std::size_t i = 1024; i < 2048; ++i) {
    if (m.cloud[i] != replica) {
      problems.push_back("padding uses more than one point");
      break;
    }
  }
  const double t = seconds_since(t0);
  std::string detail = "50 brute-force balls (N<=64), 1024 of 2048 removed, padded to 2048, " + fmt(t, 3) + " s";
  if (!problems.empty()) detail = problems.front() + "; " + detail;
  return {problems.empty() && t < 5.0, detail};
}

// ---------------------------------------------------------------- 6-9

struct Experiment {
  std::vector<PointCloud> train;
  std::vector<std::string> test_ids;
  std::vector<PointCloud> test;
  ModelBundle ae;
  double seconds = 0.0;
};

// declared training defaults throughout
TrainConfig base_train_config() {
  TrainConfig c;
  c.seed = kTrainSeed;
  return c;
}

LdoConfig ldo_config() { return LdoConfig::standard(); }

Experiment prepare(std::ostream& log) {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.classes = {ShapeClass::box, ShapeClass::composite};
  spec.count = kCloudCount;
  spec.points_per_cloud = kPoints;
  spec.seed = kDataSeed;
  const auto data = generate_dataset(spec);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < data.size(); ++i) ids.push_back(std::to_string(i));
  const auto split = split_dataset(ids, {}, kDataSeed);
  Experiment e;
  for (const auto& id : split.train) e.train.push_back(data[std::stoul(id)].cloud);
  for (const auto& id : split.test) {
    e.test_ids.push_back(id);
    e.test.push_back(data[std::stoul(id)].cloud);
  }
  TrainObserver obs;
  obs.on_ae_epoch = [&](std::size_t epoch, double loss) {
    if (epoch % 25 == 0) log << "  ae epoch " << epoch << " loss " << loss << " (" << fmt(seconds_since(t0), 5) << " s)\n" << std::flush;
  };
  e.ae = run_algorithm1(e.train, base_train_config(), {}, obs).bundle;
  e.seconds = seconds_since(t0);
  return e;
}

std::vector<PointCloud> masked(const Experiment& e, double fraction) {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < e.test.size(); ++i) {
    out.push_back(mask_knn(e.test[i], fraction, derive_seed(kMaskSeed, "masking:" + e.test_ids[i])).cloud);
  }
  return out;
}

struct Comparison {
  std::vector<double> plain;
  std::vector<double> optimized;
  std::vector<LdoTrace> traces;
  std::vector<std::string> contract_violations;
  double seconds = 0.0;

  double mean(const std::vector<double>& v) const {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
  std::size_t wins() const {
    std::size_t w = 0;
    for (std::size_t i = 0; i < plain.size(); ++i) w += optimized[i] < plain[i];
    return w;
  }
};

// plain reconstruction vs latent optimization on the same inputs, checking the
// trace contract and bundle immutability on every run
Comparison compare(const ModelBundle& bundle, const std::vector<PointCloud>& inputs, const std::vector<PointCloud>& truth,
                   const LdoConfig& config) {
  const auto t0 = Clock::now();
  const auto fingerprint = serialize_bundle(bundle);
  Comparison c;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    c.plain.push_back(emd(truth[i], autoencode(inputs[i], bundle, config.seed), config.emd).cost);
    const auto r = complete(inputs[i], bundle, config, &truth[i]);
    c.optimized.push_back(*r.trace.records.back().emd_gt);
    const auto& recs = r.trace.records;
    for (std::size_t k = 0; k < recs.size(); ++k) {
      if (recs[k].iteration != k || recs[k].lambda != config.lambda_at(k) || recs[k].beta != config.beta_at(k)) {
        c.contract_violations.push_back("schedule at instance " + std::to_string(i) + " step " + std::to_string(k));
      }
      if (k + 1 < recs.size() - 1 && recs[k + 1].l_d > recs[k].l_d) {
        c.contract_violations.push_back("L_D rose before the final step at instance " + std::to_string(i));
      }
    }
    if (r.reason == StopReason::non_finite) c.contract_violations.push_back("non-finite at instance " + std::to_string(i));
    c.traces.push_back(r.trace);
  }
  if (serialize_bundle(bundle) != fingerprint) c.contract_violations.push_back("bundle parameters changed");
  c.seconds = seconds_since(t0);
  return c;
}

void write_report(const fs::path& path, const std::vector<std::string>& ids, const Comparison& c) {
  std::ofstream out(path);
  out << "id\tplain\toptimized\titerations\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << '\t' << c.plain[i] << '\t' << c.optimized[i] << '\t' << c.traces[i].records.size() << '\n';
  }
}

// ---------------------------------------------------------------- 10

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    files[fs::relative(entry.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "ldo_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream log, err;
  return cli::run(static_cast<int>(argv.size()), argv.data(), log, err);
}

std::string run_cli_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  const auto d = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::vector<std::string>> steps = {
      {"gen", "--count", "40", "--n-out", "64", "--classes", "box", "composite", "--seed", "11", "--out", d("data")},
      {"corrupt", "--in", d("data"), "--list", d("data/test.txt"), "--mask", "0.5", "--seed", "12", "--out",
       d("masked")},
      {"train", "--in", d("data"), "--ae-epochs", "3", "--gan-epochs", "2", "--batch", "8", "--seed", "13", "--out",
       d("model")},
      {"complete", "--in", d("masked"), "--bundle", d("model/model.bundle"), "--gt", d("data"), "--max-iters", "30",
       "--seed", "14", "--out", d("completed")},
  };
  for (const auto& s : steps) {
    if (const int code = invoke(s); code != 0) return s.front() + " exited " + std::to_string(code);
  }
  return {};
}

Outcome determinism(const fs::path& work, const ModelBundle& bundle) {
  const auto t0 = Clock::now();
  const fs::path run = work / "determinism" / "run";
  if (auto e = run_cli_pipeline(run); !e.empty()) return {false, e};
  const auto first = snapshot(run);
  if (auto e = run_cli_pipeline(run); !e.empty()) return {false, e};
  const auto second = snapshot(run);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    differing += it == second.end() || it->second != bytes;
  }
  differing += second.size() - std::min(second.size(), first.size());

  const fs::path saved = work / "roundtrip.bundle";
  save_bundle(bundle, saved);
  const auto loaded = load_bundle(saved);
  const bool roundtrip = loaded == bundle && serialize_bundle(loaded) == serialize_bundle(bundle);
  const double t = seconds_since(t0);
  return {differing == 0 && roundtrip && !first.empty(),
          "gen->corrupt->train->complete rerun: " + std::to_string(first.size()) + " files, " +
              std::to_string(differing) + " differ; bundle round-trip " + (roundtrip ? "bitwise" : "MISMATCH") + ", " +
              fmt(t, 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work_dir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "scratch directory for models and reports");
  app.add_option("--criteria", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  const fs::path work(work_dir);
  fs::create_directories(work);
  const auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int k, const std::string& name, Outcome o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k << ". " << name << ": " << o.detail << std::endl;
    results[k] = {name, std::move(o)};
  };

  if (wanted(1)) record(1, "EMD oracle equivalence", emd_oracle());
  if (wanted(2)) record(2, "approximate solver quality", emd_approx_quality());
  if (wanted(3)) record(3, "autodiff soundness", autodiff_soundness());
  if (wanted(4)) record(4, "encoder invariances", encoder_invariance());
  if (wanted(5)) record(5, "masking protocol", masking_protocol());

  const bool heavy = wanted(6) || wanted(7) || wanted(8) || wanted(9) || wanted(10);
  if (heavy) {
    std::clog << "training desk-scale autoencoder + GAN\n";
    const auto e = prepare(std::clog);
    save_bundle(e.ae, work / "ae.bundle");
    const auto config = ldo_config();
    const auto inputs = masked(e, 0.5);

    double budget_used = e.seconds;
    std::optional<Comparison> main;
    if (wanted(6) || wanted(9)) {
      main = compare(e.ae, inputs, e.test, config);
      budget_used += main->seconds;
      write_report(work / "ae_mask50.tsv", e.test_ids, *main);
    }
    if (wanted(6)) {
      const auto wins = main->wins();
      const bool direction = main->mean(main->optimized) < main->mean(main->plain);
      const bool majority = 10 * wins >= 7 * main->plain.size();
      record(6, "desk-scale completion",
             {direction && majority && budget_used <= kBudgetSeconds,
              "mean EMD-GT AE " + fmt(main->mean(main->plain)) + " vs AE+LDO " + fmt(main->mean(main->optimized)) +
                  ", wins " + std::to_string(wins) + "/" + std::to_string(main->plain.size()) + ", " +
                  fmt(budget_used, 5) + " s"});
    }

    if (wanted(7)) {
      const auto t0 = Clock::now();
      auto dae_config = base_train_config();
      dae_config.dae_corruption = CorruptionSpec{CorruptionKind::mask_knn, 0.5, derive_seed(kTrainSeed, "masking"), std::nullopt};
      const auto dae50 = run_algorithm1(e.train, dae_config).bundle;
      const auto dae = compare(dae50, inputs, e.test, config);
      write_report(work / "dae50_mask50.tsv", e.test_ids, dae);

      dae_config.dae_corruption->fraction = 0.6;
      const auto dae60 = run_algorithm1(e.train, dae_config).bundle;
      const auto inputs60 = masked(e, 0.6);
      double clean = 0.0, at60 = 0.0;
      for (std::size_t i = 0; i < e.test.size(); ++i) {
        clean += emd(e.test[i], autoencode(e.test[i], dae60)).cost;
        at60 += emd(e.test[i], autoencode(inputs60[i], dae60)).cost;
      }
      clean /= static_cast<double>(e.test.size());
      at60 /= static_cast<double>(e.test.size());
      const double t = seconds_since(t0);
      budget_used += t;
      const bool improves = dae.mean(dae.optimized) <= dae.mean(dae.plain);
      record(7, "denoising comparison",
             {improves && clean > at60 && budget_used <= kBudgetSeconds,
              "DAE50 " + fmt(dae.mean(dae.plain)) + " vs DAE50+LDO " + fmt(dae.mean(dae.optimized)) +
                  "; DAE60 at 0% " + fmt(clean) + " vs at 60% " + fmt(at60) + "; cumulative " + fmt(budget_used, 5) +
                  " s"});
    }

    if (wanted(8)) {
      const auto t0 = Clock::now();
      std::vector<PointCloud> sparse;
      for (std::size_t i = 0; i < e.test.size(); ++i) {
        sparse.push_back(downsample(e.test[i], 0.2, derive_seed(kMaskSeed, "downsample:" + e.test_ids[i])));
      }
      const auto up = compare(e.ae, sparse, e.test, config);
      write_report(work / "ae_upsample20.tsv", e.test_ids, up);
      const double t = seconds_since(t0);
      record(8, "upsampling",
             {up.mean(up.optimized) < up.mean(up.plain) && t < 15 * 60.0,
              "mean EMD-GT AE " + fmt(up.mean(up.plain)) + " vs AE+LDO " + fmt(up.mean(up.optimized)) + ", " +
                  fmt(t, 4) + " s"});
    }

    if (wanted(9)) {
      std::size_t shaped = 0;
      for (const auto& t : main->traces) {
        const auto& first = t.records.front();
        const auto& last = t.records.back();
        shaped += last.l_2 > first.l_2 && last.l_emd < first.l_emd;
      }
      const auto n = main->traces.size();
      std::string detail = std::to_string(main->contract_violations.size()) + " contract violations, loss shape on " +
                           std::to_string(shaped) + "/" + std::to_string(n);
      if (!main->contract_violations.empty()) detail += " (first: " + main->contract_violations.front() + ")";
      record(9, "latent optimization mechanics", {main->contract_violations.empty() && 10 * shaped >= 6 * n, detail});
    }

    if (wanted(10)) record(10, "determinism and persistence", determinism(work, e.ae));
  }

  const bool all = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.second.second.pass; });
  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << " (" << results.size() << " run)" << std::endl;
  return all ? 0 : 1;
}
