#pragma once

// Command-line driver: gen, corrupt, train, complete, eval, trace-plot.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ldo/bundle_io.hpp"
#include "ldo/corrupt.hpp"
#include "ldo/dataset.hpp"
#include "ldo/error.hpp"
#include "ldo/ldo.hpp"
#include "ldo/pipeline.hpp"
#include "ldo/pointcloud_io.hpp"
#include "ldo/rng.hpp"
#include "ldo/synthetic.hpp"
#include "ldo/transport.hpp"

namespace ldo::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericalFailure = 3 };

/// Invalid option values, detected before any file is touched.
class usage_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kManifest = "manifest.txt";
inline constexpr const char* kEffectiveConfig = "config.toml";

// ---------------------------------------------------------------------------
// option sets

struct GenOptions {
  std::size_t count = 600;
  std::size_t n_out = 256;
  std::vector<std::string> classes{"box", "composite"};
  double size_min = 0.4;
  double size_max = 1.0;
  double train_ratio = 0.85;
  double val_ratio = 0.05;
  double test_ratio = 0.10;
  std::uint64_t seed = 0;
  std::string out;
};

struct CorruptOptions {
  std::string in;
  std::string list;
  std::string out;
  std::optional<double> mask;
  std::optional<double> keep;
  std::optional<std::size_t> pad_to;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string in;
  std::string list;
  std::string out;
  std::string bundle;
  std::size_t n_out = 0;  // 0: size of the first training cloud
  std::size_t ae_epochs = 300;
  std::size_t gan_epochs = 200;
  double ae_lr = 5e-4;
  double gan_lr = 1e-4;
  std::size_t batch = 32;
  std::size_t critic_steps = 5;
  double clip = 0.01;
  std::optional<double> dae_mask;
  std::uint64_t seed = 0;
};

struct CompleteOptions {
  std::string in;
  std::string out;
  std::string bundle;
  std::string gt;
  std::string preset = "default";
  std::optional<double> lambda0;
  std::optional<double> beta0;
  std::optional<double> decay;
  std::optional<double> lr;
  std::size_t max_iters = 1000;
  bool no_early_stop = false;
  std::size_t patience = 1;
  bool no_ldo = false;
  std::uint64_t seed = 0;
};

struct EvalOptions {
  std::vector<std::string> models;  // NAME=DIR
  std::string gt;
  std::string out;
};

struct TracePlotOptions {
  std::string trace;
  std::string out;
};

// ---------------------------------------------------------------------------
// effective-config echo, readable back through --config

namespace detail {

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

inline std::string number(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

class Echo {
 public:
  explicit Echo(const std::string& section) { out_ << '[' << section << "]\n"; }
  Echo& str(const char* key, const std::string& v) { return line(key, quote(v)); }
  Echo& real(const char* key, double v) { return line(key, number(v)); }
  Echo& count(const char* key, std::uint64_t v) { return line(key, std::to_string(v)); }
  Echo& flag(const char* key, bool v) { return line(key, v ? "true" : "false"); }
  template <class T>
  Echo& opt(const char* key, const std::optional<T>& v) {
    if (!v) return *this;
    if constexpr (std::is_floating_point_v<T>) return real(key, *v);
    else return count(key, *v);
  }
  Echo& list(const char* key, const std::vector<std::string>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + quote(v[i]);
    return line(key, s + "]");
  }
  std::string text() const { return out_.str(); }

 private:
  Echo& line(const char* key, const std::string& v) {
    out_ << key << " = " << v << '\n';
    return *this;
  }
  std::ostringstream out_;
};

}  // namespace detail

inline std::string effective_config(const GenOptions& o) {
  return detail::Echo("gen")
      .count("count", o.count)
      .count("n-out", o.n_out)
      .list("classes", o.classes)
      .real("size-min", o.size_min)
      .real("size-max", o.size_max)
      .real("train-ratio", o.train_ratio)
      .real("val-ratio", o.val_ratio)
      .real("test-ratio", o.test_ratio)
      .count("seed", o.seed)
      .str("out", o.out)
      .text();
}

inline std::string effective_config(const CorruptOptions& o) {
  return detail::Echo("corrupt")
      .str("in", o.in)
      .str("list", o.list)
      .str("out", o.out)
      .opt("mask", o.mask)
      .opt("keep", o.keep)
      .opt("pad-to", o.pad_to)
      .count("seed", o.seed)
      .text();
}

inline std::string effective_config(const TrainOptions& o) {
  return detail::Echo("train")
      .str("in", o.in)
      .str("list", o.list)
      .str("out", o.out)
      .str("bundle", o.bundle)
      .count("n-out", o.n_out)
      .count("ae-epochs", o.ae_epochs)
      .count("gan-epochs", o.gan_epochs)
      .real("ae-lr", o.ae_lr)
      .real("gan-lr", o.gan_lr)
      .count("batch", o.batch)
      .count("critic-steps", o.critic_steps)
      .real("clip", o.clip)
      .opt("dae-mask", o.dae_mask)
      .count("seed", o.seed)
      .text();
}

inline std::string effective_config(const CompleteOptions& o) {
  return detail::Echo("complete")
      .str("in", o.in)
      .str("out", o.out)
      .str("bundle", o.bundle)
      .str("gt", o.gt)
      .str("preset", o.preset)
      .opt("lambda0", o.lambda0)
      .opt("beta0", o.beta0)
      .opt("decay", o.decay)
      .opt("lr", o.lr)
      .count("max-iters", o.max_iters)
      .flag("no-early-stop", o.no_early_stop)
      .count("patience", o.patience)
      .flag("no-ldo", o.no_ldo)
      .count("seed", o.seed)
      .text();
}

inline std::string effective_config(const EvalOptions& o) {
  return detail::Echo("eval").list("model", o.models).str("gt", o.gt).str("out", o.out).text();
}

inline std::string effective_config(const TracePlotOptions& o) {
  return detail::Echo("trace-plot").str("trace", o.trace).str("out", o.out).text();
}

// ---------------------------------------------------------------------------
// typed configs derived from options; these throw usage_error

inline SyntheticSpec synthetic_spec(const GenOptions& o) {
  SyntheticSpec spec;
  spec.classes.clear();
  try {
    for (const auto& c : o.classes) spec.classes.push_back(parse_shape_class(c));
  } catch (const argument_error& e) {
    throw usage_error(e.what());
  }
  spec.extent = {o.size_min, o.size_max};
  spec.points_per_cloud = o.n_out;
  spec.count = o.count;
  spec.seed = derive_seed(o.seed, "dataset");
  try {
    spec.validate();
  } catch (const argument_error& e) {
    throw usage_error(e.what());
  }
  return spec;
}

inline SplitRatios split_ratios(const GenOptions& o) {
  SplitRatios r{o.train_ratio, o.val_ratio, o.test_ratio};
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw usage_error("split ratios must be non-negative and sum to 1");
  }
  return r;
}

inline CorruptionSpec corruption_spec(const CorruptOptions& o) {
  if (o.mask.has_value() == o.keep.has_value()) throw usage_error("corrupt: give exactly one of --mask or --keep");
  CorruptionSpec spec;
  spec.kind = o.mask ? CorruptionKind::mask_knn : CorruptionKind::downsample;
  spec.fraction = o.mask ? *o.mask : *o.keep;
  spec.pad_to = o.pad_to;
  try {
    spec.validate();
  } catch (const argument_error& e) {
    throw usage_error(e.what());
  }
  return spec;
}

inline TrainConfig train_config(const TrainOptions& o) {
  TrainConfig c;
  c.ae_learning_rate = o.ae_lr;
  c.gan_learning_rate = o.gan_lr;
  c.ae_epochs = o.ae_epochs;
  c.gan_epochs = o.gan_epochs;
  c.batch_size = o.batch;
  c.critic_steps_per_gen = o.critic_steps;
  c.weight_clip = o.clip;
  c.seed = derive_seed(o.seed, "training");
  if (o.dae_mask) {
    CorruptionSpec spec;
    spec.kind = CorruptionKind::mask_knn;
    spec.fraction = *o.dae_mask;
    spec.seed = derive_seed(o.seed, "masking");
    c.dae_corruption = spec;
  }
  try {
    c.validate();
  } catch (const argument_error& e) {
    throw usage_error(e.what());
  }
  return c;
}

inline LdoConfig ldo_config(const CompleteOptions& o) {
  LdoConfig c;
  if (o.preset == "fast") {
    c = LdoConfig::fast();
  } else if (o.preset != "default") {
    throw usage_error("unknown preset '" + o.preset + "' (expected default or fast)");
  }
  if (o.lambda0) c.lambda0 = *o.lambda0;
  if (o.beta0) c.beta0 = *o.beta0;
  if (o.decay) c.decay = *o.decay;
  if (o.lr) c.learning_rate = *o.lr;
  c.max_iters = o.max_iters;
  c.early_stop = !o.no_early_stop;
  c.patience = o.patience;
  c.seed = derive_seed(o.seed, "ldo");
  try {
    c.validate();
  } catch (const argument_error& e) {
    throw usage_error(e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// file helpers

inline void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw usage_error(std::string("missing ") + what);
  if (!fs::is_directory(path)) throw format_error(std::string(what) + " is not a directory: " + path);
}

inline void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw usage_error(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw format_error(std::string(what) + " not found: " + path);
}

inline fs::path cloud_path(const fs::path& dir, const std::string& id) {
  const auto xyz = dir / (id + ".xyz");
  if (fs::exists(xyz)) return xyz;
  const auto ply = dir / (id + ".ply");
  if (fs::exists(ply)) return ply;
  throw format_error("no cloud for id '" + id + "' in " + dir.string());
}

inline std::vector<std::string> manifest_ids(const fs::path& dir) {
  const auto path = dir / kManifest;
  if (!fs::exists(path)) throw format_error("missing " + path.string());
  return read_id_list(path);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw format_error("cannot write " + path.string());
  out << text;
  if (!out) throw format_error("failed writing " + path.string());
}

inline void write_removed(const fs::path& path, const std::vector<std::size_t>& removed) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw format_error("cannot write " + path.string());
  for (auto i : removed) out << i << '\n';
}

inline std::string format_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shape_%04zu", i);
  return buf;
}

// ---------------------------------------------------------------------------
// commands

inline int cmd_gen(const GenOptions& o, std::ostream& log) {
  const auto spec = synthetic_spec(o);
  const auto ratios = split_ratios(o);
  if (o.out.empty()) throw usage_error("gen: --out is required");

  fs::create_directories(o.out);
  const fs::path dir = o.out;
  const auto data = generate_dataset(spec);
  std::vector<std::string> ids, labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ids.push_back(format_id(i));
    labels.push_back(ids.back() + " " + to_string(data[i].label));
    write_xyz(data[i].cloud, dir / (ids.back() + ".xyz"));
  }
  const auto split = split_dataset(ids, ratios, derive_seed(o.seed, "split"));
  write_lines(split.train, dir / "train.txt");
  write_lines(split.val, dir / "val.txt");
  write_lines(split.test, dir / "test.txt");
  write_lines(labels, dir / "labels.txt");
  write_lines(ids, dir / kManifest);
  log << "gen: wrote " << ids.size() << " clouds (" << split.train.size() << "/" << split.val.size() << "/"
      << split.test.size() << " split) to " << dir.string() << '\n';
  return kOk;
}

inline int cmd_corrupt(const CorruptOptions& o, std::ostream& log) {
  auto spec = corruption_spec(o);
  if (o.out.empty()) throw usage_error("corrupt: --out is required");
  require_dir(o.in, "input directory");
  const fs::path in = o.in;
  const auto ids = o.list.empty() ? manifest_ids(in) : read_id_list(o.list);
  std::vector<PointCloud> clouds;
  for (const auto& id : ids) clouds.push_back(read_cloud(cloud_path(in, id)));

  fs::create_directories(o.out);
  const fs::path out = o.out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    spec.seed = derive_seed(o.seed, "masking:" + ids[i]);
    const auto result = apply_corruption(clouds[i], spec);
    write_xyz(result.cloud, out / (ids[i] + ".xyz"));
    if (spec.kind == CorruptionKind::mask_knn) write_removed(out / (ids[i] + ".removed.txt"), result.removed);
  }
  write_lines(ids, out / kManifest);
  log << "corrupt: " << to_string(spec.kind) << " fraction " << spec.fraction << " on " << ids.size()
      << " clouds -> " << out.string() << '\n';
  return kOk;
}

inline void write_ae_log(const fs::path& path, const std::vector<double>& history) {
  std::ostringstream s;
  s << "# epoch emd\n" << std::setprecision(17);
  for (std::size_t i = 0; i < history.size(); ++i) s << i + 1 << ' ' << history[i] << '\n';
  write_text(path, s.str());
}

inline void write_gan_log(const fs::path& path, const GanHistory& h) {
  std::ostringstream s;
  s << "# epoch j_d j_g j_ie heldout_roundtrip\n" << std::setprecision(17);
  for (std::size_t i = 0; i < h.critic.size(); ++i) {
    s << i + 1 << ' ' << h.critic[i] << ' ' << h.generator[i] << ' ' << h.init_encoder[i] << ' '
      << h.heldout_roundtrip[i] << '\n';
  }
  write_text(path, s.str());
}

inline void write_gfvs(const fs::path& path, const GfvDataset& data) {
  std::ostringstream s;
  s << "# provenance " << data.provenance << '\n';
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    s << data.ids[i];
    for (float v : data.codes[i].values) {
      std::snprintf(buf, sizeof(buf), " %.9g", static_cast<double>(v));
      s << buf;
    }
    s << '\n';
  }
  write_text(path, s.str());
}

inline int cmd_train(const TrainOptions& o, std::ostream& log) {
  const auto config = train_config(o);
  if (o.out.empty()) throw usage_error("train: --out is required");
  require_dir(o.in, "input directory");
  const fs::path in = o.in;
  std::vector<std::string> ids;
  if (!o.list.empty()) {
    ids = read_id_list(o.list);
  } else if (fs::exists(in / "train.txt")) {
    ids = read_id_list(in / "train.txt");
  } else {
    ids = manifest_ids(in);
  }
  if (ids.empty()) throw format_error("train: no training identifiers");
  std::vector<PointCloud> clouds;
  for (const auto& id : ids) clouds.push_back(read_cloud(cloud_path(in, id)));
  const std::size_t n_out = o.n_out ? o.n_out : clouds.front().size();
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (clouds[i].size() > n_out) {
      throw cardinality_error("cloud '" + ids[i] + "' has " + std::to_string(clouds[i].size()) +
                              " points, more than N_out = " + std::to_string(n_out));
    }
    clouds[i] = pad_replicate(std::move(clouds[i]), n_out, derive_seed(o.seed, "pad:" + ids[i]));
  }

  fs::create_directories(o.out);
  const fs::path out = o.out;
  const fs::path bundle_path = o.bundle.empty() ? out / "model.bundle" : fs::path(o.bundle);
  TrainObserver observer;
  observer.on_ae_epoch = [&](std::size_t e, double loss) {
    if (e == 1 || e % 25 == 0 || e == config.ae_epochs) log << "train: ae epoch " << e << " emd " << loss << '\n';
  };
  observer.on_gan_epoch = [&](std::size_t e, const GanHistory& h) {
    if (e == 1 || e % 50 == 0 || e == config.gan_epochs) {
      log << "train: gan epoch " << e << " J(D) " << h.critic.back() << " J(G) " << h.generator.back() << '\n';
    }
  };

  AutoencoderResult ae;
  try {
    ae = train_autoencoder(clouds, config, observer);
  } catch (const divergence_error& e) {
    write_ae_log(out / "ae_loss.txt", e.ae_history());
    throw;
  }
  write_ae_log(out / "ae_loss.txt", ae.history);
  const auto gfvs = extract_gfvs(ae.encoder, gfv_source_clouds(clouds, config), ids);
  write_gfvs(out / "gfvs.txt", gfvs);
  GanResult gan;
  try {
    gan = train_gan(gfvs, config, {}, observer);
  } catch (const divergence_error& e) {
    write_gan_log(out / "gan_loss.txt", e.gan_history());
    throw;
  }
  write_gan_log(out / "gan_loss.txt", gan.history);
  save_bundle(assemble_bundle(std::move(ae), std::move(gan)), bundle_path);
  log << "train: bundle written to " << bundle_path.string() << '\n';
  return kOk;
}

inline int cmd_complete(const CompleteOptions& o, std::ostream& log) {
  const auto config = ldo_config(o);
  if (o.out.empty()) throw usage_error("complete: --out is required");
  if (o.in.empty()) throw usage_error("complete: --in is required");
  require_file(o.bundle, "bundle");
  if (!o.gt.empty()) require_dir(o.gt, "ground-truth directory");
  const fs::path in = o.in;

  std::vector<std::string> ids;
  std::vector<fs::path> paths;
  if (fs::is_directory(in)) {
    ids = manifest_ids(in);
    for (const auto& id : ids) paths.push_back(cloud_path(in, id));
  } else if (fs::is_regular_file(in)) {
    ids.push_back(in.stem().string());
    paths.push_back(in);
  } else {
    throw format_error("input not found: " + in.string());
  }
  const auto bundle = load_bundle(o.bundle);
  std::vector<PointCloud> partials, truths;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    partials.push_back(read_cloud(paths[i]));
    if (!o.gt.empty()) truths.push_back(read_cloud(cloud_path(o.gt, ids[i])));
  }

  fs::create_directories(o.out);
  const fs::path out = o.out;
  std::size_t failures = 0;
  std::map<std::string, std::size_t> reasons;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (o.no_ldo) {
      write_xyz(autoencode(partials[i], bundle, config.seed), out / (ids[i] + ".xyz"));
      continue;
    }
    const auto result = complete(partials[i], bundle, config, truths.empty() ? nullptr : &truths[i]);
    ++reasons[to_string(result.reason)];
    if (result.reason == StopReason::non_finite) ++failures;
    if (!result.cloud.empty()) write_xyz(result.cloud, out / (ids[i] + ".xyz"));
    std::ofstream trace(out / (ids[i] + ".trace.txt"), std::ios::trunc);
    write_trace(result.trace, trace);
  }
  write_lines(ids, out / kManifest);
  log << "complete: " << ids.size() << " clouds" << (o.no_ldo ? " (plain reconstruction)" : "");
  for (const auto& [reason, n] : reasons) log << ", " << reason << " " << n;
  log << '\n';
  if (failures) {
    log << "complete: " << failures << " runs hit a non-finite loss\n";
    return kNumericalFailure;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalModel {
  std::string name;
  std::vector<std::string> ids;
  std::vector<double> values;
  double mean = 0.0;
};

struct EvalReport {
  std::vector<EvalModel> models;
  std::string method;  // "exact" or "approximate tol=..."
};

inline EvalReport evaluate(const std::vector<std::pair<std::string, fs::path>>& models, const fs::path& gt_dir) {
  EvalReport report;
  report.method = "exact";
  for (const auto& [name, dir] : models) {
    EvalModel m;
    m.name = name;
    m.ids = manifest_ids(dir);
    double total = 0.0;
    for (const auto& id : m.ids) {
      const fs::path gt = gt_dir / (id + ".xyz");
      if (!fs::exists(gt) && !fs::exists(gt_dir / (id + ".ply"))) {
        throw format_error("id mismatch: '" + id + "' from " + dir.string() + " has no ground truth in " +
                           gt_dir.string());
      }
      const auto truth = read_cloud(cloud_path(gt_dir, id));
      const auto cloud = read_cloud(cloud_path(dir, id));
      EmdOptions options;
      options.method = truth.size() <= kDefaultExactCap ? EmdMethod::exact : EmdMethod::approximate;
      if (options.method == EmdMethod::approximate) {
        report.method = "approximate tol=" + detail::number(options.auction_tolerance);
      }
      m.values.push_back(emd(truth, cloud, options).cost);
      total += m.values.back();
    }
    m.mean = m.values.empty() ? 0.0 : total / static_cast<double>(m.values.size());
    report.models.push_back(std::move(m));
  }
  return report;
}

inline std::string report_tsv(const EvalReport& r) {
  std::ostringstream s;
  s << std::setprecision(17) << "# emd_gt " << r.method << "\nmodel\tid\temd_gt\n";
  for (const auto& m : r.models) {
    for (std::size_t i = 0; i < m.ids.size(); ++i) s << m.name << '\t' << m.ids[i] << '\t' << m.values[i] << '\n';
  }
  return s.str();
}

inline std::string summary_tsv(const EvalReport& r) {
  std::ostringstream s;
  s << std::setprecision(17) << "model\tcount\tmean_emd_gt\n";
  for (const auto& m : r.models) s << m.name << '\t' << m.values.size() << '\t' << m.mean << '\n';
  return s.str();
}

inline std::string report_table(const EvalReport& r) {
  std::size_t width = 5;
  for (const auto& m : r.models) width = std::max(width, m.name.size());
  std::ostringstream s;
  s << "EMD to ground truth (" << r.method << ", lower is better)\n";
  s << std::left << std::setw(static_cast<int>(width)) << "model" << "  " << std::right << std::setw(6) << "count"
    << "  " << std::setw(12) << "mean" << '\n';
  for (const auto& m : r.models) {
    s << std::left << std::setw(static_cast<int>(width)) << m.name << "  " << std::right << std::setw(6)
      << m.values.size() << "  " << std::setw(12) << std::fixed << std::setprecision(4) << m.mean << '\n'
      << std::defaultfloat;
  }
  return s.str();
}

inline int cmd_eval(const EvalOptions& o, std::ostream& log) {
  if (o.models.empty()) throw usage_error("eval: at least one --model NAME=DIR is required");
  if (o.out.empty()) throw usage_error("eval: --out is required");
  std::vector<std::pair<std::string, fs::path>> models;
  for (const auto& spec : o.models) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw usage_error("eval: --model expects NAME=DIR, got '" + spec + "'");
    }
    models.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  for (const auto& [name, dir] : models) require_dir(dir.string(), "model directory");
  require_dir(o.gt, "ground-truth directory");
  const auto report = evaluate(models, o.gt);
  fs::create_directories(o.out);
  const fs::path out = o.out;
  write_text(out / kEffectiveConfig, effective_config(o));
  write_text(out / "report.tsv", report_tsv(report));
  write_text(out / "summary.tsv", summary_tsv(report));
  const auto table = report_table(report);
  write_text(out / "report.txt", table);
  log << table;
  return kOk;
}

// ---------------------------------------------------------------------------
// trace plot

struct TraceCurve {
  std::string label;
  std::string colour;
  std::vector<double> values;
};

/// Curves drawn for a trace: L_EMD, 0.1 x L_D, L_2 and, when present, EMD-GT.
inline std::vector<TraceCurve> trace_curves(const LdoTrace& trace) {
  std::vector<TraceCurve> curves{{"L_EMD", "#1f77b4", {}}, {"0.1 x L_D", "#d62728", {}}, {"L_2", "#2ca02c", {}}};
  const bool gt = trace.has_ground_truth();
  if (gt) curves.push_back({"EMD-GT", "#9467bd", {}});
  for (const auto& r : trace.records) {
    curves[0].values.push_back(r.l_emd);
    curves[1].values.push_back(0.1 * r.l_d);
    curves[2].values.push_back(r.l_2);
    if (gt) curves[3].values.push_back(r.emd_gt.value_or(0.0));
  }
  return curves;
}

inline std::string trace_svg(const LdoTrace& trace) {
  const auto curves = trace_curves(trace);
  double lo = curves[0].values.front(), hi = lo;
  for (const auto& c : curves) {
    for (double v : c.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double w = 640, h = 400, left = 60, right = 150, top = 20, bottom = 40;
  const double pw = w - left - right, ph = h - top - bottom;
  const std::size_t n = trace.records.size();
  const double last = static_cast<double>(trace.records.back().iteration);
  const double first = static_cast<double>(trace.records.front().iteration);
  const double span = std::max(1.0, last - first);
  auto x_of = [&](std::size_t i) {
    return left + pw * (static_cast<double>(trace.records[i].iteration) - first) / span;
  };
  auto y_of = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#888\"/>\n";
  s << "<text x=\"" << left << "\" y=\"" << h - 10 << "\" font-size=\"12\">iteration " << first << " to " << last
    << "</text>\n";
  s << "<text x=\"5\" y=\"" << top + 10 << "\" font-size=\"11\">" << std::setprecision(4) << hi << "</text>\n";
  s << "<text x=\"5\" y=\"" << top + ph << "\" font-size=\"11\">" << lo << "</text>\n" << std::setprecision(2);
  for (std::size_t c = 0; c < curves.size(); ++c) {
    s << "<polyline fill=\"none\" stroke=\"" << curves[c].colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < n; ++i) s << (i ? " " : "") << x_of(i) << ',' << y_of(curves[c].values[i]);
    s << "\"/>\n";
    const double ly = top + 15 + 18 * static_cast<double>(c);
    s << "<text x=\"" << left + pw + 10 << "\" y=\"" << ly << "\" font-size=\"12\" fill=\"" << curves[c].colour
      << "\">" << curves[c].label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline int cmd_trace_plot(const TracePlotOptions& o, std::ostream& log) {
  if (o.out.empty()) throw usage_error("trace-plot: --out is required");
  require_file(o.trace, "trace file");
  std::ifstream in(o.trace);
  const auto trace = parse_trace(in);
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, trace_svg(trace));
  log << "trace-plot: " << trace.records.size() << " records, " << trace_curves(trace).size() << " curves -> "
      << out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// entry point

namespace detail {

template <class T>
void add_optional(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

inline void echo_config(const std::string& text, const std::string& out_dir, std::ostream& log) {
  log << text;
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / kEffectiveConfig, text);
}

}  // namespace detail

/// Parses argv and runs one subcommand, returning the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Point-cloud shape completion by latent denoising optimization"};
  app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags take precedence");
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset with manifest and split files");
  g->add_option("--count", gen.count, "Number of clouds")->capture_default_str();
  g->add_option("--n-out", gen.n_out, "Points per cloud")->capture_default_str();
  g->add_option("--classes", gen.classes, "Shape classes: ellipsoid box cylinder composite")->capture_default_str();
  g->add_option("--size-min", gen.size_min, "Smallest size parameter")->capture_default_str();
  g->add_option("--size-max", gen.size_max, "Largest size parameter")->capture_default_str();
  g->add_option("--train-ratio", gen.train_ratio)->capture_default_str();
  g->add_option("--val-ratio", gen.val_ratio)->capture_default_str();
  g->add_option("--test-ratio", gen.test_ratio)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--out", gen.out, "Output directory");

  CorruptOptions cor;
  auto* c = app.add_subcommand("corrupt", "Mask or downsample every cloud of a directory");
  c->add_option("--in", cor.in, "Directory with manifest.txt");
  c->add_option("--list", cor.list, "Identifier list to use instead of the manifest");
  c->add_option("--out", cor.out, "Output directory");
  detail::add_optional(c, "--mask", cor.mask, "Fraction removed as a nearest-neighbour ball");
  detail::add_optional(c, "--keep", cor.keep, "Fraction kept by uniform downsampling");
  detail::add_optional(c, "--pad-to", cor.pad_to, "Replicate-pad outputs to this size");
  c->add_option("--seed", cor.seed)->capture_default_str();

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train the autoencoder and latent GAN, write a model bundle");
  t->add_option("--in", tr.in, "Directory with clouds");
  t->add_option("--list", tr.list, "Training identifiers (default: train.txt, else manifest)");
  t->add_option("--out", tr.out, "Directory for loss logs and the GFV cache");
  t->add_option("--bundle", tr.bundle, "Bundle path (default: OUT/model.bundle)");
  t->add_option("--n-out", tr.n_out, "Cloud size (0: size of the first cloud)")->capture_default_str();
  t->add_option("--ae-epochs", tr.ae_epochs)->capture_default_str();
  t->add_option("--gan-epochs", tr.gan_epochs)->capture_default_str();
  t->add_option("--ae-lr", tr.ae_lr)->capture_default_str();
  t->add_option("--gan-lr", tr.gan_lr)->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--critic-steps", tr.critic_steps, "Critic steps per generator step")->capture_default_str();
  t->add_option("--clip", tr.clip, "Critic weight clip")->capture_default_str();
  detail::add_optional(t, "--dae-mask", tr.dae_mask, "Train a denoising autoencoder on inputs masked by this fraction");
  t->add_option("--seed", tr.seed)->capture_default_str();

  CompleteOptions co;
  auto* m = app.add_subcommand("complete", "Complete a cloud or a directory of clouds");
  m->add_option("--in", co.in, "Cloud file or directory with manifest.txt");
  m->add_option("--out", co.out, "Output directory");
  m->add_option("--bundle", co.bundle, "Model bundle");
  m->add_option("--gt", co.gt, "Ground-truth directory; adds EMD-GT to the traces");
  m->add_option("--preset", co.preset, "default or fast")->capture_default_str();
  detail::add_optional(m, "--lambda0", co.lambda0, "Initial discriminator-term weight");
  detail::add_optional(m, "--beta0", co.beta0, "Initial L2-term weight");
  detail::add_optional(m, "--decay", co.decay, "Per-iteration weight decay");
  detail::add_optional(m, "--lr", co.lr, "ADAM learning rate for z");
  m->add_option("--max-iters", co.max_iters)->capture_default_str();
  m->add_flag("--no-early-stop", co.no_early_stop, "Run all iterations");
  m->add_option("--patience", co.patience, "Consecutive L_D rises before stopping")->capture_default_str();
  m->add_flag("--no-ldo", co.no_ldo, "Emit the plain reconstruction H(E(x))");
  m->add_option("--seed", co.seed)->capture_default_str();

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "EMD to ground truth for one or more completion directories");
  e->add_option("--model", ev.models, "NAME=DIR, repeatable");
  e->add_option("--gt", ev.gt, "Ground-truth directory");
  e->add_option("--out", ev.out, "Report directory");

  TracePlotOptions tp;
  auto* p = app.add_subcommand("trace-plot", "Render an LDO trace as SVG");
  p->add_option("--trace", tp.trace, "Trace file");
  p->add_option("--out", tp.out, "SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s, log, err);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe, log, err);
    return kUsage;
  }

  try {
    if (g->parsed()) {
      synthetic_spec(gen);
      split_ratios(gen);
      detail::echo_config(effective_config(gen), gen.out, log);
      return cmd_gen(gen, log);
    }
    if (c->parsed()) {
      corruption_spec(cor);
      if (cor.in.empty() || cor.out.empty()) throw usage_error("corrupt: --in and --out are required");
      require_dir(cor.in, "input directory");
      detail::echo_config(effective_config(cor), cor.out, log);
      return cmd_corrupt(cor, log);
    }
    if (t->parsed()) {
      train_config(tr);
      if (tr.in.empty() || tr.out.empty()) throw usage_error("train: --in and --out are required");
      require_dir(tr.in, "input directory");
      detail::echo_config(effective_config(tr), tr.out, log);
      return cmd_train(tr, log);
    }
    if (m->parsed()) {
      ldo_config(co);
      if (co.in.empty() || co.out.empty()) throw usage_error("complete: --in and --out are required");
      require_file(co.bundle, "bundle");
      if (!fs::exists(co.in)) throw format_error("input not found: " + co.in);
      detail::echo_config(effective_config(co), co.out, log);
      return cmd_complete(co, log);
    }
    if (e->parsed()) {
      detail::echo_config(effective_config(ev), "", log);
      return cmd_eval(ev, log);
    }
    if (p->parsed()) {
      detail::echo_config(effective_config(tp), "", log);
      return cmd_trace_plot(tp, log);
    }
  } catch (const usage_error& ue) {
    err << "usage error: " << ue.what() << '\n';
    return kUsage;
  } catch (const numerical_error& ne) {
    err << "numerical failure: " << ne.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace ldo::cli
