#pragma once

// Latent denoising optimization: start from z = IE(E(partial)) and descend
// L_EMD + lambda * L_D + beta * L_2 over z with the networks held fixed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ldo/adam.hpp"
#include "ldo/autodiff.hpp"
#include "ldo/corrupt.hpp"
#include "ldo/emd_loss.hpp"
#include "ldo/error.hpp"
#include "ldo/nets.hpp"
#include "ldo/transport.hpp"

namespace ldo {

struct LdoConfig {
  double lambda0 = 0.001;
  double beta0 = 0.001;
  double decay = 0.9998;
  double learning_rate = 1e-4;
  std::size_t max_iters = 1000;
  bool early_stop = true;
  std::size_t patience = 1;  // consecutive L_D increases that end the run
  std::uint64_t seed = 0;    // replicate-padding stream
  EmdOptions emd;

  static LdoConfig standard() { return {}; }

  static LdoConfig fast() {
    LdoConfig c;
    c.lambda0 = 0.1;
    c.beta0 = 0.1;
    c.decay = 0.999;
    c.learning_rate = 0.001;
    return c;
  }

  double lambda_at(std::size_t k) const { return lambda0 * std::pow(decay, static_cast<double>(k)); }
  double beta_at(std::size_t k) const { return beta0 * std::pow(decay, static_cast<double>(k)); }

  void validate() const {
    if (!(decay > 0.0 && decay < 1.0)) throw argument_error("ldo config: decay must lie in (0, 1)");
    if (!(lambda0 >= 0.0) || !(beta0 >= 0.0)) throw argument_error("ldo config: lambda0 and beta0 must be >= 0");
    if (!(learning_rate > 0.0)) throw argument_error("ldo config: learning_rate must be positive");
    if (patience < 1) throw argument_error("ldo config: patience must be at least 1");
  }
};

struct LdoRecord {
  std::size_t iteration = 0;
  double l_emd = 0.0;
  double l_d = 0.0;
  double l_2 = 0.0;
  double lambda = 0.0;
  double beta = 0.0;
  std::optional<double> emd_gt;

  double total() const { return l_emd + lambda * l_d + beta * l_2; }
  friend bool operator==(const LdoRecord&, const LdoRecord&) = default;
};

struct LdoTrace {
  std::vector<LdoRecord> records;

  bool has_ground_truth() const { return !records.empty() && records.front().emd_gt.has_value(); }
  friend bool operator==(const LdoTrace&, const LdoTrace&) = default;
};

inline void write_trace(const LdoTrace& trace, std::ostream& out) {
  const bool gt = trace.has_ground_truth();
  out << "# iteration l_emd l_d l_2 lambda beta" << (gt ? " emd_gt" : "") << '\n';
  char buf[512];
  for (const auto& r : trace.records) {
    std::snprintf(buf, sizeof(buf), "%zu %.17g %.17g %.17g %.17g %.17g", r.iteration, r.l_emd, r.l_d, r.l_2,
                  r.lambda, r.beta);
    out << buf;
    if (gt) {
      std::snprintf(buf, sizeof(buf), " %.17g", r.emd_gt.value_or(std::numeric_limits<double>::quiet_NaN()));
      out << buf;
    }
    out << '\n';
  }
}

inline LdoTrace parse_trace(std::istream& in) {
  LdoTrace trace;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> columns;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (tokens.size() != 6 && tokens.size() != 7) {
      throw parse_error("trace line has " + std::to_string(tokens.size()) + " columns, expected 6 or 7", line_no);
    }
    if (columns && *columns != tokens.size()) throw parse_error("inconsistent trace column count", line_no);
    columns = tokens.size();
    LdoRecord r;
    try {
      r.iteration = std::stoull(tokens[0]);
      r.l_emd = std::stod(tokens[1]);
      r.l_d = std::stod(tokens[2]);
      r.l_2 = std::stod(tokens[3]);
      r.lambda = std::stod(tokens[4]);
      r.beta = std::stod(tokens[5]);
      if (tokens.size() == 7) r.emd_gt = std::stod(tokens[6]);
    } catch (const std::logic_error&) {
      throw parse_error("malformed trace value", line_no);
    }
    trace.records.push_back(r);
  }
  if (trace.records.empty()) throw format_error("trace contains no records");
  return trace;
}

/// Sorts points lexicographically so that downstream padding does not depend
/// on input order.
inline PointCloud canonical_order(PointCloud cloud) {
  std::sort(cloud.points.begin(), cloud.points.end());
  return cloud;
}

/// Canonically ordered and replicate-padded to n_out points.
inline PointCloud prepare_partial(const PointCloud& partial, std::size_t n_out, std::uint64_t seed) {
  if (partial.empty()) throw argument_error("partial cloud is empty");
  if (!all_finite(partial)) throw argument_error("partial cloud has non-finite coordinates");
  if (partial.size() > n_out) {
    throw cardinality_error("partial cloud has " + std::to_string(partial.size()) + " points, more than N_out = " +
                            std::to_string(n_out));
  }
  return pad_replicate(canonical_order(partial), n_out, seed);
}

/// The three loss terms for one partial cloud with the bundle networks as constants.
class LdoObjective {
 public:
  struct Terms {
    ad::Var emd;
    ad::Var ld;
    ad::Var l2;
    ad::Var total;
    ad::Var decoded;
  };

  LdoObjective(const ModelBundle& bundle, PointCloud padded_partial, const Gfv& w, EmdOptions options = {})
      : generator_(bind(bundle.generator, false)),
        critic_(bind(bundle.discriminator, false)),
        decoder_(bind(bundle.decoder, false)),
        target_(std::move(padded_partial)),
        w_(ad::constant(code_tensor(w))),
        options_(options) {
    if (target_.size() != bundle.n_out) {
      throw cardinality_error("ldo objective: partial has " + std::to_string(target_.size()) +
                              " points, decoder emits " + std::to_string(bundle.n_out));
    }
  }

  Terms terms(const ad::Var& z, double lambda, double beta) const {
    Terms t;
    const auto code = forward(generator_, z);
    t.ld = ad::reshape(ad::scale(forward_logits(critic_, code), -1.0f), {1});
    t.l2 = ad::l2_distance_sq(code, w_);
    t.decoded = forward(decoder_, code);
    t.emd = emd_loss(t.decoded, std::span<const PointCloud>(&target_, 1), options_);
    t.total = ad::add(t.emd, ad::add(ad::scale(t.ld, static_cast<float>(lambda)),
                                     ad::scale(t.l2, static_cast<float>(beta))));
    return t;
  }

  const PointCloud& target() const noexcept { return target_; }

 private:
  BoundNetwork generator_;
  BoundNetwork critic_;
  BoundNetwork decoder_;
  PointCloud target_;
  ad::Var w_;
  EmdOptions options_;
};

/// L_D(z) = -D(G(z)), using the critic's raw score.
inline double loss_ld(const ModelBundle& bundle, const LatentVec& z) {
  const auto code = forward(bind(bundle.generator, false), ad::constant(code_tensor(z)));
  return -static_cast<double>(forward_logits(bind(bundle.discriminator, false), code)->value[0]);
}

/// L_2(z) = ||G(z) - w||^2.
inline double loss_l2(const ModelBundle& bundle, const LatentVec& z, const Gfv& w) {
  const auto code = forward(bind(bundle.generator, false), ad::constant(code_tensor(z)));
  return ad::l2_distance_sq(code, ad::constant(code_tensor(w)))->value[0];
}

/// L_EMD(z) = d_EMD(partial, H(G(z))); `partial` must already have N_out points.
inline double loss_emd(const ModelBundle& bundle, const LatentVec& z, const PointCloud& partial,
                       const EmdOptions& options = {}) {
  const auto decoded = decode(bundle.decoder, generate(bundle.generator, z));
  if (decoded.size() != partial.size()) {
    throw cardinality_error("loss_emd: partial has " + std::to_string(partial.size()) + " points, decoder emits " +
                            std::to_string(decoded.size()));
  }
  return emd(partial, decoded, options).cost;
}

inline double total_loss(const LatentVec& z, const PointCloud& partial, const Gfv& w, double lambda, double beta,
                         const ModelBundle& bundle, const EmdOptions& options = {}) {
  const LdoObjective objective(bundle, partial, w, options);
  return objective.terms(ad::constant(code_tensor(z)), lambda, beta).total->value[0];
}

enum class StopReason { max_iters, early_stop, non_finite };

inline std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::max_iters:
      return "max_iters";
    case StopReason::early_stop:
      return "early_stop";
    case StopReason::non_finite:
      return "non_finite";
  }
  return "unknown";
}

struct Completion {
  PointCloud cloud;
  LdoTrace trace;
  LatentVec z;
  StopReason reason = StopReason::max_iters;
};

/// Plain reconstruction H(E(partial)) with the same preparation as complete().
inline PointCloud autoencode(const PointCloud& partial, const ModelBundle& bundle, std::uint64_t seed = 0) {
  return decode(bundle.decoder, encode(bundle.encoder, prepare_partial(partial, bundle.n_out, seed)));
}

/// Runs the optimization. Iteration k's record holds the losses at z after k
/// ADAM steps, weighted with lambda0 * decay^k and beta0 * decay^k. With
/// early_stop, the run ends as soon as L_D has risen above its previous value
/// `patience` times in a row; the z that triggered the stop is returned. A
/// non-finite loss ends the run and returns the z with the lowest total loss.
inline Completion complete(const PointCloud& partial, const ModelBundle& bundle, const LdoConfig& config,
                           const PointCloud* ground_truth = nullptr) {
  config.validate();
  bundle.validate();
  if (ground_truth && ground_truth->size() != bundle.n_out) {
    throw cardinality_error("complete: ground truth has " + std::to_string(ground_truth->size()) +
                            " points, expected " + std::to_string(bundle.n_out));
  }
  const auto padded = prepare_partial(partial, bundle.n_out, config.seed);
  const Gfv w = encode(bundle.encoder, padded);
  const LdoObjective objective(bundle, padded, w, config.emd);

  const auto z = ad::parameter(code_tensor(init_encode(bundle.init_encoder, w)));
  AdamState adam(z->shape(), config.learning_rate);

  Completion result;
  Tensor best_z = z->value;
  double best_total = std::numeric_limits<double>::infinity();
  PointCloud best_cloud;
  std::size_t rises = 0;

  for (std::size_t k = 0;; ++k) {
    if (k > 0) {
      adam_update(z->value, z->grad(), adam);
      z->zero_grad();
    }
    const double lambda = config.lambda_at(k);
    const double beta = config.beta_at(k);
    const auto t = objective.terms(z, lambda, beta);
    LdoRecord r{k, t.emd->value[0], t.ld->value[0], t.l2->value[0], lambda, beta, std::nullopt};
    PointCloud decoded = cloud_from_row(t.decoded->value);
    if (ground_truth && all_finite(decoded)) r.emd_gt = emd(*ground_truth, decoded, config.emd).cost;

    const bool finite = std::isfinite(r.l_emd) && std::isfinite(r.l_d) && std::isfinite(r.l_2) &&
                        std::isfinite(t.total->value[0]) && z->value.all_finite() && all_finite(decoded);
    if (!finite) {
      result.reason = StopReason::non_finite;
      result.z = code_from_row<LatentVec>(best_z);
      result.cloud = std::move(best_cloud);
      return result;
    }
    const double total = t.total->value[0];
    if (total < best_total) {
      best_total = total;
      best_z = z->value;
      best_cloud = decoded;
    }
    const bool rose = !result.trace.records.empty() && r.l_d > result.trace.records.back().l_d;
    result.trace.records.push_back(r);
    result.z = code_from_row<LatentVec>(z->value);
    result.cloud = std::move(decoded);

    if (config.early_stop && rose && ++rises >= config.patience) {
      result.reason = StopReason::early_stop;
      return result;
    }
    if (!rose) rises = 0;
    if (k == config.max_iters) {
      result.reason = StopReason::max_iters;
      return result;
    }
    ad::backward(t.total);
  }
}

/// Densification as completion: the sparse cloud is replicate-padded to N_out.
inline Completion upsample(const PointCloud& sparse, const ModelBundle& bundle, const LdoConfig& config,
                           const PointCloud* ground_truth = nullptr) {
  return complete(sparse, bundle, config, ground_truth);
}

}  // namespace ldo
