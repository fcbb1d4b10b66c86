#pragma once

// Training: autoencoder with EMD loss (optionally on corrupted inputs),
// GFV extraction, and the latent WGAN with its initializing encoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ldo/adam.hpp"
#include "ldo/autodiff.hpp"
#include "ldo/bundle_io.hpp"
#include "ldo/corrupt.hpp"
#include "ldo/emd_loss.hpp"
#include "ldo/error.hpp"
#include "ldo/nets.hpp"
#include "ldo/rng.hpp"
#include "ldo/transport.hpp"

namespace ldo {

struct TrainConfig {
  double ae_learning_rate = 5e-4;
  double gan_learning_rate = 1e-4;
  std::size_t gan_epochs = 200;
  std::size_t ae_epochs = 300;
  std::size_t batch_size = 32;
  std::size_t critic_steps_per_gen = 5;
  double weight_clip = 0.01;
  std::uint64_t seed = 0;
  std::optional<CorruptionSpec> dae_corruption;
  EmdOptions emd;
  bool sigmoid_critic = false;

  void validate() const {
    if (!(ae_learning_rate > 0.0) || !(gan_learning_rate > 0.0)) {
      throw argument_error("train config: learning rates must be positive");
    }
    if (ae_epochs < 1 || gan_epochs < 1) throw argument_error("train config: epochs must be at least 1");
    if (batch_size < 1) throw argument_error("train config: batch_size must be at least 1");
    if (critic_steps_per_gen < 1) throw argument_error("train config: critic_steps_per_gen must be at least 1");
    if (!(weight_clip > 0.0)) throw argument_error("train config: weight_clip must be positive");
    if (dae_corruption) dae_corruption->validate();
  }
};

/// Per-epoch records of the three adversarial objectives, plus the mean
/// ||IE(G(z)) - z|| on a fixed held-out set of latent samples.
struct GanHistory {
  std::vector<double> critic;
  std::vector<double> generator;
  std::vector<double> init_encoder;
  std::vector<double> heldout_roundtrip;
};

/// Raised when a loss or parameter becomes non-finite; carries the history so far.
class divergence_error : public numerical_error {
 public:
  divergence_error(const std::string& what, std::vector<double> ae_history, GanHistory gan_history = {})
      : numerical_error(what), ae_history_(std::move(ae_history)), gan_history_(std::move(gan_history)) {}

  const std::vector<double>& ae_history() const noexcept { return ae_history_; }
  const GanHistory& gan_history() const noexcept { return gan_history_; }

 private:
  std::vector<double> ae_history_;
  GanHistory gan_history_;
};

struct AutoencoderResult {
  Network encoder;
  Network decoder;
  std::vector<double> history;  // mean EMD per epoch
};

struct GfvDataset {
  std::vector<Gfv> codes;
  std::vector<std::string> ids;
  std::string provenance;  // names the encoder the codes came from

  std::size_t size() const noexcept { return codes.size(); }

  void validate() const {
    if (codes.size() != ids.size()) throw argument_error("gfv dataset: code and id counts differ");
    std::set<std::string> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size()) throw argument_error("gfv dataset: identifiers are not unique");
  }
};

struct GanResult {
  Network generator;
  Network discriminator;
  Network init_encoder;
  GanHistory history;
};

/// Optional progress and inspection callbacks.
struct TrainObserver {
  std::function<void(std::size_t epoch, double loss)> on_ae_epoch;
  std::function<void(std::size_t epoch, const GanHistory&)> on_gan_epoch;
  std::function<void(std::size_t step, double critic_loss, const Network& discriminator)> on_critic_step;
};

/// Starting point and freezing controls for train_gan.
struct GanSetup {
  std::optional<Network> generator;
  std::optional<Network> discriminator;
  std::optional<Network> init_encoder;
  bool freeze_generator = false;
};

namespace pipeline_detail {

/// ADAM over a set of autodiff leaves.
class Optimizer {
 public:
  Optimizer(std::vector<ad::Var> params, double learning_rate) : params_(std::move(params)) {
    for (const auto& p : params_) states_.emplace_back(p->shape(), learning_rate);
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i]->has_grad()) adam_update(params_[i]->value, params_[i]->grad(), states_[i]);
      params_[i]->zero_grad();
    }
  }

  void zero_grad() {
    for (const auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<ad::Var> params_;
  std::vector<AdamState> states_;
};

inline bool finite(const BoundNetwork& net) {
  for (const auto& p : net.parameters()) {
    if (!p->value.all_finite()) return false;
  }
  return true;
}

inline Tensor normal_batch(std::size_t rows, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor t({rows, kCodeSize});
  for (auto& v : t.values) v = normal(rng);
  return t;
}

inline Tensor code_batch(const GfvDataset& data, std::span<const std::size_t> rows) {
  Tensor t({rows.size(), kCodeSize});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(data.codes[rows[r]].values.begin(), data.codes[rows[r]].values.end(), t.data() + r * kCodeSize);
  }
  return t;
}

/// Endless reshuffled pass over [0, n).
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, std::mt19937_64 rng) : order_(n), batch_(batch), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < std::min(batch_, order_.size())) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

inline void clip(const BoundNetwork& net, float c) {
  for (const auto& p : net.parameters()) {
    for (auto& v : p->value.values) v = std::clamp(v, -c, c);
  }
}

inline double heldout_roundtrip(const BoundNetwork& generator, const BoundNetwork& init_encoder, const Tensor& z) {
  const auto zc = ad::constant(z);
  const auto back = forward(init_encoder, ad::constant(forward(generator, zc)->value));
  return ad::mean(ad::row_norms(ad::sub(back, zc)))->value[0];
}

}  // namespace pipeline_detail

/// Mean of d_EMD(target, H(E(input))) over a minibatch, as an autodiff scalar.
inline ad::Var reconstruction_loss(const BoundNetwork& encoder, const BoundNetwork& decoder,
                                   std::span<const PointCloud> inputs, std::span<const PointCloud> targets,
                                   const EmdOptions& options = {}) {
  const auto codes = forward(encoder, ad::constant(stacked_clouds(inputs)), inputs.size());
  return emd_loss(forward(decoder, codes), targets, options);
}

/// Trains E and H to minimise mean d_EMD(S, H(E(S))), or
/// d_EMD(S, H(E(corrupt(S)))) with a fresh corruption per sample and epoch
/// when config.dae_corruption is set.
inline AutoencoderResult train_autoencoder(std::span<const PointCloud> clouds, const TrainConfig& config,
                                           const TrainObserver& observer = {}) {
  config.validate();
  if (clouds.empty()) throw argument_error("train_autoencoder: empty training set");
  const std::size_t n_out = clouds.front().size();
  if (n_out == 0) throw argument_error("train_autoencoder: empty cloud");
  for (const auto& c : clouds) {
    if (c.size() != n_out) {
      throw cardinality_error("train_autoencoder: cloud of " + std::to_string(c.size()) + " points, expected " +
                              std::to_string(n_out));
    }
  }

  AutoencoderResult result{init_params(encoder_descriptor(), config.seed),
                           init_params(decoder_descriptor(n_out), config.seed),
                           {}};
  const auto encoder = bind(result.encoder, true);
  const auto decoder = bind(result.decoder, true);
  auto params = encoder.parameters();
  for (const auto& p : decoder.parameters()) params.push_back(p);
  pipeline_detail::Optimizer optimizer(params, config.ae_learning_rate);

  std::optional<CorruptionSpec> corruption = config.dae_corruption;
  if (corruption && !corruption->pad_to) corruption->pad_to = n_out;

  std::vector<std::size_t> order(clouds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.ae_epochs; ++epoch) {
    auto rng = make_rng(config.seed, "ae-shuffle", epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<PointCloud> targets;
      std::vector<PointCloud> inputs;
      for (std::size_t i = start; i < end; ++i) {
        targets.push_back(clouds[order[i]]);
        if (corruption) {
          CorruptionSpec spec = *corruption;
          spec.seed = derive_seed(corruption->seed, "dae", epoch * clouds.size() + order[i]);
          inputs.push_back(apply_corruption(clouds[order[i]], spec).cloud);
        }
      }
      const auto loss = reconstruction_loss(encoder, decoder, corruption ? inputs : targets, targets, config.emd);
      const double value = loss->value[0];
      if (!std::isfinite(value)) {
        throw divergence_error("autoencoder loss became non-finite in epoch " + std::to_string(epoch + 1),
                               result.history);
      }
      ad::backward(loss);
      optimizer.step();
      total += value * static_cast<double>(end - start);
    }
    result.history.push_back(total / static_cast<double>(clouds.size()));
    if (!pipeline_detail::finite(encoder) || !pipeline_detail::finite(decoder)) {
      throw divergence_error("autoencoder parameters became non-finite in epoch " + std::to_string(epoch + 1),
                             result.history);
    }
    if (observer.on_ae_epoch) observer.on_ae_epoch(epoch + 1, result.history.back());
  }
  encoder.store(result.encoder);
  decoder.store(result.decoder);
  return result;
}

/// Hex CRC-32 of a network's parameters.
inline std::string network_tag(const Network& net) {
  std::string bytes;
  for (const auto& layer : net.layers) {
    bytes.append(reinterpret_cast<const char*>(layer.weight.data()), layer.weight.size() * sizeof(float));
    bytes.append(reinterpret_cast<const char*>(layer.bias.data()), layer.bias.size() * sizeof(float));
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", bundle_detail::crc(bytes));
  return net.descriptor.name + "@" + buf;
}

/// One GFV per cloud, in input order. Ids default to the cloud index.
inline GfvDataset extract_gfvs(const Network& encoder, std::span<const PointCloud> clouds,
                               std::vector<std::string> ids = {}) {
  if (ids.empty()) {
    for (std::size_t i = 0; i < clouds.size(); ++i) ids.push_back(std::to_string(i));
  }
  if (ids.size() != clouds.size()) throw argument_error("extract_gfvs: id count differs from cloud count");
  GfvDataset data;
  data.ids = std::move(ids);
  data.provenance = network_tag(encoder);
  data.codes.reserve(clouds.size());
  for (const auto& c : clouds) data.codes.push_back(encode(encoder, c));
  data.validate();
  return data;
}

/// Alternating WGAN training on GFVs. Each generator step is preceded by
/// critic_steps_per_gen critic steps, each followed by weight clipping. G and
/// IE are updated together from one backward pass of J(G): the IE parameters
/// only enter through the two reconstruction terms, which are J(IE).
inline GanResult train_gan(const GfvDataset& data, const TrainConfig& config, const GanSetup& setup = {},
                           const TrainObserver& observer = {}) {
  config.validate();
  data.validate();
  if (data.size() == 0) throw argument_error("train_gan: empty GFV dataset");
  using namespace pipeline_detail;

  GanResult result{setup.generator.value_or(init_params(generator_descriptor(), config.seed)),
                   setup.discriminator.value_or(init_params(discriminator_descriptor(config.sigmoid_critic), config.seed)),
                   setup.init_encoder.value_or(init_params(init_encoder_descriptor(), config.seed)),
                   {}};
  const auto generator = bind(result.generator, !setup.freeze_generator);
  const auto critic = bind(result.discriminator, true);
  const auto init_encoder = bind(result.init_encoder, true);
  Optimizer critic_opt(critic.parameters(), config.gan_learning_rate);
  auto gen_params = setup.freeze_generator ? std::vector<ad::Var>{} : generator.parameters();
  for (const auto& p : init_encoder.parameters()) gen_params.push_back(p);
  Optimizer gen_opt(gen_params, config.gan_learning_rate);

  const float clip_value = static_cast<float>(config.weight_clip);
  clip(critic, clip_value);

  auto z_rng = make_rng(config.seed, "gan-z");
  auto heldout_rng = make_rng(config.seed, "gan-heldout");
  const Tensor heldout = normal_batch(256, heldout_rng);
  BatchStream batches(data.size(), config.batch_size, make_rng(config.seed, "gan-batches"));

  // one generator step per data batch, each preceded by critic_steps_per_gen critic steps
  const std::size_t gen_steps_per_epoch = (data.size() + config.batch_size - 1) / config.batch_size;
  std::size_t critic_step = 0;

  for (std::size_t epoch = 0; epoch < config.gan_epochs; ++epoch) {
    double critic_sum = 0.0, gen_sum = 0.0, ie_sum = 0.0;
    std::size_t critic_count = 0;
    for (std::size_t g = 0; g < gen_steps_per_epoch; ++g) {
      for (std::size_t c = 0; c < config.critic_steps_per_gen; ++c) {
        const auto rows = batches.next();
        const auto x = ad::constant(code_batch(data, rows));
        const auto fake = ad::constant(forward(generator, ad::constant(normal_batch(rows.size(), z_rng)))->value);
        // J(D) = E[D(G(z))] - E[D(x)]
        const auto loss = ad::sub(ad::mean(forward(critic, fake)), ad::mean(forward(critic, x)));
        ad::backward(loss);
        critic_opt.step();
        clip(critic, clip_value);
        critic_sum += loss->value[0];
        ++critic_count;
        ++critic_step;
        if (observer.on_critic_step) {
          critic.store(result.discriminator);
          observer.on_critic_step(critic_step, loss->value[0], result.discriminator);
        }
      }

      const auto rows = batches.next();
      const auto x = ad::constant(code_batch(data, rows));
      const auto z = ad::constant(normal_batch(rows.size(), z_rng));
      const auto fake = forward(generator, z);
      const auto latent_cycle = ad::mean(ad::row_norms(ad::sub(forward(init_encoder, fake), z)));
      const auto data_cycle = ad::mean(ad::row_norms(ad::sub(forward(generator, forward(init_encoder, x)), x)));
      const auto ie_loss = ad::add(latent_cycle, data_cycle);
      const auto gen_loss = ad::sub(ie_loss, ad::mean(forward(critic, fake)));
      ad::backward(gen_loss);
      critic_opt.zero_grad();
      gen_opt.step();
      gen_sum += gen_loss->value[0];
      ie_sum += ie_loss->value[0];
    }

    auto& h = result.history;
    h.critic.push_back(critic_sum / static_cast<double>(critic_count));
    h.generator.push_back(gen_sum / static_cast<double>(gen_steps_per_epoch));
    h.init_encoder.push_back(ie_sum / static_cast<double>(gen_steps_per_epoch));
    h.heldout_roundtrip.push_back(heldout_roundtrip(generator, init_encoder, heldout));
    const bool finite_losses = std::isfinite(h.critic.back()) && std::isfinite(h.generator.back()) &&
                               std::isfinite(h.init_encoder.back());
    if (!finite_losses || !finite(generator) || !finite(critic) || !finite(init_encoder)) {
      throw divergence_error("GAN training became non-finite in epoch " + std::to_string(epoch + 1), {}, h);
    }
    if (observer.on_gan_epoch) observer.on_gan_epoch(epoch + 1, h);
  }
  generator.store(result.generator);
  critic.store(result.discriminator);
  init_encoder.store(result.init_encoder);
  return result;
}

/// Clouds whose GFVs the GAN is fitted to: the training clouds themselves, or
/// one fixed corruption of each when dae_corruption is set.
inline std::vector<PointCloud> gfv_source_clouds(std::span<const PointCloud> clouds, const TrainConfig& config) {
  std::vector<PointCloud> out(clouds.begin(), clouds.end());
  if (!config.dae_corruption) return out;
  CorruptionSpec spec = *config.dae_corruption;
  if (!spec.pad_to && !clouds.empty()) spec.pad_to = clouds.front().size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    CorruptionSpec s = spec;
    s.seed = derive_seed(spec.seed, "dae-gfv", i);
    out[i] = apply_corruption(clouds[i], s).cloud;
  }
  return out;
}

inline ModelBundle assemble_bundle(AutoencoderResult ae, GanResult gan) {
  ModelBundle bundle;
  bundle.n_out = ae.decoder.descriptor.output_width() / 3;
  bundle.encoder = std::move(ae.encoder);
  bundle.decoder = std::move(ae.decoder);
  bundle.generator = std::move(gan.generator);
  bundle.discriminator = std::move(gan.discriminator);
  bundle.init_encoder = std::move(gan.init_encoder);
  bundle.validate();
  return bundle;
}

struct TrainingRun {
  ModelBundle bundle;
  std::vector<double> ae_history;
  GfvDataset gfvs;
  GanHistory gan_history;
};

/// Autoencoder, GFV extraction, then GAN + IE on the extracted codes.
inline TrainingRun run_algorithm1(std::span<const PointCloud> clouds, const TrainConfig& config,
                                  std::vector<std::string> ids = {}, const TrainObserver& observer = {}) {
  config.validate();
  auto ae = train_autoencoder(clouds, config, observer);
  TrainingRun run;
  run.ae_history = ae.history;
  run.gfvs = extract_gfvs(ae.encoder, gfv_source_clouds(clouds, config), std::move(ids));
  try {
    auto gan = train_gan(run.gfvs, config, {}, observer);
    run.gan_history = gan.history;
    run.bundle = assemble_bundle(std::move(ae), std::move(gan));
  } catch (const divergence_error& e) {
    throw divergence_error(e.what(), run.ae_history, e.gan_history());
  }
  return run;
}

}  // namespace ldo
