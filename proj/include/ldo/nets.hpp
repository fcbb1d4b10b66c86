#pragma once

// The five networks: point encoder E, decoder H, generator G, critic D and the
// initializing encoder IE. Parameters live in plain Tensors (Network); forward
// passes bind them into autodiff leaves so the same code serves training and
// inference.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ldo/autodiff.hpp"
#include "ldo/error.hpp"
#include "ldo/point_cloud.hpp"
#include "ldo/rng.hpp"
#include "ldo/tensor.hpp"

namespace ldo {

inline constexpr std::size_t kCodeSize = 128;
inline constexpr std::size_t kDefaultCloudSize = 2048;

template <class Tag>
struct CodeVector {
  std::array<float, kCodeSize> values{};

  float& operator[](std::size_t i) { return values[i]; }
  float operator[](std::size_t i) const { return values[i]; }
  bool all_finite() const {
    for (float v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
  friend bool operator==(const CodeVector&, const CodeVector&) = default;
};

/// Global feature vector produced by the encoder bottleneck.
using Gfv = CodeVector<struct GfvTag>;
/// Generator input.
using LatentVec = CodeVector<struct LatentTag>;

enum class Activation { none, relu, sigmoid };
enum class NetworkKind { pointwise_maxpool, dense };

struct LayerSpec {
  std::size_t width = 0;
  Activation activation = Activation::none;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkDescriptor {
  std::string name;
  NetworkKind kind = NetworkKind::dense;
  std::size_t input_width = 0;
  std::vector<LayerSpec> layers;

  std::size_t output_width() const { return layers.empty() ? input_width : layers.back().width; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    std::size_t in = input_width;
    for (const auto& l : layers) {
      total += in * l.width + l.width;
      in = l.width;
    }
    return total;
  }

  friend bool operator==(const NetworkDescriptor&, const NetworkDescriptor&) = default;
};

struct Layer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  friend bool operator==(const Layer&, const Layer&) = default;
};

struct Network {
  NetworkDescriptor descriptor;
  std::vector<Layer> layers;

  /// Throws dimension_error if tensor shapes disagree with the descriptor.
  void validate() const {
    if (layers.size() != descriptor.layers.size()) {
      throw dimension_error(descriptor.name + ": descriptor lists " + std::to_string(descriptor.layers.size()) +
                            " layers but " + std::to_string(layers.size()) + " are stored");
    }
    std::size_t in = descriptor.input_width;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::size_t out = descriptor.layers[i].width;
      if (layers[i].weight.shape != Shape{in, out} || layers[i].bias.shape != Shape{out}) {
        throw dimension_error(descriptor.name + " layer " + std::to_string(i) + ": expected weight [" +
                              std::to_string(in) + "x" + std::to_string(out) + "], stored " +
                              shape_string(layers[i].weight.shape) + " / bias " + shape_string(layers[i].bias.shape));
      }
      in = out;
    }
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.weight.size() + l.bias.size();
    return total;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

struct ModelBundle {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::size_t n_out = kDefaultCloudSize;
  Network encoder;
  Network decoder;
  Network generator;
  Network discriminator;
  Network init_encoder;

  void validate() const {
    for (const Network* n : networks()) n->validate();
    if (decoder.descriptor.output_width() != 3 * n_out) {
      throw dimension_error("decoder emits " + std::to_string(decoder.descriptor.output_width()) +
                            " values, expected 3 x " + std::to_string(n_out));
    }
  }

  std::array<const Network*, 5> networks() const {
    return {&encoder, &decoder, &generator, &discriminator, &init_encoder};
  }
  std::array<Network*, 5> networks() { return {&encoder, &decoder, &generator, &discriminator, &init_encoder}; }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

inline NetworkDescriptor encoder_descriptor() {
  return {"encoder",
          NetworkKind::pointwise_maxpool,
          3,
          {{64, Activation::relu},
           {128, Activation::relu},
           {128, Activation::relu},
           {256, Activation::relu},
           {kCodeSize, Activation::relu}}};
}

inline NetworkDescriptor decoder_descriptor(std::size_t n_out = kDefaultCloudSize) {
  return {"decoder", NetworkKind::dense, kCodeSize, {{256, Activation::relu}, {256, Activation::relu}, {3 * n_out, Activation::none}}};
}

inline NetworkDescriptor generator_descriptor() {
  return {"generator",
          NetworkKind::dense,
          kCodeSize,
          {{128, Activation::relu}, {128, Activation::relu}, {kCodeSize, Activation::none}}};
}

/// With `sigmoid_head` the critic's output is squashed; by default it is the raw score.
inline NetworkDescriptor discriminator_descriptor(bool sigmoid_head = false) {
  return {"discriminator",
          NetworkKind::dense,
          kCodeSize,
          {{256, Activation::relu}, {512, Activation::relu}, {1, sigmoid_head ? Activation::sigmoid : Activation::none}}};
}

inline NetworkDescriptor init_encoder_descriptor() {
  return {"init_encoder",
          NetworkKind::dense,
          kCodeSize,
          {{128, Activation::relu}, {128, Activation::relu}, {kCodeSize, Activation::none}}};
}

/// He-uniform for relu layers, Xavier-uniform otherwise, zero biases.
inline Network init_params(const NetworkDescriptor& descriptor, std::uint64_t seed) {
  Network net{descriptor, {}};
  auto rng = make_rng(seed, "init:" + descriptor.name);
  std::size_t in = descriptor.input_width;
  for (const auto& spec : descriptor.layers) {
    const double limit = spec.activation == Activation::relu ? std::sqrt(6.0 / static_cast<double>(in))
                                                             : std::sqrt(6.0 / static_cast<double>(in + spec.width));
    std::uniform_real_distribution<float> dist(static_cast<float>(-limit), static_cast<float>(limit));
    Layer layer{Tensor({in, spec.width}), Tensor({spec.width})};
    for (auto& w : layer.weight.values) w = dist(rng);
    net.layers.push_back(std::move(layer));
    in = spec.width;
  }
  return net;
}

inline ModelBundle init_bundle(std::size_t n_out, std::uint64_t seed, bool sigmoid_critic = false) {
  ModelBundle b;
  b.n_out = n_out;
  b.encoder = init_params(encoder_descriptor(), seed);
  b.decoder = init_params(decoder_descriptor(n_out), seed);
  b.generator = init_params(generator_descriptor(), seed);
  b.discriminator = init_params(discriminator_descriptor(sigmoid_critic), seed);
  b.init_encoder = init_params(init_encoder_descriptor(), seed);
  return b;
}

/// Network parameters exposed as autodiff leaves.
struct BoundNetwork {
  const NetworkDescriptor* descriptor = nullptr;
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;

  std::vector<ad::Var> parameters() const {
    std::vector<ad::Var> all;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      all.push_back(weights[i]);
      all.push_back(biases[i]);
    }
    return all;
  }

  void zero_grad() const {
    for (const auto& p : parameters()) p->zero_grad();
  }

  /// Copies current leaf values back into `net`.
  void store(Network& net) const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      net.layers[i].weight = weights[i]->value;
      net.layers[i].bias = biases[i]->value;
    }
  }
};

inline BoundNetwork bind(const Network& net, bool trainable) {
  net.validate();
  BoundNetwork bound;
  bound.descriptor = &net.descriptor;
  for (const auto& layer : net.layers) {
    bound.weights.push_back(trainable ? ad::parameter(layer.weight) : ad::constant(layer.weight));
    bound.biases.push_back(trainable ? ad::parameter(layer.bias) : ad::constant(layer.bias));
  }
  return bound;
}

namespace nets_detail {

inline ad::Var activate(const ad::Var& x, Activation a) {
  switch (a) {
    case Activation::relu:
      return ad::relu(x);
    case Activation::sigmoid:
      return ad::sigmoid(x);
    case Activation::none:
      break;
  }
  return x;
}

}  // namespace nets_detail

/// Runs the layer stack. Dense networks take [B x in]; pointwise_maxpool
/// networks take the points of `segments` equal-size clouds stacked as
/// [(segments*N) x 3] and return [segments x out].
inline ad::Var forward(const BoundNetwork& net, ad::Var x, std::size_t segments = 1) {
  const bool pointwise = net.descriptor->kind == NetworkKind::pointwise_maxpool;
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    x = pointwise ? ad::pointwise_linear(x, net.weights[i], net.biases[i])
                  : ad::linear(x, net.weights[i], net.biases[i]);
    x = nets_detail::activate(x, net.descriptor->layers[i].activation);
  }
  if (pointwise) x = ad::max_pool_segments(x, segments);
  return x;
}

/// Pre-activation of the final layer (the critic's raw score when the head is a sigmoid).
inline ad::Var forward_logits(const BoundNetwork& net, ad::Var x) {
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    x = ad::linear(x, net.weights[i], net.biases[i]);
    if (i + 1 < net.weights.size()) x = nets_detail::activate(x, net.descriptor->layers[i].activation);
  }
  return x;
}

inline Tensor cloud_tensor(const PointCloud& cloud) {
  Tensor t({cloud.size(), 3});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) t.at(i, k) = cloud[i][k];
  }
  return t;
}

/// Stacks equal-size clouds into [(B*N) x 3].
inline Tensor stacked_clouds(std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw argument_error("stacked_clouds: no clouds");
  const std::size_t n = clouds.front().size();
  if (n == 0) throw argument_error("stacked_clouds: empty cloud");
  Tensor t({clouds.size() * n, 3});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b].size() != n) throw cardinality_error("stacked_clouds: clouds differ in size");
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) t.at(b * n + i, k) = clouds[b][i][k];
    }
  }
  return t;
}

/// Row `row` of a [B x 3N] tensor as an N-point cloud.
inline PointCloud cloud_from_row(const Tensor& t, std::size_t row = 0) {
  const std::size_t width = t.cols();
  if (width % 3 != 0) throw dimension_error("cloud_from_row: width " + std::to_string(width) + " not divisible by 3");
  PointCloud cloud;
  cloud.points.resize(width / 3);
  const float* src = t.data() + row * width;
  for (std::size_t i = 0; i < cloud.size(); ++i) cloud[i] = {src[3 * i], src[3 * i + 1], src[3 * i + 2]};
  return cloud;
}

template <class Code>
Tensor code_tensor(const Code& code) {
  return Tensor({1, kCodeSize}, FloatBuffer(code.values.begin(), code.values.end()));
}

template <class Code>
Code code_from_row(const Tensor& t, std::size_t row = 0) {
  if (t.cols() != kCodeSize) throw dimension_error("expected " + std::to_string(kCodeSize) + "-wide code");
  Code c;
  std::copy_n(t.data() + row * kCodeSize, kCodeSize, c.values.begin());
  return c;
}

inline Gfv encode(const Network& encoder, const PointCloud& cloud) {
  if (cloud.empty()) throw argument_error("encode: empty point cloud");
  auto out = forward(bind(encoder, false), ad::constant(cloud_tensor(cloud)));
  return code_from_row<Gfv>(out->value);
}

inline PointCloud decode(const Network& decoder, const Gfv& w) {
  auto out = forward(bind(decoder, false), ad::constant(code_tensor(w)));
  return cloud_from_row(out->value);
}

inline Gfv generate(const Network& generator, const LatentVec& z) {
  auto out = forward(bind(generator, false), ad::constant(code_tensor(z)));
  return code_from_row<Gfv>(out->value);
}

struct CriticOutput {
  float score = 0.0f;        // raw pre-sigmoid output of the final layer
  float probability = 0.0f;  // sigmoid of the score, for diagnostics
};

inline CriticOutput discriminate(const Network& discriminator, const Gfv& w) {
  const float logit = forward_logits(bind(discriminator, false), ad::constant(code_tensor(w)))->value[0];
  const float probability = ad::sigmoid(ad::constant(Tensor::scalar(logit)))->value[0];
  return {logit, probability};
}

inline LatentVec init_encode(const Network& init_encoder, const Gfv& w) {
  auto out = forward(bind(init_encoder, false), ad::constant(code_tensor(w)));
  return code_from_row<LatentVec>(out->value);
}

}  // namespace ldo
