#pragma once

// Define-by-run reverse-mode differentiation over dense float tensors.
//
// A graph is built implicitly by calling the operations below on Vars; it lives
// as long as the root Var is referenced. Leaves created with parameter() carry
// gradients; constant() leaves do not, and subgraphs depending only on
// constants record no backward closures.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ldo/error.hpp"
#include "ldo/tensor.hpp"

namespace ldo::ad {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  std::vector<Var> parents;
  /// Reads this node's adjoint and adds local contributions into the parents' adjoints.
  std::function<void(Node&)> propagate;
  bool requires_grad = false;
  FloatBuffer adjoint;  // scratch, only populated inside backward()

  const Shape& shape() const noexcept { return value.shape; }
  std::size_t size() const noexcept { return value.size(); }

  /// Accumulated gradient, shaped like value; zero until a backward pass reaches this node.
  const Tensor& grad() const {
    if (grad_.shape != value.shape) grad_ = Tensor(value.shape, 0.0f);
    return grad_;
  }

  bool has_grad() const noexcept { return grad_.shape == value.shape; }

  void zero_grad() { grad_ = Tensor(); }

  /// Adds the scratch adjoint into grad and releases it.
  void accumulate_adjoint() {
    if (grad_.shape != value.shape) {
      grad_ = Tensor(value.shape, std::move(adjoint));
    } else {
      for (std::size_t i = 0; i < grad_.size(); ++i) grad_[i] += adjoint[i];
    }
    FloatBuffer().swap(adjoint);
  }

 private:
  mutable Tensor grad_;
};

inline Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

inline Var parameter(Tensor value) {
  auto node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXf>;
using MutVecMap = Eigen::Map<Eigen::RowVectorXf>;

inline Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> propagate) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->propagate = std::move(propagate);
  }
  return node;
}

inline bool wants(const Var& v) { return v->requires_grad && !v->adjoint.empty(); }

inline void require_rank(const Var& v, std::size_t rank, const char* op, const char* operand) {
  if (v->value.rank() != rank) {
    throw dimension_error(std::string(op) + ": " + operand + " must have rank " + std::to_string(rank) +
                          ", got " + shape_string(v->shape()));
  }
}

// Rows are multiplied in fixed-height panels, the last one zero-padded, so every
// output row goes through the same GEMM kernel path and its value depends only
// on its own input row. Encoder outputs are then bitwise invariant to point
// order and to replicated points.
inline constexpr std::size_t kPanelRows = 96;

inline void affine_forward(const float* x, const float* w, const float* b, float* y, std::size_t rows,
                           std::size_t in, std::size_t out) {
  const auto n_in = static_cast<Eigen::Index>(in);
  const auto n_out = static_cast<Eigen::Index>(out);
  const auto panel = static_cast<Eigen::Index>(kPanelRows);
  ConstMap weight(w, n_in, n_out);
  ConstVecMap bias(b, n_out);
  RowMat padded;
  RowMat partial;
  for (std::size_t r = 0; r < rows; r += kPanelRows) {
    const std::size_t count = std::min(kPanelRows, rows - r);
    if (count == kPanelRows) {
      MutMap block(y + r * out, panel, n_out);
      block.noalias() = ConstMap(x + r * in, panel, n_in) * weight;
      block.rowwise() += bias;
    } else {
      const auto n = static_cast<Eigen::Index>(count);
      padded.setZero(panel, n_in);
      padded.topRows(n) = ConstMap(x + r * in, n, n_in);
      partial.noalias() = padded * weight;
      partial.rowwise() += bias;
      MutMap(y + r * out, n, n_out) = partial.topRows(n);
    }
  }
}

inline Var affine(const Var& input, const Var& weight, const Var& bias, const char* op) {
  require_rank(input, 2, op, "input");
  require_rank(weight, 2, op, "weight");
  require_rank(bias, 1, op, "bias");
  const std::size_t rows = input->shape()[0];
  const std::size_t in = input->shape()[1];
  const std::size_t out = weight->shape()[1];
  if (weight->shape()[0] != in) {
    throw dimension_error(std::string(op) + ": input " + shape_string(input->shape()) +
                          " does not match weight " + shape_string(weight->shape()));
  }
  if (bias->shape()[0] != out) {
    throw dimension_error(std::string(op) + ": bias " + shape_string(bias->shape()) +
                          " does not match weight " + shape_string(weight->shape()));
  }
  Tensor result({rows, out});
  affine_forward(input->value.data(), weight->value.data(), bias->value.data(), result.data(), rows, in, out);

  return make_node(std::move(result), {input, weight, bias}, [rows, in, out](Node& self) {
    const auto& x = self.parents[0];
    const auto& w = self.parents[1];
    const auto& b = self.parents[2];
    ConstMap dy(self.adjoint.data(), rows, out);
    if (wants(x)) {
      MutMap(x->adjoint.data(), rows, in).noalias() += dy * ConstMap(w->value.data(), in, out).transpose();
    }
    if (wants(w)) {
      MutMap(w->adjoint.data(), in, out).noalias() += ConstMap(x->value.data(), rows, in).transpose() * dy;
    }
    if (wants(b)) {
      MutVecMap(b->adjoint.data(), out) += dy.colwise().sum();
    }
  });
}

template <class Value, class Derivative>
Var elementwise(const Var& input, Value value, Derivative derivative) {
  Tensor result(input->shape());
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = value(input->value[i]);
  return make_node(std::move(result), {input}, [derivative](Node& self) {
    auto& x = self.parents[0];
    if (!wants(x)) return;
    for (std::size_t i = 0; i < self.adjoint.size(); ++i) {
      x->adjoint[i] += self.adjoint[i] * derivative(x->value[i], self.value[i]);
    }
  });
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->shape() != b->shape()) {
    throw dimension_error(std::string(op) + ": operand shapes differ, " + shape_string(a->shape()) + " vs " +
                          shape_string(b->shape()));
  }
}

}  // namespace detail

/// Fully connected layer: out[b,o] = sum_i in[b,i] * weight[i,o] + bias[o].
inline Var linear(const Var& input, const Var& weight, const Var& bias) {
  return detail::affine(input, weight, bias, "linear");
}

/// 1x1 convolution over a point set: the same affine map applied to every row.
inline Var pointwise_linear(const Var& input, const Var& weight, const Var& bias) {
  return detail::affine(input, weight, bias, "pointwise_linear");
}

/// Subgradient at exactly zero is 0.
inline Var relu(const Var& input) {
  return detail::elementwise(
      input, [](float x) { return x > 0.0f ? x : 0.0f; }, [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

inline Var sigmoid(const Var& input) {
  return detail::elementwise(
      input,
      [](float x) {
        // split on sign so exp never overflows
        if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
        const float e = std::exp(x);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

/// Max over segments of consecutive rows: input [(segments*n) x C] -> [segments x C].
/// Gradient is routed to the lowest-index argmax row of each segment and channel.
inline Var max_pool_segments(const Var& input, std::size_t segments) {
  detail::require_rank(input, 2, "max_pool_segments", "input");
  const std::size_t total = input->shape()[0];
  const std::size_t channels = input->shape()[1];
  if (segments == 0 || total % segments != 0) {
    throw dimension_error("max_pool_segments: " + std::to_string(total) + " rows do not split into " +
                          std::to_string(segments) + " segments");
  }
  const std::size_t n = total / segments;
  Tensor result({segments, channels});
  std::vector<std::size_t> winner(segments * channels);
  const float* x = input->value.data();
  for (std::size_t s = 0; s < segments; ++s) {
    float* best = result.data() + s * channels;
    std::size_t* arg = winner.data() + s * channels;
    const std::size_t first = s * n;
    std::copy_n(x + first * channels, channels, best);
    std::fill_n(arg, channels, first);
    for (std::size_t r = first + 1; r < first + n; ++r) {
      const float* row = x + r * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        if (row[c] > best[c]) {
          best[c] = row[c];
          arg[c] = r;
        }
      }
    }
  }
  return detail::make_node(std::move(result), {input}, [winner = std::move(winner), channels](Node& self) {
    auto& x = self.parents[0];
    if (!detail::wants(x)) return;
    for (std::size_t k = 0; k < winner.size(); ++k) {
      x->adjoint[winner[k] * channels + k % channels] += self.adjoint[k];
    }
  });
}

/// Global max pool over the point axis: [N x C] -> [C].
inline Var max_pool_points(const Var& input) {
  detail::require_rank(input, 2, "max_pool_points", "input");
  auto pooled = max_pool_segments(input, 1);
  pooled->value.shape = {input->shape()[1]};
  return pooled;
}

inline Var reshape(const Var& input, Shape shape) {
  if (shape_size(shape) != input->size()) {
    throw dimension_error("reshape: cannot view " + shape_string(input->shape()) + " as " + shape_string(shape));
  }
  Tensor result(std::move(shape), input->value.values);
  return detail::make_node(std::move(result), {input}, [](Node& self) {
    auto& x = self.parents[0];
    if (!detail::wants(x)) return;
    for (std::size_t i = 0; i < self.adjoint.size(); ++i) x->adjoint[i] += self.adjoint[i];
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor result(a->shape());
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = a->value[i] + b->value[i];
  return detail::make_node(std::move(result), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!detail::wants(p)) continue;
      for (std::size_t i = 0; i < self.adjoint.size(); ++i) p->adjoint[i] += self.adjoint[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor result(a->shape());
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = a->value[i] - b->value[i];
  return detail::make_node(std::move(result), {a, b}, [](Node& self) {
    auto& x = self.parents[0];
    auto& y = self.parents[1];
    for (std::size_t i = 0; i < self.adjoint.size(); ++i) {
      if (detail::wants(x)) x->adjoint[i] += self.adjoint[i];
      if (detail::wants(y)) y->adjoint[i] -= self.adjoint[i];
    }
  });
}

inline Var scale(const Var& input, float factor) {
  return detail::elementwise(
      input, [factor](float x) { return factor * x; }, [factor](float, float) { return factor; });
}

inline Var sum(const Var& input) {
  double total = 0.0;
  for (float v : input->value.values) total += v;
  return detail::make_node(Tensor::scalar(static_cast<float>(total)), {input}, [](Node& self) {
    auto& x = self.parents[0];
    if (!detail::wants(x)) return;
    for (auto& g : x->adjoint) g += self.adjoint[0];
  });
}

inline Var mean(const Var& input) { return scale(sum(input), 1.0f / static_cast<float>(input->size())); }

/// Squared Euclidean distance between equally shaped tensors, as a scalar.
inline Var l2_distance_sq(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "l2_distance_sq");
  double total = 0.0;
  for (std::size_t i = 0; i < a->size(); ++i) {
    const double d = static_cast<double>(a->value[i]) - b->value[i];
    total += d * d;
  }
  return detail::make_node(Tensor::scalar(static_cast<float>(total)), {a, b}, [](Node& self) {
    auto& x = self.parents[0];
    auto& y = self.parents[1];
    const float g = self.adjoint[0];
    for (std::size_t i = 0; i < x->size(); ++i) {
      const float d = 2.0f * (x->value[i] - y->value[i]) * g;
      if (detail::wants(x)) x->adjoint[i] += d;
      if (detail::wants(y)) y->adjoint[i] -= d;
    }
  });
}

/// Euclidean norm of each row: [B x D] -> [B]. Zero rows get a zero subgradient.
inline Var row_norms(const Var& input) {
  detail::require_rank(input, 2, "row_norms", "input");
  const std::size_t rows = input->shape()[0];
  const std::size_t cols = input->shape()[1];
  Tensor result({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = input->value.at(r, c);
      total += v * v;
    }
    result[r] = static_cast<float>(std::sqrt(total));
  }
  return detail::make_node(std::move(result), {input}, [rows, cols](Node& self) {
    auto& x = self.parents[0];
    if (!detail::wants(x)) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const float norm = self.value[r];
      if (norm == 0.0f) continue;
      const float g = self.adjoint[r] / norm;
      for (std::size_t c = 0; c < cols; ++c) x->adjoint[r * cols + c] += g * x->value.at(r, c);
    }
  });
}

/// Node with a caller-supplied value and backward rule. `propagate` receives the
/// node; parents whose adjoint is empty do not need gradients.
inline Var custom(Tensor value, std::vector<Var> parents, std::function<void(Node&)> propagate) {
  return detail::make_node(std::move(value), std::move(parents), std::move(propagate));
}

/// True when a parent of a custom node expects adjoint contributions.
inline bool needs_adjoint(const Var& v) { return detail::wants(v); }

/// Accumulates d(root)/d(node) into grad of every node reachable from root.
inline void backward(const Var& root) {
  if (root->size() != 1) {
    throw dimension_error("backward: root must be a scalar, got " + shape_string(root->shape()));
  }
  if (!root->requires_grad) return;

  // iterative post-order DFS over the differentiable subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->adjoint.assign(n->size(), 0.0f);
  root->adjoint[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->propagate) n->propagate(*n);
  }
  for (Node* n : order) n->accumulate_adjoint();
}

}  // namespace ldo::ad
