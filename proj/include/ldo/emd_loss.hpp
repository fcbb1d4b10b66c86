#pragma once

#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ldo/autodiff.hpp"
#include "ldo/nets.hpp"
#include "ldo/transport.hpp"

namespace ldo {

/// Mean over the batch of d_EMD(target[b], decoded row b), where `decoded` is
/// [B x 3N]. The matching is re-solved on every call and held fixed for the
/// backward pass (envelope gradient). Optional `matchings` receives them.
inline ad::Var emd_loss(const ad::Var& decoded, std::span<const PointCloud> targets, const EmdOptions& options = {},
                        std::vector<Matching>* matchings = nullptr) {
  if (decoded->value.rank() != 2 || decoded->shape()[0] != targets.size()) {
    throw dimension_error("emd_loss: decoded " + shape_string(decoded->shape()) + " for " +
                          std::to_string(targets.size()) + " targets");
  }
  const std::size_t batch = targets.size();
  std::vector<PointCloud> clouds;
  std::vector<Matching> solved;
  clouds.reserve(batch);
  solved.reserve(batch);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    clouds.push_back(cloud_from_row(decoded->value, b));
    if (!all_finite(clouds.back())) {
      // no matching exists; report NaN so callers' divergence checks fire
      Matching identity;
      identity.assignment.resize(clouds.back().size());
      std::iota(identity.assignment.begin(), identity.assignment.end(), std::size_t{0});
      identity.cost = std::numeric_limits<double>::quiet_NaN();
      solved.push_back(std::move(identity));
    } else {
      solved.push_back(emd(targets[b], clouds.back(), options));
    }
    total += solved.back().cost;
  }
  if (matchings) *matchings = solved;
  const float inv_batch = 1.0f / static_cast<float>(batch);
  std::vector<PointCloud> target_copy(targets.begin(), targets.end());
  return ad::custom(
      Tensor::scalar(static_cast<float>(total / static_cast<double>(batch))), {decoded},
      [clouds = std::move(clouds), solved = std::move(solved), target_copy = std::move(target_copy),
       inv_batch](ad::Node& self) {
        auto& x = self.parents[0];
        if (!ad::needs_adjoint(x)) return;
        const float g = self.adjoint[0] * inv_batch;
        const std::size_t width = x->shape()[1];
        for (std::size_t b = 0; b < clouds.size(); ++b) {
          const auto grad = emd_gradient(target_copy[b], clouds[b], solved[b]);
          float* dst = x->adjoint.data() + b * width;
          for (std::size_t j = 0; j < grad.size(); ++j) {
            for (int k = 0; k < 3; ++k) dst[3 * j + k] += g * grad[j][k];
          }
        }
      });
}

}  // namespace ldo
