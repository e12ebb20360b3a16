#include "resyn/quantizer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace resyn {

Eigen::VectorXd Codebook::lut(int index) const {
  if (index < 1 || index > size()) {
    throw std::out_of_range("codebook: index " + std::to_string(index) +
                            " outside [1, " + std::to_string(size()) + "]");
  }
  return entries.value.row(index - 1).transpose();
}

void Codebook::init_from_batch(const nn::Matrix& vectors, double batch_mass,
                               rng::Engine& rng) {
  const int k = size();
  const double per_entry = batch_mass / static_cast<double>(k);
  for (int i = 0; i < k; ++i) {
    const auto pick = static_cast<Eigen::Index>(
        rng.below(static_cast<std::uint64_t>(vectors.rows())));
    entries.value.row(i) = vectors.row(pick);
    ema_count.value(i, 0) = per_entry;
    ema_sum.value.row(i) = entries.value.row(i) * per_entry;
  }
  initialized = true;
}

void Codebook::ema_update(const Eigen::VectorXd& counts,
                          const nn::Matrix& sums) {
  if (counts.size() != size() || sums.rows() != size() ||
      sums.cols() != dim()) {
    throw std::invalid_argument("codebook: ema_update shape mismatch");
  }
  ema_count.value.col(0) =
      decay * ema_count.value.col(0) + (1.0 - decay) * counts;
  ema_sum.value = decay * ema_sum.value + (1.0 - decay) * sums;
  constexpr double kMinMass = 1e-12;
  for (int i = 0; i < size(); ++i) {
    const double mass = ema_count.value(i, 0);
    if (mass > kMinMass) {
      entries.value.row(i) = ema_sum.value.row(i) / mass;
    }
  }
}

int Codebook::reseed_dead(const nn::Matrix& candidates, double batch_mass,
                          rng::Engine& rng) {
  const int k = size();
  const double threshold = batch_mass / (4.0 * static_cast<double>(k));
  const double per_entry = batch_mass / static_cast<double>(k);
  int reseeded = 0;
  for (int i = 0; i < k; ++i) {
    if (ema_count.value(i, 0) >= threshold) continue;
    const auto pick = static_cast<Eigen::Index>(
        rng.below(static_cast<std::uint64_t>(candidates.rows())));
    entries.value.row(i) = candidates.row(pick);
    ema_count.value(i, 0) = per_entry;
    ema_sum.value.row(i) = entries.value.row(i) * per_entry;
    ++reseeded;
  }
  return reseeded;
}

VqResult vq_quantize(const Eigen::Ref<const Eigen::VectorXd>& z,
                     const Codebook& codebook) {
  if (codebook.size() < 1) {
    throw std::invalid_argument("vq_quantize: empty codebook");
  }
  if (!z.allFinite()) {
    throw std::invalid_argument("vq_quantize: non-finite input");
  }
  if (z.size() != codebook.dim()) {
    throw std::invalid_argument("vq_quantize: dimension mismatch");
  }
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int k = 0; k < codebook.size(); ++k) {
    const double d =
        (codebook.entries.value.row(k).transpose() - z).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = k;
    }
  }
  return {best + 1, codebook.entries.value.row(best).transpose()};
}

RqResult rq_quantize(const Eigen::Ref<const Eigen::VectorXd>& z,
                     const Codebook& codebook, int depth) {
  if (depth < 1) {
    throw std::invalid_argument("rq_quantize: depth must be >= 1");
  }
  RqResult out;
  out.indices.reserve(depth);
  out.composed = Eigen::VectorXd::Zero(z.size());
  Eigen::VectorXd residual = z;
  for (int d = 0; d < depth; ++d) {
    VqResult step = vq_quantize(residual, codebook);
    out.indices.push_back(step.index);
    residual -= step.vector;
    out.composed += step.vector;
  }
  out.residual = std::move(residual);
  return out;
}

}  // namespace resyn
