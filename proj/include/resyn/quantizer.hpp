#pragma once

#include <Eigen/Core>
#include <vector>

#include "resyn/nn.hpp"
#include "resyn/rng.hpp"

namespace resyn {

// Shared codebook: one entry set serves every latent position and every
// residual depth. Entries live in a Param so checkpoints carry them; EMA
// accumulators are buffers.
struct Codebook {
  nn::Param entries;    // K x F_z
  nn::Param ema_count;  // K x 1
  nn::Param ema_sum;    // K x F_z
  double decay = 0.8;
  bool initialized = false;  // set once entries are seeded from data

  Codebook() = default;
  Codebook(int k, int f_z, double ema_decay)
      : entries("codebook.entries", k, f_z, false),
        ema_count("codebook.ema_count", k, 1, false),
        ema_sum("codebook.ema_sum", k, f_z, false),
        decay(ema_decay) {}

  int size() const { return static_cast<int>(entries.value.rows()); }
  int dim() const { return static_cast<int>(entries.value.cols()); }

  // lut(k) with 1-based index.
  Eigen::VectorXd lut(int index) const;

  // Seeds every entry from a random row of `vectors` and balances the EMA
  // state as if each entry had been receiving rows/K assignments per step.
  void init_from_batch(const nn::Matrix& vectors, double batch_mass,
                       rng::Engine& rng);

  // One EMA step from per-entry assignment counts and vector sums
  // (0-based rows). Entries with no accumulated mass are left untouched.
  void ema_update(const Eigen::VectorXd& counts, const nn::Matrix& sums);

  // Re-seats entries whose EMA usage dropped below batch_mass / (4K) onto
  // random rows of `candidates`; returns how many were reseeded.
  int reseed_dead(const nn::Matrix& candidates, double batch_mass,
                  rng::Engine& rng);
};

struct VqResult {
  int index = 0;  // 1-based
  Eigen::VectorXd vector;
};

// Nearest entry under squared Euclidean distance; ties resolve to the lowest
// index. Throws on non-finite input or an empty codebook.
VqResult vq_quantize(const Eigen::Ref<const Eigen::VectorXd>& z,
                     const Codebook& codebook);

struct RqResult {
  std::vector<int> indices;  // depth-ordered, 1-based
  Eigen::VectorXd composed;  // sum of selected entries
  Eigen::VectorXd residual;  // z - composed
};

// D successive quantizations of the running residual; D = 1 reduces to VQ.
RqResult rq_quantize(const Eigen::Ref<const Eigen::VectorXd>& z,
                     const Codebook& codebook, int depth);

}  // namespace resyn
