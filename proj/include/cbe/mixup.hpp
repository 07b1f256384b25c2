#pragma once

#include <span>
#include <string>
#include <vector>

#include "cbe/training.hpp"

namespace cbe {

/// Draws lambda ~ Beta(alpha, alpha) and returns max(lambda, 1 - lambda).
double sample_lambda(double alpha, Rng& rng);
/// The folding step alone, for callers that already hold a raw lambda.
inline double fold_lambda(double lambda) { return lambda < 0.5 ? 1.0 - lambda : lambda; }

/// One side of a mixup pair: latent, one-hot concept rows and one-hot label.
struct MixSide {
  Vector z;
  std::vector<Simplex3> concepts;
  Vector y;
  std::string id;
};

/// Builds a side from a prepared row. Throws ValidationError if any concept
/// label is missing, since mixing needs complete rows.
MixSide mix_side(const PreparedRow& row, Vector z, int num_classes);

struct MixedInstance {
  Vector z;
  std::vector<Simplex3> concepts;
  Vector y;
  double lambda_hat = 1.0;
  std::string id_i, id_j;
};

/// Convex combination with weight lambda_hat on `i` (the dominant side).
MixedInstance mix_pair(const MixSide& i, const MixSide& j, double lambda_hat);

/// Reference to a row in either augmented training partition.
struct PoolRef {
  bool unlabeled = false;  // false: source_aug row, true: unlabeled_aug row
  std::size_t index = 0;

  bool operator==(const PoolRef&) const = default;
};

/// Seeded permutation of source_aug rows followed by unlabeled_aug rows.
std::vector<PoolRef> build_shuffle(std::size_t n_sa, std::size_t n_u, Rng& rng);

/// One epoch of the mixup objective. Row i of each partition is mixed with
/// W[i] from a fresh shuffle; when the partitions differ in size the shorter
/// one wraps around so both sides contribute to every batch. Each batch
/// minimizes L_sa + tau * L_u, the sides' mean joint losses on mixed targets.
/// Uses `rng` for the shuffle, the batch order and the lambda draws, in that
/// order.
EpochLog mixup_epoch(ConceptModel& model, std::span<const PreparedRow> sa, std::span<const PreparedRow> u,
                     const TrainConfig& config, Adam& optimizer, Rng& rng, std::size_t epoch, LossReport& report);

TrainResult train_joint_mixup(const DatasetBundle& bundle, const TrainConfig& config);

}  // namespace cbe
