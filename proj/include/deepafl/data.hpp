#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepafl/matrix.hpp"

namespace deepafl::data {

struct Dataset {
    Matrix features;                   // N x d_x
    std::vector<std::int32_t> labels;  // length N, values in [0, class_count)
    Index class_count = 0;

    Index size() const { return features.rows(); }
    Index dim() const { return features.cols(); }
    void validate() const;
};

enum class SyntheticKind {
    LinearlySeparable, // Gaussian blobs, class means min-separated by 10 noise sigmas
    ConcentricRings,   // radial shells in a random planar subspace; not linearly separable
    RandomTeacher,     // labels from the argmax of a seeded 2-layer tanh teacher
};

SyntheticKind synthetic_kind_from_name(const std::string& name);
std::string synthetic_kind_name(SyntheticKind kind);

Dataset gen_synthetic(SyntheticKind kind, Index n, Index d_x, Index c, std::uint64_t seed);

/// N x C with exactly one 1.0 per row at the class column.
Matrix one_hot(const std::vector<std::int32_t>& labels, Index c);

enum class PartitionScheme { Dirichlet, Sharding, Uniform };

std::string partition_scheme_name(PartitionScheme s);
PartitionScheme partition_scheme_from_name(const std::string& name);

struct PartitionSpec {
    PartitionScheme scheme = PartitionScheme::Uniform;
    double alpha = 0.0;            // Dirichlet concentration
    Index shards_per_client = 0;   // Sharding
    std::uint64_t seed = 0;
    std::vector<std::vector<Index>> assignments; // disjoint, covering, nonempty

    Index clients() const { return static_cast<Index>(assignments.size()); }
    /// Disjointness, full coverage of [0, n), and no empty client.
    void validate(Index n) const;
};

/// Per class, proportions ~ Dirichlet(alpha * 1_K) split the shuffled class
/// indices by cumulative share. Resamples the whole partition when a client
/// ends up empty, up to 100 attempts.
PartitionSpec partition_dirichlet(const Dataset& dataset, Index k, double alpha,
                                  std::uint64_t seed);

/// Sort indices by label (stable), cut into k*s contiguous shards
/// (size floor(N/(k*s)), remainder on the last shard), deal s random shards
/// per client.
PartitionSpec partition_sharding(const Dataset& dataset, Index k, Index s,
                                 std::uint64_t seed);

/// Shuffle and deal round-robin.
PartitionSpec partition_uniform(const Dataset& dataset, Index k, std::uint64_t seed);

/// Flip exactly floor(tau * N) labels, chosen without replacement, each to a
/// uniformly random different class.
Dataset flip_labels(const Dataset& dataset, double tau, std::uint64_t seed);

/// Rebuild a dataset slice (rows in assignment order).
Dataset subset(const Dataset& dataset, const std::vector<Index>& indices);

// ---------------------------------------------------------------------------
// Files. Features: magic "FMX1", u32 rows, u32 cols, row-major float64.
// Labels: magic "LBL1", u32 count, u32 class_count, u32 class indices.
// All little-endian.
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::string& features_path,
                  const std::string& labels_path);
Dataset load_dataset(const std::string& features_path, const std::string& labels_path);

/// CSV rows "label,x0,x1,...". class_count <= 0 infers max label + 1.
Dataset load_dataset_csv(const std::string& path, Index class_count = -1);

std::string partition_to_json(const PartitionSpec& spec);
PartitionSpec partition_from_json(const std::string& text, Index dataset_size);

} // namespace deepafl::data
