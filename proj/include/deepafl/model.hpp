#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepafl/matrix.hpp"

namespace deepafl::model {

enum class Activation : std::uint8_t {
    Gelu = 0,
    Relu = 1,
    LeakyRelu = 2, // slope 0.01
    Tanh = 3,
    Hardswish = 4,
    Softshrink = 5, // threshold 0.5
    None = 6,
};

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

// Ablation switches, combinable as a bitmask.
enum Ablation : std::uint32_t {
    kNoSkip = 1u << 0,           // drop the residual connection
    kIdentityB = 1u << 1,        // per-layer projections replaced by identity
    kNoActivation = 1u << 2,     // no activation inside residual blocks
    kNoTrainableOmega = 1u << 3, // fixed seeded random transform per layer
};

struct HyperParams {
    Index layers = 10; // network depth T; 0 means a single zero-layer classifier
    Index d_phi = 128; // projected feature width
    Index d_f = 128;   // hidden random width
    double lambda = 1.0;
    double gamma = 0.01;
    Activation activation = Activation::Gelu;
    std::uint64_t base_seed = 0;
    std::uint32_t ablation = 0;

    bool has(Ablation a) const { return (ablation & a) != 0; }
    void validate() const;
};

// ---------------------------------------------------------------------------
// Seeded random projections.
//
// The generation scheme is frozen so that a stored base seed is enough to
// reproduce every projection bit-for-bit:
//   * per-matrix seed: splitmix64 chain over (base_seed, tag byte, index) —
//     see derive_seed(); tags are 'A' (input projection), 'B' (per-layer
//     projection, index = layer t in [0, T)), 'O' (fixed transform used by
//     the NoTrainableOmega ablation, index = layer in [1, T]).
//   * stream: std::mt19937_64 seeded with that value, entries filled in
//     row-major order via Box-Muller pairs on 53-bit uniforms
//     (u = (rng() >> 11) * 2^-53).
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base_seed, char tag, std::uint64_t index);

/// rows x cols matrix of i.i.d. N(0, stddev^2) entries from the frozen stream.
Matrix gaussian_matrix(std::uint64_t seed, Index rows, Index cols, double stddev);

struct ProjectionSet {
    Matrix a;              // d_x x d_phi, entries N(0, 1/d_x)
    std::vector<Matrix> b; // layers matrices d_phi x d_f, entries N(0, 1/d_phi)
};

ProjectionSet make_projections(std::uint64_t base_seed, Index d_x, const HyperParams& hyper);

/// The fixed per-layer transform used when training with NoTrainableOmega.
/// `layer` is the transform index in [1, T]; entries ~ N(0, 1/d_f).
Matrix fixed_omega(const HyperParams& hyper, Index layer);

// ---------------------------------------------------------------------------
// Forward pieces.
// ---------------------------------------------------------------------------

double activate_scalar(double x, Activation kind);
Matrix activate(const Matrix& x, Activation kind);

/// Zero-layer features sigma(X A). The zero-layer activation is part of the
/// baseline and is applied even under the NoActivation ablation.
Matrix zero_layer(const Matrix& features, const ProjectionSet& proj, const HyperParams& hyper);

/// Hidden random features F = sigma(Phi B_t); NoActivation drops the sigma.
Matrix hidden_features(const Matrix& phi, const Matrix& b_t, const HyperParams& hyper);

/// Residual update Phi + F Omega (or F Omega under NoSkip) given a
/// precomputed F.
Matrix apply_update(const Matrix& phi, const Matrix& f, const Matrix& omega,
                    const HyperParams& hyper);

/// One full layer: F = sigma(Phi B_t), then the residual update with
/// Omega_{t+1}. `layer` is the current layer index t (the applied transform is
/// number t+1); under NoTrainableOmega the supplied omega is ignored in favor
/// of the seeded fixed one.
Matrix layer_step(const Matrix& phi_t, const Matrix& b_t, const Matrix& omega_next,
                  const HyperParams& hyper, Index layer);

// ---------------------------------------------------------------------------
// Risks.
// ---------------------------------------------------------------------------

/// H(Phi, W) = |Y - Phi W|_F^2.
double empirical_risk(const Matrix& phi, const Matrix& w, const Matrix& y);

/// G(t) = H + lambda |W_t|_F^2 + sum_{i=1..t} gamma |Omega_i|_F^2.
/// `omegas` holds Omega_1.. in order; only the first `t` are charged.
double regularized_risk(Index t, double risk_h, const Matrix& w_t,
                        const std::vector<Matrix>& omegas, double lambda, double gamma);

// ---------------------------------------------------------------------------
// Snapshot: everything inference needs (projections regenerate from the seed).
// ---------------------------------------------------------------------------

struct ModelSnapshot {
    HyperParams hyper;
    Index d_x = 0;
    Index class_count = 0;
    std::vector<Matrix> omegas;      // Omega_1..Omega_T
    std::vector<Matrix> classifiers; // [W_T] or [W_0..W_T] when all stored
    bool has_all_classifiers = false;

    const Matrix& final_classifier() const;
    /// W_t; only t == layers is available unless all classifiers were stored.
    const Matrix& classifier(Index t) const;
    void validate() const;
};

struct InferResult {
    Matrix scores; // M x C
    std::vector<std::int32_t> labels;
};

/// Final-layer features Phi_T for a batch (zero layer plus T residual layers).
Matrix forward_features(const ModelSnapshot& snapshot, const Matrix& features,
                        const ProjectionSet& proj);

/// Forward pass: zero layer, T residual layers, scores = Phi_T W_T.
/// Argmax ties break toward the smallest class index.
InferResult infer(const ModelSnapshot& snapshot, const Matrix& features,
                  const ProjectionSet& proj);

std::vector<std::int32_t> argmax_rows(const Matrix& scores);

// Snapshot container, version 1. Header: magic "DAFL", u16 version, u32 d_x,
// u32 d_phi, u32 d_f, u32 T, u32 C, f64 lambda, f64 gamma, u8 activation,
// u64 base_seed, u32 ablation mask, u32 flags (bit0 = all classifiers).
// Payload: Omega_1..Omega_T then the classifier matrices, raw row-major
// float64; trailing u32 CRC32 of the payload. Everything little-endian.
std::string serialize_snapshot(const ModelSnapshot& snapshot);
ModelSnapshot deserialize_snapshot(const std::string& bytes);
void save_snapshot(const ModelSnapshot& snapshot, const std::string& path);
ModelSnapshot load_snapshot(const std::string& path);

} // namespace deepafl::model
