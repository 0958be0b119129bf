#pragma once

#include <cstdint>
#include <vector>

#include "deepafl/data.hpp"
#include "deepafl/fedsim.hpp"
#include "deepafl/matrix.hpp"
#include "deepafl/model.hpp"

namespace deepafl::oracle {

/// Centralized trainer: the K = 1 collapse of the federated protocol (same
/// code path, same solvers), which is exactly the layer-wise sequence
/// W_0 -> Omega_1 -> W_1 -> ... -> W_T on the pooled data.
fedsim::TrainResult train_centralized(const data::Dataset& dataset,
                                      const model::HyperParams& hyper,
                                      const fedsim::TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Gradient-descent verification oracles. Full-batch descent on the exact
// objective from zero init with a fixed step (0.95/L, L from hand-rolled power
// iteration), run until the gradient max-abs falls below grad_tol. They share
// nothing with the spectral solvers they check.
// ---------------------------------------------------------------------------

inline constexpr double kGdGradTol = 1e-9;
inline constexpr std::int64_t kGdMaxIters = 1'000'000;

/// Max-abs gap between the converged GD iterate and w_closed for the ridge
/// objective |Y - Phi W|^2 + lambda |W|^2. Throws OracleError when the budget
/// runs out before convergence.
double gd_verify_ridge(const Matrix& phi, const Matrix& y, double lambda,
                       const Matrix& w_closed);

/// Same check for the sandwiched objective |R - F Omega W|^2 + gamma |Omega|^2.
double gd_verify_sandwich(const Matrix& f, const Matrix& r, const Matrix& w,
                          double gamma, const Matrix& omega_closed);

/// Dominant eigenvalue of a symmetric PSD matrix by plain power iteration.
double power_lambda_max(const Matrix& sym, int iterations = 150);

// ---------------------------------------------------------------------------
// Model comparison and evaluation.
// ---------------------------------------------------------------------------

struct ModelDiff {
    std::vector<double> omega_diffs;      // max-abs per Omega_t
    std::vector<double> classifier_diffs; // max-abs per compared W_t
    double max_diff = 0.0;
    bool within_tolerance = false;
};

inline constexpr double kModelDiffTol = 1e-8;

/// Per-matrix max-abs differences; when only one side stores all classifiers,
/// just the final ones are compared. Symmetric in its arguments.
ModelDiff compare_models(const model::ModelSnapshot& a, const model::ModelSnapshot& b,
                         double tolerance = kModelDiffTol);

struct Evaluation {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy; // NaN for classes absent from the split
    double risk_h = 0.0;
};

Evaluation evaluate(const model::ModelSnapshot& snapshot,
                    const model::ProjectionSet& proj, const data::Dataset& dataset);
/// Convenience overload regenerating the projections from the stored seed.
Evaluation evaluate(const model::ModelSnapshot& snapshot, const data::Dataset& dataset);

// ---------------------------------------------------------------------------
// Feature separability. Lower is better for all three.
//   CSR: mean squared distance to the own-class mean over the mean squared
//        pairwise distance between class means.
//   IFS: tr(S_W) / tr(S_B) for the within/between scatter matrices.
//   DM:  tr(S_B^+ S_W) / (classes - 1), the LDA-style scatter ratio.
// Identical class means make all three +inf with `degenerate` set.
// ---------------------------------------------------------------------------

struct SeparabilityMetrics {
    double csr = 0.0;
    double ifs = 0.0;
    double dm = 0.0;
    bool degenerate = false;
};

SeparabilityMetrics separability_metrics(const Matrix& phi,
                                         const std::vector<std::int32_t>& labels);

} // namespace deepafl::oracle
