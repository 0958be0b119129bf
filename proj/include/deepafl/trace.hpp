#pragma once

#include <limits>
#include <vector>

#include "deepafl/matrix.hpp"

namespace deepafl {

/// One row per layer t in [0, T]; produced by both trainers.
struct LayerRow {
    Index layer = 0;
    double risk_h = 0.0;  // H(Phi_t, W_t) on the training split
    double risk_g = 0.0;  // H + lambda|W_t|^2 + sum gamma|Omega_i|^2
    double train_accuracy = 0.0;
    double test_accuracy = std::numeric_limits<double>::quiet_NaN();
    double test_risk_h = std::numeric_limits<double>::quiet_NaN();
    double omega_frobenius = 0.0; // |Omega_t|_F; 0 at layer 0
    // H(Phi_{t+1}, W_t), the mid-step risk after the feature update and
    // before the next classifier solve; NaN on the final layer.
    double risk_h_after_update = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
};

using LayerTrace = std::vector<LayerRow>;

} // namespace deepafl
