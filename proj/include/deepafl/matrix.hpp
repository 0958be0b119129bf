#pragma once

#include <Eigen/Dense>

#include "deepafl/errors.hpp"

namespace deepafl {

// All numeric state is float64, dense, row-major. Row-major matches the
// on-disk formats (raw row-major little-endian payloads) so serialization is
// a straight walk over data().
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline double max_abs(const Matrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite())
        throw NumericError(std::string(what) + " contains non-finite entries");
}

inline void require_dims(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

} // namespace deepafl
