#include "deepafl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "deepafl/linalg.hpp"

namespace deepafl::oracle {

fedsim::TrainResult train_centralized(const data::Dataset& dataset,
                                      const model::HyperParams& hyper,
                                      const fedsim::TrainOptions& options) {
    data::PartitionSpec all;
    all.scheme = data::PartitionScheme::Uniform;
    all.seed = 0;
    all.assignments.resize(1);
    all.assignments[0].resize(static_cast<size_t>(dataset.size()));
    std::iota(all.assignments[0].begin(), all.assignments[0].end(), Index{0});
    fedsim::ParticipationPolicy full;
    return fedsim::train_federated(dataset, all, hyper, full, options);
}

double power_lambda_max(const Matrix& sym, int iterations) {
    if (sym.rows() == 0) return 0.0;
    Vector v = Vector::Ones(sym.rows());
    v.normalize();
    double lam = 0.0;
    for (int i = 0; i < iterations; ++i) {
        Vector w = sym * v;
        lam = w.norm();
        if (lam == 0.0) return 0.0;
        v = w / lam;
    }
    return lam;
}

namespace {

struct GdProblem {
    // gradient(X) = 2 (hess_l * X * hess_r + reg * X - target)
    Matrix hess_l;
    Matrix hess_r; // empty means identity (ridge case)
    Matrix target;
    double reg = 0.0;
};

double run_gd(const GdProblem& p, const Matrix& closed, const char* what) {
    const double lam_l = power_lambda_max(p.hess_l);
    const double lam_r = p.hess_r.size() == 0 ? 1.0 : power_lambda_max(p.hess_r);
    const double lipschitz = 2.0 * (lam_l * lam_r + p.reg);

    Matrix x = Matrix::Zero(p.target.rows(), p.target.cols());
    auto gradient = [&](const Matrix& at) {
        Matrix g = p.hess_l * at;
        if (p.hess_r.size() != 0) g = g * p.hess_r;
        return Matrix(2.0 * (g + p.reg * at - p.target));
    };

    Matrix grad = gradient(x);
    if (max_abs(grad) <= kGdGradTol) return max_abs(Matrix(x - closed));
    if (lipschitz <= 0.0)
        throw OracleError(std::string(what) + ": flat objective with nonzero gradient");
    const double step = 0.95 / lipschitz;

    for (std::int64_t iter = 0; iter < kGdMaxIters; ++iter) {
        x -= step * grad;
        grad = gradient(x);
        if (max_abs(grad) <= kGdGradTol) return max_abs(Matrix(x - closed));
    }
    throw OracleError(std::string(what) + ": gradient descent did not converge within " +
                      std::to_string(kGdMaxIters) + " iterations (grad max-abs " +
                      std::to_string(max_abs(grad)) + ")");
}

} // namespace

double gd_verify_ridge(const Matrix& phi, const Matrix& y, double lambda,
                       const Matrix& w_closed) {
    require_dims(phi.rows() == y.rows(), "gd_verify_ridge: Phi/Y row mismatch");
    require_dims(w_closed.rows() == phi.cols() && w_closed.cols() == y.cols(),
                 "gd_verify_ridge: closed-form shape mismatch");
    GdProblem p;
    p.hess_l = phi.transpose() * phi;
    p.target = phi.transpose() * y;
    p.reg = lambda;
    return run_gd(p, w_closed, "gd_verify_ridge");
}

double gd_verify_sandwich(const Matrix& f, const Matrix& r, const Matrix& w,
                          double gamma, const Matrix& omega_closed) {
    require_dims(f.rows() == r.rows(), "gd_verify_sandwich: F/R row mismatch");
    require_dims(w.cols() == r.cols(), "gd_verify_sandwich: W/R column mismatch");
    require_dims(omega_closed.rows() == f.cols() && omega_closed.cols() == w.rows(),
                 "gd_verify_sandwich: closed-form shape mismatch");
    GdProblem p;
    p.hess_l = f.transpose() * f;
    p.hess_r = w * w.transpose();
    p.target = f.transpose() * r * w.transpose();
    p.reg = gamma;
    return run_gd(p, omega_closed, "gd_verify_sandwich");
}

ModelDiff compare_models(const model::ModelSnapshot& a, const model::ModelSnapshot& b,
                         double tolerance) {
    a.validate();
    b.validate();
    require_dims(a.hyper.layers == b.hyper.layers && a.hyper.d_phi == b.hyper.d_phi &&
                     a.hyper.d_f == b.hyper.d_f && a.d_x == b.d_x &&
                     a.class_count == b.class_count,
                 "compare_models: snapshot dims mismatch");

    ModelDiff diff;
    for (size_t t = 0; t < a.omegas.size(); ++t)
        diff.omega_diffs.push_back(max_abs(Matrix(a.omegas[t] - b.omegas[t])));

    if (a.has_all_classifiers && b.has_all_classifiers) {
        for (size_t t = 0; t < a.classifiers.size(); ++t)
            diff.classifier_diffs.push_back(
                max_abs(Matrix(a.classifiers[t] - b.classifiers[t])));
    } else {
        diff.classifier_diffs.push_back(
            max_abs(Matrix(a.final_classifier() - b.final_classifier())));
    }

    diff.max_diff = 0.0;
    for (double d : diff.omega_diffs) diff.max_diff = std::max(diff.max_diff, d);
    for (double d : diff.classifier_diffs) diff.max_diff = std::max(diff.max_diff, d);
    diff.within_tolerance = diff.max_diff <= tolerance;
    return diff;
}

Evaluation evaluate(const model::ModelSnapshot& snapshot,
                    const model::ProjectionSet& proj, const data::Dataset& dataset) {
    dataset.validate();
    require_dims(dataset.class_count == snapshot.class_count,
                 "evaluate: class count does not match the snapshot");
    model::InferResult inferred = model::infer(snapshot, dataset.features, proj);

    Evaluation out;
    Matrix y = data::one_hot(dataset.labels, dataset.class_count);
    out.risk_h = (y - inferred.scores).squaredNorm();

    std::vector<Index> per_class_total(static_cast<size_t>(dataset.class_count), 0);
    std::vector<Index> per_class_correct(static_cast<size_t>(dataset.class_count), 0);
    Index correct = 0;
    for (size_t i = 0; i < inferred.labels.size(); ++i) {
        const auto truth = static_cast<size_t>(dataset.labels[i]);
        ++per_class_total[truth];
        if (inferred.labels[i] == dataset.labels[i]) {
            ++per_class_correct[truth];
            ++correct;
        }
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    out.per_class_accuracy.resize(static_cast<size_t>(dataset.class_count));
    for (size_t c = 0; c < out.per_class_accuracy.size(); ++c)
        out.per_class_accuracy[c] =
            per_class_total[c] == 0
                ? std::numeric_limits<double>::quiet_NaN()
                : static_cast<double>(per_class_correct[c]) /
                      static_cast<double>(per_class_total[c]);
    return out;
}

Evaluation evaluate(const model::ModelSnapshot& snapshot, const data::Dataset& dataset) {
    const model::ProjectionSet proj =
        model::make_projections(snapshot.hyper.base_seed, snapshot.d_x, snapshot.hyper);
    return evaluate(snapshot, proj, dataset);
}

SeparabilityMetrics separability_metrics(const Matrix& phi,
                                         const std::vector<std::int32_t>& labels) {
    require_dims(static_cast<Index>(labels.size()) == phi.rows(),
                 "separability_metrics: label count mismatch");
    if (labels.empty()) throw ValidationError("separability_metrics: empty input");

    const std::int32_t max_label = *std::max_element(labels.begin(), labels.end());
    std::vector<Index> counts(static_cast<size_t>(max_label) + 1, 0);
    for (std::int32_t l : labels) {
        if (l < 0) throw ValidationError("separability_metrics: negative label");
        ++counts[static_cast<size_t>(l)];
    }
    std::vector<Index> present;
    for (size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) continue;
        if (counts[c] < 2)
            throw ValidationError("separability_metrics: class " + std::to_string(c) +
                                  " has fewer than two samples");
        present.push_back(static_cast<Index>(c));
    }
    if (present.size() < 2)
        throw ValidationError("separability_metrics: need at least two classes");

    const Index d = phi.cols();
    const Index n = phi.rows();

    Matrix means = Matrix::Zero(static_cast<Index>(present.size()), d);
    std::vector<Index> remap(counts.size(), -1);
    for (size_t c = 0; c < present.size(); ++c)
        remap[static_cast<size_t>(present[c])] = static_cast<Index>(c);
    for (Index i = 0; i < n; ++i)
        means.row(remap[static_cast<size_t>(labels[static_cast<size_t>(i)])]) += phi.row(i);
    for (size_t c = 0; c < present.size(); ++c)
        means.row(static_cast<Index>(c)) /=
            static_cast<double>(counts[static_cast<size_t>(present[c])]);

    double within_sq = 0.0;
    Matrix s_w = Matrix::Zero(d, d);
    for (Index i = 0; i < n; ++i) {
        const Index c = remap[static_cast<size_t>(labels[static_cast<size_t>(i)])];
        const Eigen::RowVectorXd dev = phi.row(i) - means.row(c);
        within_sq += dev.squaredNorm();
        s_w += dev.transpose() * dev;
    }

    Eigen::RowVectorXd global = Eigen::RowVectorXd::Zero(d);
    for (Index i = 0; i < n; ++i) global += phi.row(i);
    global /= static_cast<double>(n);

    Matrix s_b = Matrix::Zero(d, d);
    for (size_t c = 0; c < present.size(); ++c) {
        const Eigen::RowVectorXd dev = means.row(static_cast<Index>(c)) - global;
        s_b += static_cast<double>(counts[static_cast<size_t>(present[c])]) *
               (dev.transpose() * dev);
    }

    double mean_pair_sq = 0.0;
    Index pairs = 0;
    for (size_t a = 0; a < present.size(); ++a)
        for (size_t b = a + 1; b < present.size(); ++b) {
            mean_pair_sq +=
                (means.row(static_cast<Index>(a)) - means.row(static_cast<Index>(b)))
                    .squaredNorm();
            ++pairs;
        }
    mean_pair_sq /= static_cast<double>(pairs);

    SeparabilityMetrics out;
    const double trace_b = s_b.trace();
    if (mean_pair_sq <= 0.0 || trace_b <= 0.0) {
        const double inf = std::numeric_limits<double>::infinity();
        out.csr = out.ifs = out.dm = inf;
        out.degenerate = true;
        return out;
    }

    out.csr = (within_sq / static_cast<double>(n)) / mean_pair_sq;
    out.ifs = s_w.trace() / trace_b;

    // Pseudo-inverse of S_B through its spectrum (rank <= classes - 1).
    linalg::SymEig eb = linalg::sym_eig(s_b);
    const double cutoff = 1e-12 * eb.values(0);
    Matrix pinv = Matrix::Zero(d, d);
    for (Index i = 0; i < d; ++i) {
        if (eb.values(i) > cutoff)
            pinv += (1.0 / eb.values(i)) * (eb.vectors.col(i) * eb.vectors.col(i).transpose());
    }
    out.dm = (pinv * s_w).trace() / static_cast<double>(present.size() - 1);
    return out;
}

} // namespace deepafl::oracle
