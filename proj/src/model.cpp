#include "deepafl/model.hpp"

#include <zlib.h>

#include <cmath>
#include <random>

#include "deepafl/serialize.hpp"

namespace deepafl::model {

namespace {
constexpr std::uint16_t kSnapshotVersion = 1;
constexpr std::uint32_t kFlagAllClassifiers = 1u << 0;
constexpr double kTwoPi = 6.283185307179586476925286766559;
} // namespace

Activation activation_from_name(const std::string& name) {
    if (name == "gelu") return Activation::Gelu;
    if (name == "relu") return Activation::Relu;
    if (name == "leaky_relu") return Activation::LeakyRelu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "hardswish") return Activation::Hardswish;
    if (name == "softshrink") return Activation::Softshrink;
    if (name == "none") return Activation::None;
    throw ValidationError("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Gelu: return "gelu";
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::Tanh: return "tanh";
        case Activation::Hardswish: return "hardswish";
        case Activation::Softshrink: return "softshrink";
        case Activation::None: return "none";
    }
    throw ValidationError("invalid activation id");
}

void HyperParams::validate() const {
    if (layers < 0) throw ValidationError("layer count must be >= 0");
    if (d_phi <= 0 || d_f <= 0) throw ValidationError("projection widths must be positive");
    if (lambda < 0.0) throw ValidationError("lambda must be >= 0");
    if (gamma < 0.0) throw ValidationError("gamma must be >= 0");
    if (has(kIdentityB) && d_f != d_phi)
        throw ValidationError("IdentityB ablation requires d_f == d_phi");
    activation_name(activation); // rejects out-of-range ids from snapshots
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base_seed, char tag, std::uint64_t index) {
    std::uint64_t h = splitmix64(base_seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(tag)));
    return splitmix64(h ^ index);
}

Matrix gaussian_matrix(std::uint64_t seed, Index rows, Index cols, double stddev) {
    if (rows <= 0 || cols <= 0) throw ValidationError("gaussian_matrix: dims must be positive");
    std::mt19937_64 rng(seed);
    auto uniform53 = [&rng]() {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    };
    Matrix m(rows, cols);
    double* p = m.data();
    const Index n = m.size();
    for (Index i = 0; i < n; i += 2) {
        const double u1 = 1.0 - uniform53(); // in (0, 1], keeps log() finite
        const double u2 = uniform53();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        p[i] = stddev * radius * std::cos(kTwoPi * u2);
        if (i + 1 < n) p[i + 1] = stddev * radius * std::sin(kTwoPi * u2);
    }
    return m;
}

ProjectionSet make_projections(std::uint64_t base_seed, Index d_x, const HyperParams& hyper) {
    hyper.validate();
    if (d_x <= 0) throw ValidationError("make_projections: d_x must be positive");
    ProjectionSet proj;
    proj.a = gaussian_matrix(derive_seed(base_seed, 'A', 0), d_x, hyper.d_phi,
                             1.0 / std::sqrt(static_cast<double>(d_x)));
    proj.b.reserve(static_cast<size_t>(hyper.layers));
    for (Index t = 0; t < hyper.layers; ++t) {
        if (hyper.has(kIdentityB)) {
            proj.b.push_back(Matrix::Identity(hyper.d_phi, hyper.d_f));
        } else {
            proj.b.push_back(gaussian_matrix(
                derive_seed(base_seed, 'B', static_cast<std::uint64_t>(t)), hyper.d_phi,
                hyper.d_f, 1.0 / std::sqrt(static_cast<double>(hyper.d_phi))));
        }
    }
    return proj;
}

Matrix fixed_omega(const HyperParams& hyper, Index layer) {
    if (layer < 1 || layer > hyper.layers)
        throw ValidationError("fixed_omega: layer out of range");
    return gaussian_matrix(derive_seed(hyper.base_seed, 'O', static_cast<std::uint64_t>(layer)),
                           hyper.d_f, hyper.d_phi,
                           1.0 / std::sqrt(static_cast<double>(hyper.d_f)));
}

double activate_scalar(double x, Activation kind) {
    switch (kind) {
        case Activation::Gelu:
            // exact erf form x * Phi_normal(x)
            return x * 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
        case Activation::Relu:
            return x > 0.0 ? x : 0.0;
        case Activation::LeakyRelu:
            return x > 0.0 ? x : 0.01 * x;
        case Activation::Tanh:
            return std::tanh(x);
        case Activation::Hardswish: {
            const double relu6 = std::min(std::max(x + 3.0, 0.0), 6.0);
            return x * relu6 / 6.0;
        }
        case Activation::Softshrink:
            if (x > 0.5) return x - 0.5;
            if (x < -0.5) return x + 0.5;
            return 0.0;
        case Activation::None:
            return x;
    }
    throw ValidationError("invalid activation id");
}

Matrix activate(const Matrix& x, Activation kind) {
    if (kind == Activation::None) return x;
    Matrix out(x.rows(), x.cols());
    const double* src = x.data();
    double* dst = out.data();
    for (Index i = 0; i < x.size(); ++i) dst[i] = activate_scalar(src[i], kind);
    return out;
}

Matrix zero_layer(const Matrix& features, const ProjectionSet& proj, const HyperParams& hyper) {
    require_dims(features.cols() == proj.a.rows(),
                 "zero_layer: feature width does not match the input projection");
    return activate(features * proj.a, hyper.activation);
}

Matrix hidden_features(const Matrix& phi, const Matrix& b_t, const HyperParams& hyper) {
    require_dims(phi.cols() == b_t.rows(), "hidden_features: Phi/B dims mismatch");
    Matrix pre = phi * b_t;
    if (hyper.has(kNoActivation)) return pre;
    return activate(pre, hyper.activation);
}

Matrix apply_update(const Matrix& phi, const Matrix& f, const Matrix& omega,
                    const HyperParams& hyper) {
    require_dims(f.cols() == omega.rows() && omega.cols() == phi.cols() &&
                     f.rows() == phi.rows(),
                 "apply_update: F/Omega/Phi dims mismatch");
    if (hyper.has(kNoSkip)) return f * omega;
    return phi + f * omega;
}

Matrix layer_step(const Matrix& phi_t, const Matrix& b_t, const Matrix& omega_next,
                  const HyperParams& hyper, Index layer) {
    Matrix f = hidden_features(phi_t, b_t, hyper);
    if (hyper.has(kNoTrainableOmega))
        return apply_update(phi_t, f, fixed_omega(hyper, layer + 1), hyper);
    return apply_update(phi_t, f, omega_next, hyper);
}

double empirical_risk(const Matrix& phi, const Matrix& w, const Matrix& y) {
    require_dims(phi.cols() == w.rows() && phi.rows() == y.rows() && w.cols() == y.cols(),
                 "empirical_risk: dims mismatch");
    return (y - phi * w).squaredNorm();
}

double regularized_risk(Index t, double risk_h, const Matrix& w_t,
                        const std::vector<Matrix>& omegas, double lambda, double gamma) {
    if (t < 0 || static_cast<size_t>(t) > omegas.size())
        throw ValidationError("regularized_risk: layer index out of range");
    double g = risk_h + lambda * w_t.squaredNorm();
    for (Index i = 0; i < t; ++i) g += gamma * omegas[static_cast<size_t>(i)].squaredNorm();
    return g;
}

const Matrix& ModelSnapshot::final_classifier() const {
    if (classifiers.empty()) throw SnapshotError("snapshot is missing the final classifier");
    return classifiers.back();
}

const Matrix& ModelSnapshot::classifier(Index t) const {
    if (t < 0 || t > hyper.layers) throw SnapshotError("classifier index out of range");
    if (has_all_classifiers) return classifiers.at(static_cast<size_t>(t));
    if (t != hyper.layers)
        throw SnapshotError("snapshot stores only the final classifier");
    return final_classifier();
}

void ModelSnapshot::validate() const {
    hyper.validate();
    if (d_x <= 0 || class_count <= 0)
        throw SnapshotError("snapshot dims must be positive");
    if (static_cast<Index>(omegas.size()) != hyper.layers)
        throw SnapshotError("snapshot transform count does not match depth");
    const size_t expect = has_all_classifiers ? static_cast<size_t>(hyper.layers) + 1 : 1;
    if (classifiers.size() != expect)
        throw SnapshotError("snapshot classifier count is inconsistent");
    for (const Matrix& o : omegas)
        if (o.rows() != hyper.d_f || o.cols() != hyper.d_phi)
            throw SnapshotError("snapshot transform has wrong shape");
    for (const Matrix& w : classifiers)
        if (w.rows() != hyper.d_phi || w.cols() != class_count)
            throw SnapshotError("snapshot classifier has wrong shape");
}

std::vector<std::int32_t> argmax_rows(const Matrix& scores) {
    std::vector<std::int32_t> labels(static_cast<size_t>(scores.rows()));
    for (Index i = 0; i < scores.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < scores.cols(); ++j)
            if (scores(i, j) > scores(i, best)) best = j; // ties keep the smaller index
        labels[static_cast<size_t>(i)] = static_cast<std::int32_t>(best);
    }
    return labels;
}

Matrix forward_features(const ModelSnapshot& snapshot, const Matrix& features,
                        const ProjectionSet& proj) {
    snapshot.validate();
    require_dims(features.cols() == snapshot.d_x,
                 "infer: feature width does not match the snapshot");
    require_dims(static_cast<Index>(proj.b.size()) == snapshot.hyper.layers &&
                     proj.a.rows() == snapshot.d_x,
                 "infer: projection set does not match the snapshot");

    Matrix phi = zero_layer(features, proj, snapshot.hyper);
    for (Index t = 0; t < snapshot.hyper.layers; ++t)
        phi = layer_step(phi, proj.b[static_cast<size_t>(t)],
                         snapshot.omegas[static_cast<size_t>(t)], snapshot.hyper, t);
    return phi;
}

InferResult infer(const ModelSnapshot& snapshot, const Matrix& features,
                  const ProjectionSet& proj) {
    InferResult out;
    out.scores = forward_features(snapshot, features, proj) * snapshot.final_classifier();
    out.labels = argmax_rows(out.scores);
    return out;
}

std::string serialize_snapshot(const ModelSnapshot& snapshot) {
    snapshot.validate();
    std::string out;
    out.append("DAFL");
    io::put_le<std::uint16_t>(out, kSnapshotVersion);
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.d_x));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.hyper.d_phi));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.hyper.d_f));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.hyper.layers));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.class_count));
    io::put_f64(out, snapshot.hyper.lambda);
    io::put_f64(out, snapshot.hyper.gamma);
    io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(snapshot.hyper.activation));
    io::put_le<std::uint64_t>(out, snapshot.hyper.base_seed);
    io::put_le<std::uint32_t>(out, snapshot.hyper.ablation);
    io::put_le<std::uint32_t>(out, snapshot.has_all_classifiers ? kFlagAllClassifiers : 0u);

    std::string payload;
    for (const Matrix& o : snapshot.omegas) io::put_matrix(payload, o);
    for (const Matrix& w : snapshot.classifiers) io::put_matrix(payload, w);

    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    out += payload;
    io::put_le<std::uint32_t>(out, crc);
    return out;
}

ModelSnapshot deserialize_snapshot(const std::string& bytes) {
    io::Reader rd(bytes, "snapshot");
    if (rd.get_magic() != "DAFL") throw FormatError("snapshot: bad magic");
    const auto version = rd.get_le<std::uint16_t>();
    if (version != kSnapshotVersion)
        throw FormatError("snapshot: unsupported version " + std::to_string(version));

    ModelSnapshot s;
    s.d_x = rd.get_le<std::uint32_t>();
    s.hyper.d_phi = rd.get_le<std::uint32_t>();
    s.hyper.d_f = rd.get_le<std::uint32_t>();
    s.hyper.layers = rd.get_le<std::uint32_t>();
    s.class_count = rd.get_le<std::uint32_t>();
    s.hyper.lambda = rd.get_f64();
    s.hyper.gamma = rd.get_f64();
    const auto act = rd.get_le<std::uint8_t>();
    if (act > static_cast<std::uint8_t>(Activation::None))
        throw FormatError("snapshot: invalid activation id");
    s.hyper.activation = static_cast<Activation>(act);
    s.hyper.base_seed = rd.get_le<std::uint64_t>();
    s.hyper.ablation = rd.get_le<std::uint32_t>();
    const auto flags = rd.get_le<std::uint32_t>();
    s.has_all_classifiers = (flags & kFlagAllClassifiers) != 0;

    const size_t payload_start = rd.pos();
    const Index w_count = s.has_all_classifiers ? s.hyper.layers + 1 : 1;
    const size_t expected_payload =
        sizeof(double) * (static_cast<size_t>(s.hyper.layers) *
                              static_cast<size_t>(s.hyper.d_f) *
                              static_cast<size_t>(s.hyper.d_phi) +
                          static_cast<size_t>(w_count) *
                              static_cast<size_t>(s.hyper.d_phi) *
                              static_cast<size_t>(s.class_count));
    if (rd.remaining() != expected_payload + sizeof(std::uint32_t))
        throw FormatError("snapshot: payload size mismatch");

    for (Index t = 0; t < s.hyper.layers; ++t)
        s.omegas.push_back(rd.get_matrix(s.hyper.d_f, s.hyper.d_phi));
    for (Index i = 0; i < w_count; ++i)
        s.classifiers.push_back(rd.get_matrix(s.hyper.d_phi, s.class_count));

    const auto stored_crc = rd.get_le<std::uint32_t>();
    const auto actual_crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data() + payload_start),
              static_cast<uInt>(expected_payload)));
    if (stored_crc != actual_crc) throw FormatError("snapshot: checksum failure");

    s.validate();
    return s;
}

void save_snapshot(const ModelSnapshot& snapshot, const std::string& path) {
    io::write_file(path, serialize_snapshot(snapshot));
}

ModelSnapshot load_snapshot(const std::string& path) {
    return deserialize_snapshot(io::read_file(path));
}

} // namespace deepafl::model
