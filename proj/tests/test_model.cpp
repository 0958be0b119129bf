#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "deepafl/linalg.hpp"
#include "deepafl/model.hpp"

using namespace deepafl;
using namespace deepafl::model;

namespace {

HyperParams tiny_hyper(Index layers = 2, Index d_phi = 4, Index d_f = 3) {
    HyperParams h;
    h.layers = layers;
    h.d_phi = d_phi;
    h.d_f = d_f;
    h.lambda = 0.5;
    h.gamma = 0.1;
    h.activation = Activation::Gelu;
    h.base_seed = 99;
    return h;
}

ModelSnapshot tiny_snapshot(Index layers = 3) {
    HyperParams h = tiny_hyper(layers);
    ModelSnapshot s;
    s.hyper = h;
    s.d_x = 5;
    s.class_count = 2;
    for (Index t = 0; t < layers; ++t)
        s.omegas.push_back(gaussian_matrix(200 + static_cast<std::uint64_t>(t), h.d_f, h.d_phi, 1.0));
    s.classifiers.push_back(gaussian_matrix(300, h.d_phi, 2, 1.0));
    return s;
}

bool bit_identical(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

} // namespace

TEST_CASE("activation values") {
    CHECK(activate_scalar(0.0, Activation::Gelu) == 0.0);
    // x * Phi_normal(1) from the standard normal CDF
    CHECK(activate_scalar(1.0, Activation::Gelu) == doctest::Approx(0.841345).epsilon(1e-6));
    CHECK(activate_scalar(-1.0, Activation::Relu) == 0.0);
    CHECK(activate_scalar(2.0, Activation::Relu) == 2.0);
    CHECK(activate_scalar(-2.0, Activation::LeakyRelu) == doctest::Approx(-0.02));
    CHECK(activate_scalar(0.25, Activation::Softshrink) == 0.0);
    CHECK(activate_scalar(1.0, Activation::Softshrink) == doctest::Approx(0.5));
    CHECK(activate_scalar(-3.0, Activation::Hardswish) == 0.0);
    CHECK(activate_scalar(3.0, Activation::Hardswish) == 3.0);
    CHECK(activate_scalar(0.7, Activation::None) == 0.7);
    CHECK(activate_scalar(1.0, Activation::Tanh) == doctest::Approx(std::tanh(1.0)));
}

TEST_CASE("activation names round-trip") {
    for (auto a : {Activation::Gelu, Activation::Relu, Activation::LeakyRelu,
                   Activation::Tanh, Activation::Hardswish, Activation::Softshrink,
                   Activation::None})
        CHECK(activation_from_name(activation_name(a)) == a);
    CHECK_THROWS_AS(activation_from_name("swish"), ValidationError);
}

TEST_CASE("projections are bit-reproducible from the seed") {
    HyperParams h = tiny_hyper(3, 8, 6);
    ProjectionSet p1 = make_projections(1234, 10, h);
    ProjectionSet p2 = make_projections(1234, 10, h);
    CHECK(bit_identical(p1.a, p2.a));
    for (size_t t = 0; t < p1.b.size(); ++t) CHECK(bit_identical(p1.b[t], p2.b[t]));

    ProjectionSet p3 = make_projections(1235, 10, h);
    CHECK_FALSE(bit_identical(p1.a, p3.a));
}

TEST_CASE("input projection columns concentrate near unit norm") {
    HyperParams h = tiny_hyper(0, 1024, 1);
    for (std::uint64_t seed : {5u, 6u, 7u}) {
        ProjectionSet p = make_projections(seed, 10000, h);
        Index in_band = 0;
        for (Index j = 0; j < p.a.cols(); ++j) {
            const double norm = p.a.col(j).norm();
            if (norm >= 0.8 && norm <= 1.2) ++in_band;
        }
        CHECK(static_cast<double>(in_band) >= 0.99 * static_cast<double>(p.a.cols()));
    }
}

TEST_CASE("IdentityB ablation replaces per-layer projections with identity") {
    HyperParams h = tiny_hyper(2, 5, 5);
    h.ablation = kIdentityB;
    ProjectionSet p = make_projections(7, 4, h);
    for (const Matrix& b : p.b) CHECK(max_abs(Matrix(b - Matrix::Identity(5, 5))) == 0.0);
}

TEST_CASE("IdentityB requires matching widths") {
    HyperParams h = tiny_hyper(1, 5, 4);
    h.ablation = kIdentityB;
    CHECK_THROWS_AS(h.validate(), ValidationError);
}

TEST_CASE("zero_layer maps the zero matrix to zero") {
    HyperParams h = tiny_hyper();
    ProjectionSet p = make_projections(3, 6, h);
    Matrix x = Matrix::Zero(4, 6);
    CHECK(max_abs(zero_layer(x, p, h)) == 0.0);
}

TEST_CASE("zero_layer with identity activation is the plain product") {
    HyperParams h = tiny_hyper(1, 4, 3);
    h.activation = Activation::None;
    ProjectionSet p = make_projections(8, 2, h);
    Matrix x(1, 2);
    x << 1.5, -2.0;
    Matrix expect = x * p.a;
    CHECK(bit_identical(zero_layer(x, p, h), expect));
    Matrix wrong(1, 3);
    wrong << 1, 2, 3;
    CHECK_THROWS_AS(zero_layer(wrong, p, h), DimensionError);
}

TEST_CASE("zero_layer keeps its activation under NoActivation") {
    HyperParams h = tiny_hyper(1, 4, 4);
    ProjectionSet p = make_projections(9, 3, h);
    Matrix x = gaussian_matrix(10, 5, 3, 1.0);
    Matrix base = zero_layer(x, p, h);
    h.ablation = kNoActivation;
    CHECK(bit_identical(zero_layer(x, p, h), base));
    // ...but the in-layer hidden features drop it
    Matrix f_act = hidden_features(base, p.b[0], tiny_hyper(1, 4, 4));
    Matrix f_plain = hidden_features(base, p.b[0], h);
    CHECK(bit_identical(f_plain, Matrix(base * p.b[0])));
    CHECK_FALSE(bit_identical(f_act, f_plain));
}

TEST_CASE("layer_step passthrough with a zero transform") {
    HyperParams h = tiny_hyper(1, 4, 3);
    ProjectionSet p = make_projections(11, 2, h);
    Matrix phi = gaussian_matrix(12, 6, 4, 1.0);
    Matrix zero = Matrix::Zero(3, 4);
    CHECK(bit_identical(layer_step(phi, p.b[0], zero, h, 0), phi));

    h.ablation = kNoSkip;
    CHECK(max_abs(layer_step(phi, p.b[0], zero, h, 0)) == 0.0);
}

TEST_CASE("layer_step matches direct arithmetic with identity activation") {
    HyperParams h = tiny_hyper(1, 2, 2);
    h.activation = Activation::None;
    Matrix phi(2, 2);
    phi << 1, 2, 3, 4;
    Matrix b(2, 2);
    b << 1, 1, 0, 1;
    Matrix omega(2, 2);
    omega << 2, 0, 1, 1;
    // F = Phi B = [[1,3],[3,7]]; F Omega = [[5,3],[13,7]]; Phi + F Omega below
    Matrix expect(2, 2);
    expect << 6, 5, 16, 11;
    CHECK(max_abs(Matrix(layer_step(phi, b, omega, h, 0) - expect)) == 0.0);
}

TEST_CASE("NoTrainableOmega ignores the supplied transform") {
    HyperParams h = tiny_hyper(2, 4, 3);
    h.ablation = kNoTrainableOmega;
    ProjectionSet p = make_projections(13, 3, h);
    Matrix phi = gaussian_matrix(14, 5, 4, 1.0);
    Matrix junk = gaussian_matrix(15, 3, 4, 100.0);
    Matrix zero = Matrix::Zero(3, 4);
    CHECK(bit_identical(layer_step(phi, p.b[0], junk, h, 0), layer_step(phi, p.b[0], zero, h, 0)));
    // distinct layers use distinct fixed transforms
    CHECK_FALSE(bit_identical(fixed_omega(h, 1), fixed_omega(h, 2)));
}

TEST_CASE("empirical risk") {
    Matrix phi = Matrix::Identity(2, 2);
    Matrix w(2, 2);
    w << 1, 1, 1, 1;
    CHECK(empirical_risk(phi, w, Matrix(phi * w)) == 0.0);

    Matrix y(2, 2);
    y << 2, 1, 0, 3;
    CHECK(empirical_risk(Matrix(Matrix::Zero(2, 2)), w, y) == doctest::Approx(y.squaredNorm()));
    // Y - Phi W = [[1,0],[-1,2]] -> 1 + 1 + 4
    CHECK(empirical_risk(phi, w, y) == doctest::Approx(6.0));
    CHECK_THROWS_AS(empirical_risk(phi, w, Matrix(Matrix::Zero(3, 2))), DimensionError);
}

TEST_CASE("regularized risk") {
    Matrix w(2, 2);
    w << 1, 1, 1, 0; // |W|^2 = 3
    Matrix omega(2, 2);
    omega << 2, 0, 0, 0; // |Omega|^2 = 4
    std::vector<Matrix> omegas = {omega};

    CHECK(regularized_risk(1, 2.0, w, omegas, 0.0, 0.0) == doctest::Approx(2.0));
    CHECK(regularized_risk(0, 2.0, w, omegas, 0.5, 0.25) == doctest::Approx(3.5));
    CHECK(regularized_risk(1, 2.0, w, omegas, 0.5, 0.25) == doctest::Approx(4.5));
    CHECK_THROWS_AS(regularized_risk(2, 2.0, w, omegas, 0.5, 0.25), ValidationError);
}

TEST_CASE("snapshot serialization round-trips bit-exactly") {
    ModelSnapshot s = tiny_snapshot(3);
    const std::string bytes = serialize_snapshot(s);
    CHECK(serialize_snapshot(s) == bytes); // deterministic encoder
    ModelSnapshot back = deserialize_snapshot(bytes);
    CHECK(back.hyper.layers == s.hyper.layers);
    CHECK(back.hyper.lambda == s.hyper.lambda);
    CHECK(back.hyper.base_seed == s.hyper.base_seed);
    CHECK(back.class_count == s.class_count);
    for (size_t t = 0; t < s.omegas.size(); ++t)
        CHECK(bit_identical(back.omegas[t], s.omegas[t]));
    CHECK(bit_identical(back.final_classifier(), s.final_classifier()));
}

TEST_CASE("snapshot corruption is rejected") {
    ModelSnapshot s = tiny_snapshot(2);
    const std::string bytes = serialize_snapshot(s);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_snapshot(bad_magic), FormatError);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(deserialize_snapshot(bad_version), FormatError);

    std::string truncated = bytes.substr(0, bytes.size() - 5);
    CHECK_THROWS_AS(deserialize_snapshot(truncated), FormatError);

    std::string flipped = bytes;
    flipped[bytes.size() - 20] ^= 0x40; // payload byte
    CHECK_THROWS_WITH_AS(deserialize_snapshot(flipped), "snapshot: checksum failure",
                         FormatError);
}

TEST_CASE("snapshot file round-trip") {
    ModelSnapshot s = tiny_snapshot(1);
    const std::string path = "snapshot_roundtrip.dafl";
    save_snapshot(s, path);
    ModelSnapshot back = load_snapshot(path);
    CHECK(bit_identical(back.omegas[0], s.omegas[0]));
    std::remove(path.c_str());
}

TEST_CASE("infer with zero depth is the zero-layer classifier") {
    HyperParams h = tiny_hyper(0, 4, 3);
    ProjectionSet p = make_projections(h.base_seed, 5, h);
    Matrix x = gaussian_matrix(400, 7, 5, 1.0);

    ModelSnapshot s;
    s.hyper = h;
    s.d_x = 5;
    s.class_count = 2;
    s.classifiers.push_back(gaussian_matrix(401, 4, 2, 1.0));

    InferResult res = infer(s, x, p);
    Matrix expect = zero_layer(x, p, h) * s.classifiers[0];
    CHECK(bit_identical(res.scores, expect));
}

TEST_CASE("interpolating model reaches full training accuracy") {
    // N == d_phi with lambda = 0: the zero-layer system is square and solvable
    HyperParams h = tiny_hyper(0, 6, 3);
    h.lambda = 0.0;
    ProjectionSet p = make_projections(h.base_seed, 4, h);
    Matrix x = gaussian_matrix(500, 6, 4, 1.0);
    std::vector<std::int32_t> labels = {0, 1, 2, 0, 1, 2};
    Matrix y = Matrix::Zero(6, 3);
    for (Index i = 0; i < 6; ++i) y(i, labels[static_cast<size_t>(i)]) = 1.0;

    Matrix phi0 = zero_layer(x, p, h);
    ModelSnapshot s;
    s.hyper = h;
    s.d_x = 4;
    s.class_count = 3;
    s.classifiers.push_back(linalg::ridge_solve(phi0, y, 0.0));

    InferResult res = infer(s, x, p);
    for (Index i = 0; i < 6; ++i)
        CHECK(res.labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)]);
}

TEST_CASE("infer rejects mismatched feature width") {
    ModelSnapshot s = tiny_snapshot(1);
    ProjectionSet p = make_projections(s.hyper.base_seed, s.d_x, s.hyper);
    Matrix wrong = gaussian_matrix(600, 3, s.d_x + 1, 1.0);
    CHECK_THROWS_AS(infer(s, wrong, p), DimensionError);
}

TEST_CASE("argmax tie-break is deterministic toward the smallest index") {
    Matrix scores(3, 3);
    scores << 1.0, 1.0, 1.0, 0.0, 2.0, 2.0, -1.0, -1.0, 0.5;
    auto labels = argmax_rows(scores);
    CHECK(labels == std::vector<std::int32_t>{0, 1, 2});
}

TEST_CASE("snapshot missing final classifier is a snapshot error") {
    ModelSnapshot s = tiny_snapshot(1);
    s.classifiers.clear();
    CHECK_THROWS_AS(s.final_classifier(), SnapshotError);
    ProjectionSet p = make_projections(s.hyper.base_seed, s.d_x, s.hyper);
    Matrix x = gaussian_matrix(700, 2, s.d_x, 1.0);
    CHECK_THROWS_AS(infer(s, x, p), SnapshotError);
}
