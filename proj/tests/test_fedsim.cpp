#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "deepafl/fedsim.hpp"
#include "deepafl/linalg.hpp"
#include "deepafl/model.hpp"
#include "deepafl/oracle.hpp"

using namespace deepafl;
using namespace deepafl::fedsim;
using model::gaussian_matrix;

namespace {

ClientState make_state(Index id, const Matrix& phi, const Matrix& y) {
    ClientState st;
    st.client_id = id;
    st.phi = phi;
    st.y = y;
    return st;
}

model::HyperParams small_hyper(Index layers) {
    model::HyperParams h;
    h.layers = layers;
    h.d_phi = 8;
    h.d_f = 8;
    h.lambda = 0.5;
    h.gamma = 0.05;
    h.base_seed = 2024;
    return h;
}

data::Dataset small_dataset(Index n = 90, std::uint64_t seed = 5) {
    return data::gen_synthetic(data::SyntheticKind::RandomTeacher, n, 6, 3, seed);
}

} // namespace

TEST_CASE("classifier packet on the identity design") {
    Matrix id = Matrix::Identity(2, 2);
    ClientState st = make_state(0, id, id);
    CorrelationPacket p = client_classifier_packet(st, 0);
    CHECK(max_abs(Matrix(p.auto_corr - id)) == 0.0);
    CHECK(max_abs(Matrix(p.cross_corr - id)) == 0.0);
}

TEST_CASE("classifier packet single-sample outer product") {
    Matrix phi(1, 2);
    phi << 1, 2;
    Matrix y(1, 2);
    y << 1, 0;
    CorrelationPacket p = client_classifier_packet(make_state(0, phi, y), 0);
    Matrix g(2, 2);
    g << 1, 2, 2, 4;
    Matrix h(2, 2);
    h << 1, 0, 2, 0;
    CHECK(max_abs(Matrix(p.auto_corr - g)) == 0.0);
    CHECK(max_abs(Matrix(p.cross_corr - h)) == 0.0);
}

TEST_CASE("classifier packet equals a direct recomputation bitwise") {
    Matrix phi = gaussian_matrix(1, 12, 5, 1.0);
    Matrix y = gaussian_matrix(2, 12, 3, 1.0);
    CorrelationPacket p = client_classifier_packet(make_state(0, phi, y), 2);
    Matrix g = phi.transpose() * phi;
    CHECK(std::memcmp(p.auto_corr.data(), g.data(),
                      sizeof(double) * static_cast<size_t>(g.size())) == 0);
}

TEST_CASE("aggregation sums entrywise and ignores list order") {
    Matrix id = Matrix::Identity(3, 3);
    CorrelationPacket a = client_classifier_packet(make_state(0, id, id), 1);
    CorrelationPacket b = client_classifier_packet(make_state(1, id, id), 1);

    CorrelationPacket sum = aggregate({a, b});
    CHECK(max_abs(Matrix(sum.auto_corr - 2.0 * id)) == 0.0);

    CorrelationPacket swapped = aggregate({b, a});
    CHECK(std::memcmp(sum.auto_corr.data(), swapped.auto_corr.data(),
                      sizeof(double) * 9) == 0);
}

TEST_CASE("splitting a dataset does not change the aggregate") {
    Matrix phi = gaussian_matrix(11, 30, 6, 1.0);
    Matrix y = gaussian_matrix(12, 30, 2, 1.0);
    CorrelationPacket whole = client_classifier_packet(make_state(0, phi, y), 0);

    std::vector<CorrelationPacket> parts;
    const Index cuts[4] = {0, 7, 19, 30};
    for (int i = 0; i < 3; ++i) {
        Matrix phi_part = phi.middleRows(cuts[i], cuts[i + 1] - cuts[i]);
        Matrix y_part = y.middleRows(cuts[i], cuts[i + 1] - cuts[i]);
        parts.push_back(client_classifier_packet(make_state(i, phi_part, y_part), 0));
    }
    CorrelationPacket summed = aggregate(std::move(parts));
    CHECK(max_abs(Matrix(summed.auto_corr - whole.auto_corr)) <= 1e-9);
    CHECK(max_abs(Matrix(summed.cross_corr - whole.cross_corr)) <= 1e-9);
}

TEST_CASE("aggregation rejects mixed inputs") {
    Matrix id = Matrix::Identity(2, 2);
    CorrelationPacket a = client_classifier_packet(make_state(0, id, id), 0);
    CorrelationPacket b = client_classifier_packet(make_state(1, id, id), 1);
    CHECK_THROWS_AS(aggregate({a, b}), ValidationError);

    CorrelationPacket c = client_classifier_packet(
        make_state(1, Matrix(Matrix::Identity(3, 3)), Matrix(Matrix::Identity(3, 3))), 0);
    CHECK_THROWS_AS(aggregate({a, c}), DimensionError);
    CHECK_THROWS_AS(aggregate({}), ProtocolError);
}

TEST_CASE("server classifier solve") {
    Matrix id = Matrix::Identity(2, 2);
    CHECK(max_abs(Matrix(server_solve_classifier(id, id, 0.0) - id)) <= 1e-12);

    Matrix g(1, 1), h(1, 1);
    g << 5;
    h << 5;
    CHECK(server_solve_classifier(g, h, 5.0)(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("federated classifier equals the centralized ridge solution") {
    Matrix phi = gaussian_matrix(21, 40, 7, 1.0);
    Matrix y = gaussian_matrix(22, 40, 3, 1.0);
    std::vector<CorrelationPacket> parts;
    parts.push_back(client_classifier_packet(
        make_state(0, Matrix(phi.topRows(15)), Matrix(y.topRows(15))), 0));
    parts.push_back(client_classifier_packet(
        make_state(1, Matrix(phi.bottomRows(25)), Matrix(y.bottomRows(25))), 0));
    CorrelationPacket agg_p = aggregate(std::move(parts));
    Matrix w_fed = server_solve_classifier(agg_p.auto_corr, agg_p.cross_corr, 0.7);
    Matrix w_central = linalg::ridge_solve(phi, y, 0.7);
    CHECK(max_abs(Matrix(w_fed - w_central)) <= 1e-9);
}

TEST_CASE("transform packet hand cases") {
    model::HyperParams h = small_hyper(1);
    h.activation = model::Activation::None;
    h.d_phi = 3;
    h.d_f = 3;

    Matrix id = Matrix::Identity(3, 3);
    // W = 0: residual is Y itself, Pi = I, Upsilon = Y
    ClientState st = make_state(0, id, id);
    CorrelationPacket p =
        client_transform_packet(st, 0, Matrix(Matrix::Zero(3, 3)), id, h);
    CHECK(max_abs(Matrix(p.auto_corr - id)) == 0.0);
    CHECK(max_abs(Matrix(p.cross_corr - id)) == 0.0);
    CHECK(st.f_cache.rows() == 3); // cached for the feature update

    // exact interpolator: residual (and so Upsilon) vanishes
    Matrix w = linalg::ridge_solve(id, id, 0.0);
    ClientState st2 = make_state(0, id, id);
    CorrelationPacket p2 = client_transform_packet(st2, 0, w, id, h);
    CHECK(max_abs(p2.cross_corr) <= 1e-12);
}

TEST_CASE("transform packet equals a direct recomputation bitwise") {
    model::HyperParams h = small_hyper(1);
    h.d_phi = 5;
    h.d_f = 4;
    Matrix phi = gaussian_matrix(31, 20, 5, 1.0);
    Matrix y = gaussian_matrix(32, 20, 2, 1.0);
    Matrix w = gaussian_matrix(33, 5, 2, 1.0);
    Matrix b = gaussian_matrix(34, 5, 4, 1.0);

    ClientState st = make_state(0, phi, y);
    CorrelationPacket p = client_transform_packet(st, 0, w, b, h);

    Matrix f = model::hidden_features(phi, b, h);
    Matrix pi = f.transpose() * f;
    Matrix upsilon = f.transpose() * (y - phi * w);
    CHECK(std::memcmp(p.auto_corr.data(), pi.data(),
                      sizeof(double) * static_cast<size_t>(pi.size())) == 0);
    // the recomputation here goes through a differently-inlined kernel, so
    // allow last-bit noise on the residual product
    CHECK(max_abs(Matrix(p.cross_corr - upsilon)) <= 1e-13);
}

TEST_CASE("server transform solve") {
    Matrix pi = Matrix::Identity(4, 4);
    Matrix upsilon = Matrix::Zero(4, 2);
    Matrix w = gaussian_matrix(41, 3, 2, 1.0);
    CHECK(max_abs(server_solve_transform(pi, upsilon, w, 0.1)) == 0.0);

    // single client: identical to the pooled closed form
    Matrix f = gaussian_matrix(42, 25, 4, 1.0);
    Matrix r = gaussian_matrix(43, 25, 2, 1.0);
    Matrix omega_direct = linalg::sandwich_solve(f, r, w, 0.2);
    Matrix omega_served = server_solve_transform(Matrix(f.transpose() * f),
                                                 Matrix(f.transpose() * r), w, 0.2);
    CHECK(max_abs(Matrix(omega_direct - omega_served)) <= 1e-10);
}

TEST_CASE("two-client transform solve equals the pooled closed form") {
    Matrix f = gaussian_matrix(51, 30, 5, 1.0);
    Matrix r = gaussian_matrix(52, 30, 3, 1.0);
    Matrix w = gaussian_matrix(53, 4, 3, 1.0);

    auto packet = [&](Index id, Index begin, Index rows) {
        CorrelationPacket p;
        p.kind = PacketKind::Transform;
        p.layer = 0;
        p.client_id = id;
        Matrix fp = f.middleRows(begin, rows);
        Matrix rp = r.middleRows(begin, rows);
        p.auto_corr = fp.transpose() * fp;
        p.cross_corr = fp.transpose() * rp;
        return p;
    };
    CorrelationPacket agg_t = aggregate({packet(0, 0, 12), packet(1, 12, 18)});
    Matrix omega_fed = server_solve_transform(agg_t.auto_corr, agg_t.cross_corr, w, 0.1);
    Matrix omega_central = linalg::sandwich_solve(f, r, w, 0.1);
    CHECK(max_abs(Matrix(omega_fed - omega_central)) <= 1e-9);
}

TEST_CASE("participant selection") {
    ParticipationPolicy full;
    std::vector<Index> everyone(10);
    std::iota(everyone.begin(), everyone.end(), Index{0});
    CHECK(select_participants(full, 10, 3, Phase::Classifier) == everyone);

    ParticipationPolicy half;
    half.eta = 0.5;
    half.mode = ParticipationMode::Consistent;
    half.seed = 77;
    for (Index t = 0; t < 5; ++t) {
        auto s_w = select_participants(half, 100, t, Phase::Classifier);
        auto s_o = select_participants(half, 100, t, Phase::Transform);
        CHECK(s_w.size() == 50);
        CHECK(s_w == s_o); // one subset per layer in consistent mode
    }

    ParticipationPolicy indep = half;
    indep.mode = ParticipationMode::Inconsistent;
    bool any_difference = false;
    for (Index t = 0; t < 5; ++t) {
        auto s_w = select_participants(indep, 100, t, Phase::Classifier);
        auto s_o = select_participants(indep, 100, t, Phase::Transform);
        CHECK(s_w.size() == 50);
        if (s_w != s_o) any_difference = true;
        CHECK(s_w == select_participants(indep, 100, t, Phase::Classifier));
    }
    CHECK(any_difference);

    ParticipationPolicy bad;
    bad.eta = 0.0;
    CHECK_THROWS_AS(select_participants(bad, 10, 0, Phase::Classifier), ValidationError);
}

TEST_CASE("depth-zero training is a single classifier solve") {
    data::Dataset ds = small_dataset();
    model::HyperParams h = small_hyper(0);
    TrainResult res = oracle::train_centralized(ds, h);
    CHECK(res.trace.size() == 1);
    CHECK(res.snapshot.omegas.empty());
    CHECK(res.snapshot.classifiers.size() == 1);
    CHECK(res.trace[0].risk_h >= 0.0);
}

TEST_CASE("single-client training collapses to the centralized run bit-for-bit") {
    data::Dataset ds = small_dataset();
    model::HyperParams h = small_hyper(3);

    data::PartitionSpec one = data::partition_uniform(ds, 1, 123);
    // partition_uniform shuffles rows; rebuild the identity assignment so both
    // runs see the same sample order
    std::iota(one.assignments[0].begin(), one.assignments[0].end(), Index{0});

    ParticipationPolicy full;
    TrainResult fed = fedsim::train_federated(ds, one, h, full);
    TrainResult central = oracle::train_centralized(ds, h);
    CHECK(model::serialize_snapshot(fed.snapshot) ==
          model::serialize_snapshot(central.snapshot));
}

TEST_CASE("training is deterministic across runs") {
    data::Dataset ds = small_dataset();
    model::HyperParams h = small_hyper(2);
    data::PartitionSpec parts = data::partition_dirichlet(ds, 3, 0.5, 7);
    ParticipationPolicy full;
    TrainResult a = fedsim::train_federated(ds, parts, h, full);
    TrainResult b = fedsim::train_federated(ds, parts, h, full);
    CHECK(model::serialize_snapshot(a.snapshot) == model::serialize_snapshot(b.snapshot));
    for (size_t t = 0; t < a.trace.size(); ++t) {
        CHECK(a.trace[t].risk_h == b.trace[t].risk_h);
        CHECK(a.trace[t].train_accuracy == b.trace[t].train_accuracy);
    }
}

TEST_CASE("heterogeneous partitions reproduce the centralized weights") {
    data::Dataset ds = small_dataset(120, 9);
    model::HyperParams h = small_hyper(4);
    fedsim::TrainOptions opts;
    opts.store_all_classifiers = true;
    TrainResult central = oracle::train_centralized(ds, h, opts);

    ParticipationPolicy full;
    for (auto spec : {data::partition_dirichlet(ds, 5, 0.1, 3),
                      data::partition_sharding(ds, 5, 2, 3),
                      data::partition_uniform(ds, 10, 3)}) {
        TrainResult fed = fedsim::train_federated(ds, spec, h, full, opts);
        oracle::ModelDiff diff = oracle::compare_models(central.snapshot, fed.snapshot);
        CHECK(diff.within_tolerance);
        CHECK(diff.max_diff <= 1e-8);
    }
}

TEST_CASE("packet byte image is independent of the local sample count") {
    model::HyperParams h = small_hyper(1);
    h.d_phi = 6;
    Matrix phi_small = gaussian_matrix(61, 4, 6, 1.0);
    Matrix y_small = gaussian_matrix(62, 4, 2, 1.0);
    Matrix phi_large = gaussian_matrix(63, 400, 6, 1.0);
    Matrix y_large = gaussian_matrix(64, 400, 2, 1.0);

    const std::string small_bytes =
        serialize_packet(client_classifier_packet(make_state(0, phi_small, y_small), 0));
    const std::string large_bytes =
        serialize_packet(client_classifier_packet(make_state(1, phi_large, y_large), 0));
    CHECK(small_bytes.size() == large_bytes.size());

    CorrelationPacket back = deserialize_packet(small_bytes);
    CHECK(back.client_id == 0);
    CHECK(back.kind == PacketKind::Classifier);
    CHECK(max_abs(Matrix(back.auto_corr - phi_small.transpose() * phi_small)) == 0.0);

    std::string corrupt = small_bytes.substr(0, small_bytes.size() - 3);
    CHECK_THROWS_AS(deserialize_packet(corrupt), FormatError);
}

TEST_CASE("upload accounting matches the packet payload sizes exactly") {
    data::Dataset ds = small_dataset(60, 13);
    model::HyperParams h = small_hyper(2);
    h.d_phi = 8;
    h.d_f = 5;
    data::PartitionSpec parts = data::partition_uniform(ds, 3, 1);
    ParticipationPolicy full;
    TrainResult res = fedsim::train_federated(ds, parts, h, full);

    const std::uint64_t c = 3;
    const std::uint64_t per_layer_classifier = 8 * (8 * 8 + 8 * c);
    const std::uint64_t per_layer_transform = 8 * (5 * 5 + 5 * c);
    // layers 0 and 1 run both phases, the final layer only the classifier one
    const std::uint64_t expect_upload =
        3 * per_layer_classifier + 2 * per_layer_transform;
    const std::uint64_t expect_download = 3 * 8 * (8 * c) + 2 * 8 * (5 * 8);
    for (const auto& cost : res.ledger.per_client) {
        CHECK(cost.upload_bytes == expect_upload);
        CHECK(cost.download_bytes == expect_download);
    }
}

TEST_CASE("client feature rows stay constant across layers") {
    data::Dataset ds = small_dataset(45, 3);
    model::HyperParams h = small_hyper(3);
    data::PartitionSpec parts = data::partition_dirichlet(ds, 3, 0.4, 5);
    ParticipationPolicy full;
    // trains fine end-to-end; Eq. 19 preserves row counts or dims would break
    TrainResult res = fedsim::train_federated(ds, parts, h, full);
    CHECK(res.trace.size() == 4);
    CHECK(res.snapshot.omegas.size() == 3);
}
