#include "deepafl/fedsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "deepafl/linalg.hpp"
#include "deepafl/parallel.hpp"
#include "deepafl/serialize.hpp"

namespace deepafl::fedsim {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double gemm_flops(Index m, Index n, Index k) {
    return 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k);
}

// Rough dense symmetric eigendecomposition cost (tridiagonalization + QL with
// vectors); informational only.
double eig_flops(Index d) {
    return 9.0 * std::pow(static_cast<double>(d), 3.0);
}

Index count_correct(const Matrix& scores, const std::vector<std::int32_t>& labels) {
    Index correct = 0;
    for (Index i = 0; i < scores.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < scores.cols(); ++j)
            if (scores(i, j) > scores(i, best)) best = j;
        if (static_cast<std::int32_t>(best) == labels[static_cast<size_t>(i)]) ++correct;
    }
    return correct;
}

} // namespace

std::string serialize_packet(const CorrelationPacket& packet) {
    std::string out;
    out.append("DPKT");
    io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(packet.kind));
    io::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(packet.layer));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(packet.client_id));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(packet.auto_corr.rows()));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(packet.auto_corr.cols()));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(packet.cross_corr.rows()));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(packet.cross_corr.cols()));
    io::put_matrix(out, packet.auto_corr);
    io::put_matrix(out, packet.cross_corr);
    return out;
}

CorrelationPacket deserialize_packet(const std::string& bytes) {
    io::Reader rd(bytes, "packet");
    if (rd.get_magic() != "DPKT") throw FormatError("packet: bad magic");
    CorrelationPacket p;
    const auto kind = rd.get_le<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(PacketKind::Transform))
        throw FormatError("packet: invalid kind");
    p.kind = static_cast<PacketKind>(kind);
    p.layer = rd.get_le<std::uint16_t>();
    p.client_id = rd.get_le<std::uint32_t>();
    const auto ar = rd.get_le<std::uint32_t>();
    const auto ac = rd.get_le<std::uint32_t>();
    const auto cr = rd.get_le<std::uint32_t>();
    const auto cc = rd.get_le<std::uint32_t>();
    p.auto_corr = rd.get_matrix(static_cast<Index>(ar), static_cast<Index>(ac));
    p.cross_corr = rd.get_matrix(static_cast<Index>(cr), static_cast<Index>(cc));
    if (!rd.at_end()) throw FormatError("packet: trailing bytes");
    return p;
}

CorrelationPacket client_classifier_packet(const ClientState& state, Index layer) {
    CorrelationPacket p;
    p.kind = PacketKind::Classifier;
    p.layer = layer;
    p.client_id = state.client_id;
    p.auto_corr = state.phi.transpose() * state.phi;
    p.cross_corr = state.phi.transpose() * state.y;
    return p;
}

CorrelationPacket client_transform_packet(ClientState& state, Index layer,
                                          const Matrix& w_t, const Matrix& b_t,
                                          const model::HyperParams& hyper) {
    require_dims(state.phi.cols() == w_t.rows() && state.y.cols() == w_t.cols(),
                 "client_transform_packet: W_t dims mismatch");
    Matrix f = model::hidden_features(state.phi, b_t, hyper);
    Matrix r = state.y - state.phi * w_t;
    CorrelationPacket p;
    p.kind = PacketKind::Transform;
    p.layer = layer;
    p.client_id = state.client_id;
    p.auto_corr = f.transpose() * f;
    p.cross_corr = f.transpose() * r;
    state.f_cache = std::move(f);
    return p;
}

CorrelationPacket PlaintextSum::aggregate(std::vector<CorrelationPacket> packets) const {
    if (packets.empty()) throw ProtocolError("aggregate: no packets");
    std::sort(packets.begin(), packets.end(),
              [](const CorrelationPacket& a, const CorrelationPacket& b) {
                  return a.client_id < b.client_id;
              });
    const CorrelationPacket& first = packets.front();
    CorrelationPacket out;
    out.kind = first.kind;
    out.layer = first.layer;
    out.client_id = -1;
    out.auto_corr = Matrix::Zero(first.auto_corr.rows(), first.auto_corr.cols());
    out.cross_corr = Matrix::Zero(first.cross_corr.rows(), first.cross_corr.cols());
    Index previous_id = -1;
    for (const CorrelationPacket& p : packets) {
        if (p.kind != first.kind || p.layer != first.layer)
            throw ValidationError("aggregate: mixed packet kinds or layers");
        if (p.client_id == previous_id)
            throw ValidationError("aggregate: duplicate client id");
        previous_id = p.client_id;
        require_dims(p.auto_corr.rows() == out.auto_corr.rows() &&
                         p.auto_corr.cols() == out.auto_corr.cols() &&
                         p.cross_corr.rows() == out.cross_corr.rows() &&
                         p.cross_corr.cols() == out.cross_corr.cols(),
                     "aggregate: packet dims mismatch");
        out.auto_corr += p.auto_corr;
        out.cross_corr += p.cross_corr;
    }
    return out;
}

CorrelationPacket aggregate(std::vector<CorrelationPacket> packets) {
    return PlaintextSum{}.aggregate(std::move(packets));
}

Matrix server_solve_classifier(const Matrix& agg_g, const Matrix& agg_h, double lambda) {
    return linalg::ridge_solve_normal(agg_g, agg_h, lambda);
}

Matrix server_solve_transform(const Matrix& agg_pi, const Matrix& agg_upsilon,
                              const Matrix& w_t, double gamma) {
    return linalg::sandwich_solve_normal(agg_pi, agg_upsilon, w_t, gamma);
}

ParticipationMode participation_mode_from_name(const std::string& name) {
    if (name == "full") return ParticipationMode::Full;
    if (name == "consistent") return ParticipationMode::Consistent;
    if (name == "inconsistent") return ParticipationMode::Inconsistent;
    throw ValidationError("unknown participation mode '" + name + "'");
}

std::string participation_mode_name(ParticipationMode mode) {
    switch (mode) {
        case ParticipationMode::Full: return "full";
        case ParticipationMode::Consistent: return "consistent";
        case ParticipationMode::Inconsistent: return "inconsistent";
    }
    throw ValidationError("invalid participation mode");
}

void ParticipationPolicy::validate() const {
    if (!(eta > 0.0) || eta > 1.0)
        throw ValidationError("participation rate must be in (0, 1]");
}

std::vector<Index> select_participants(const ParticipationPolicy& policy, Index k,
                                       Index layer, Phase phase) {
    policy.validate();
    if (k < 1) throw ValidationError("select_participants: need k >= 1");
    std::vector<Index> ids(static_cast<size_t>(k));
    std::iota(ids.begin(), ids.end(), Index{0});
    if (policy.mode == ParticipationMode::Full || policy.eta == 1.0) return ids;

    const auto count = std::min<Index>(
        k, static_cast<Index>(std::ceil(policy.eta * static_cast<double>(k))));
    // Consistent mode keys both phases of a layer to the same draw.
    const std::uint64_t phase_tag =
        policy.mode == ParticipationMode::Consistent
            ? 0
            : static_cast<std::uint64_t>(phase);
    std::mt19937_64 rng(model::derive_seed(
        policy.seed, 'P', static_cast<std::uint64_t>(layer) * 2 + phase_tag));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<size_t>(count));
    std::sort(ids.begin(), ids.end());
    return ids;
}

TrainResult train_federated(const data::Dataset& dataset,
                            const data::PartitionSpec& partition,
                            const model::HyperParams& hyper,
                            const ParticipationPolicy& policy,
                            const TrainOptions& options) {
    dataset.validate();
    partition.validate(dataset.size());
    hyper.validate();
    policy.validate();
    if (options.eval_data) {
        options.eval_data->validate();
        require_dims(options.eval_data->dim() == dataset.dim() &&
                         options.eval_data->class_count == dataset.class_count,
                     "train_federated: eval split dims do not match the training data");
    }

    const Index k = partition.clients();
    const Index n = dataset.size();
    const Index c = dataset.class_count;
    const Index d_x = dataset.dim();
    const model::ProjectionSet proj = model::make_projections(hyper.base_seed, d_x, hyper);

    PlaintextSum plain;
    const Aggregator& agg = options.aggregator ? *options.aggregator : plain;

    TrainResult result;
    CostLedger& ledger = result.ledger;
    ledger.per_client.resize(static_cast<size_t>(k));
    for (Index i = 0; i < k; ++i) ledger.per_client[static_cast<size_t>(i)].client_id = i;

    const std::uint64_t classifier_payload =
        8ull * static_cast<std::uint64_t>(hyper.d_phi) *
        static_cast<std::uint64_t>(hyper.d_phi + c);
    const std::uint64_t transform_payload =
        8ull * static_cast<std::uint64_t>(hyper.d_f) *
        static_cast<std::uint64_t>(hyper.d_f + c);
    const std::uint64_t classifier_broadcast =
        8ull * static_cast<std::uint64_t>(hyper.d_phi) * static_cast<std::uint64_t>(c);
    const std::uint64_t transform_broadcast =
        8ull * static_cast<std::uint64_t>(hyper.d_f) *
        static_cast<std::uint64_t>(hyper.d_phi);

    // (Eq. 10) local zero-layer features.
    std::vector<ClientState> clients(static_cast<size_t>(k));
    const auto setup_start = Clock::now();
    parallel_for(k, [&](Index i) {
        ClientState& st = clients[static_cast<size_t>(i)];
        st.client_id = i;
        data::Dataset slice = data::subset(dataset, partition.assignments[static_cast<size_t>(i)]);
        st.labels = slice.labels;
        st.y = data::one_hot(st.labels, c);
        st.features = std::move(slice.features);
        st.phi = model::zero_layer(st.features, proj, hyper);
        ledger.per_client[static_cast<size_t>(i)].flops +=
            gemm_flops(st.features.rows(), hyper.d_phi, d_x) +
            static_cast<double>(st.features.rows() * hyper.d_phi);
    });
    ledger.update_phase_seconds += seconds_since(setup_start);

    Matrix phi_eval, y_eval;
    if (options.eval_data) {
        phi_eval = model::zero_layer(options.eval_data->features, proj, hyper);
        y_eval = data::one_hot(options.eval_data->labels, c);
    }

    std::vector<Matrix> omegas;
    std::vector<Matrix> classifiers;
    omegas.reserve(static_cast<size_t>(hyper.layers));

    for (Index t = 0; t <= hyper.layers; ++t) {
        const auto layer_start = Clock::now();
        LayerRow row;
        row.layer = t;

        // (a)+(b) classifier phase.
        const std::vector<Index> s_w =
            select_participants(policy, k, t, Phase::Classifier);
        if (s_w.empty()) throw ProtocolError("layer " + std::to_string(t) +
                                             ": no classifier-phase participants");
        std::vector<CorrelationPacket> packets(s_w.size());
        parallel_for(static_cast<Index>(s_w.size()), [&](Index i) {
            const Index id = s_w[static_cast<size_t>(i)];
            ClientState& st = clients[static_cast<size_t>(id)];
            packets[static_cast<size_t>(i)] = client_classifier_packet(st, t);
            auto& cost = ledger.per_client[static_cast<size_t>(id)];
            cost.upload_bytes += classifier_payload;
            cost.flops += gemm_flops(hyper.d_phi, hyper.d_phi, st.phi.rows()) +
                          gemm_flops(hyper.d_phi, c, st.phi.rows());
        });
        CorrelationPacket agg_cls = agg.aggregate(std::move(packets));
        Matrix w_t = server_solve_classifier(agg_cls.auto_corr, agg_cls.cross_corr,
                                             hyper.lambda);
        double server_layer_flops =
            static_cast<double>(s_w.size() - 1) *
                static_cast<double>(hyper.d_phi * (hyper.d_phi + c)) +
            std::pow(static_cast<double>(hyper.d_phi), 3.0) / 3.0 +
            gemm_flops(hyper.d_phi, c, hyper.d_phi);
        for (auto& cost : ledger.per_client) cost.download_bytes += classifier_broadcast;
        ledger.classifier_phase_seconds += seconds_since(layer_start);

        // Layer metrics over the full training split (simulator-side only).
        std::vector<double> client_h(static_cast<size_t>(k));
        std::vector<Index> client_correct(static_cast<size_t>(k));
        parallel_for(k, [&](Index i) {
            const ClientState& st = clients[static_cast<size_t>(i)];
            Matrix scores = st.phi * w_t;
            client_h[static_cast<size_t>(i)] = (st.y - scores).squaredNorm();
            client_correct[static_cast<size_t>(i)] = count_correct(scores, st.labels);
        });
        row.risk_h = std::accumulate(client_h.begin(), client_h.end(), 0.0);
        Index correct = 0;
        for (Index v : client_correct) correct += v;
        row.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        row.omega_frobenius = t == 0 ? 0.0 : omegas.back().norm();
        row.risk_g = model::regularized_risk(t, row.risk_h, w_t, omegas, hyper.lambda,
                                             hyper.gamma);
        if (options.eval_data) {
            Matrix scores = phi_eval * w_t;
            row.test_risk_h = (y_eval - scores).squaredNorm();
            row.test_accuracy =
                static_cast<double>(count_correct(scores, options.eval_data->labels)) /
                static_cast<double>(options.eval_data->size());
        }

        if (options.store_all_classifiers || t == hyper.layers)
            classifiers.push_back(w_t);

        // (c)-(e) transform phase and feature update.
        if (t < hyper.layers) {
            const Matrix& b_t = proj.b[static_cast<size_t>(t)];
            Matrix omega_next;
            if (hyper.has(model::kNoTrainableOmega)) {
                // Fixed seeded transform; nothing to upload or solve, but every
                // client still builds F for the update.
                const auto phase_start = Clock::now();
                omega_next = model::fixed_omega(hyper, t + 1);
                parallel_for(k, [&](Index i) {
                    ClientState& st = clients[static_cast<size_t>(i)];
                    st.f_cache = model::hidden_features(st.phi, b_t, hyper);
                    ledger.per_client[static_cast<size_t>(i)].flops +=
                        gemm_flops(st.phi.rows(), hyper.d_f, hyper.d_phi);
                });
                ledger.transform_phase_seconds += seconds_since(phase_start);
            } else {
                const auto phase_start = Clock::now();
                const std::vector<Index> s_o =
                    select_participants(policy, k, t, Phase::Transform);
                if (s_o.empty())
                    throw ProtocolError("layer " + std::to_string(t) +
                                        ": no transform-phase participants");
                std::vector<char> participates(static_cast<size_t>(k), 0);
                for (Index id : s_o) participates[static_cast<size_t>(id)] = 1;
                std::vector<CorrelationPacket> tpackets(static_cast<size_t>(k));
                parallel_for(k, [&](Index i) {
                    ClientState& st = clients[static_cast<size_t>(i)];
                    auto& cost = ledger.per_client[static_cast<size_t>(i)];
                    if (participates[static_cast<size_t>(i)]) {
                        tpackets[static_cast<size_t>(i)] =
                            client_transform_packet(st, t, w_t, b_t, hyper);
                        cost.upload_bytes += transform_payload;
                        cost.flops += gemm_flops(st.phi.rows(), hyper.d_f, hyper.d_phi) +
                                      gemm_flops(st.phi.rows(), c, hyper.d_phi) +
                                      gemm_flops(hyper.d_f, hyper.d_f, st.phi.rows()) +
                                      gemm_flops(hyper.d_f, c, st.phi.rows());
                    } else {
                        st.f_cache = model::hidden_features(st.phi, b_t, hyper);
                        cost.flops += gemm_flops(st.phi.rows(), hyper.d_f, hyper.d_phi);
                    }
                });
                std::vector<CorrelationPacket> uploads;
                uploads.reserve(s_o.size());
                for (Index id : s_o)
                    uploads.push_back(std::move(tpackets[static_cast<size_t>(id)]));
                CorrelationPacket agg_tr = agg.aggregate(std::move(uploads));
                omega_next = server_solve_transform(agg_tr.auto_corr, agg_tr.cross_corr,
                                                    w_t, hyper.gamma);
                server_layer_flops +=
                    static_cast<double>(s_o.size() - 1) *
                        static_cast<double>(hyper.d_f * (hyper.d_f + c)) +
                    eig_flops(hyper.d_f) + eig_flops(hyper.d_phi) +
                    gemm_flops(hyper.d_f, hyper.d_phi, c) +
                    2.0 * (gemm_flops(hyper.d_f, hyper.d_phi, hyper.d_f) +
                           gemm_flops(hyper.d_f, hyper.d_phi, hyper.d_phi));
                for (auto& cost : ledger.per_client)
                    cost.download_bytes += transform_broadcast;
                ledger.transform_phase_seconds += seconds_since(phase_start);
            }

            // (Eq. 19) feature update on every client.
            const auto update_start = Clock::now();
            parallel_for(k, [&](Index i) {
                ClientState& st = clients[static_cast<size_t>(i)];
                st.phi = model::apply_update(st.phi, st.f_cache, omega_next, hyper);
                st.f_cache.resize(0, 0);
                ledger.per_client[static_cast<size_t>(i)].flops +=
                    gemm_flops(st.phi.rows(), hyper.d_phi, hyper.d_f);
            });
            if (options.eval_data) {
                Matrix f_eval = model::hidden_features(phi_eval, b_t, hyper);
                phi_eval = model::apply_update(phi_eval, f_eval, omega_next, hyper);
            }
            ledger.update_phase_seconds += seconds_since(update_start);

            parallel_for(k, [&](Index i) {
                const ClientState& st = clients[static_cast<size_t>(i)];
                client_h[static_cast<size_t>(i)] =
                    model::empirical_risk(st.phi, w_t, st.y);
            });
            row.risk_h_after_update =
                std::accumulate(client_h.begin(), client_h.end(), 0.0);
            omegas.push_back(std::move(omega_next));
        }

        row.wall_seconds = seconds_since(layer_start);
        ledger.per_layer_server_flops.push_back(server_layer_flops);
        ledger.server_flops += server_layer_flops;
        result.trace.push_back(row);
    }

    result.snapshot.hyper = hyper;
    result.snapshot.d_x = d_x;
    result.snapshot.class_count = c;
    result.snapshot.omegas = std::move(omegas);
    result.snapshot.classifiers = std::move(classifiers);
    result.snapshot.has_all_classifiers = options.store_all_classifiers;
    result.snapshot.validate();
    return result;
}

} // namespace deepafl::fedsim
