#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "deepafl/data.hpp"
#include "deepafl/matrix.hpp"
#include "deepafl/model.hpp"
#include "deepafl/trace.hpp"

namespace deepafl::fedsim {

/// One simulated client: a dataset slice plus its evolving features.
struct ClientState {
    Index client_id = 0;
    Matrix features; // N_k x d_x
    Matrix y;        // one-hot N_k x C
    std::vector<std::int32_t> labels;
    Matrix phi;     // N_k x d_phi, current layer features
    Matrix f_cache; // hidden features held between the transform phases
};

enum class PacketKind : std::uint8_t { Classifier = 0, Transform = 1 };

/// A client's per-layer upload. Classifier packets carry G = Phi^T Phi and
/// H = Phi^T Y; transform packets carry Pi = F^T F and Upsilon = F^T R.
/// Dimensions depend only on (d_phi, d_f, C) — never on the local sample
/// count.
struct CorrelationPacket {
    PacketKind kind = PacketKind::Classifier;
    Index layer = 0;
    Index client_id = 0;
    Matrix auto_corr;  // G or Pi (square, symmetric PSD)
    Matrix cross_corr; // H or Upsilon
};

// Wire image: magic "DPKT", u8 kind, u16 layer, u32 client_id, u32 rows/cols
// per matrix, little-endian float64 payload. Used for dumps and byte-shape
// checks; the ledger counts payload bytes only.
std::string serialize_packet(const CorrelationPacket& packet);
CorrelationPacket deserialize_packet(const std::string& bytes);

CorrelationPacket client_classifier_packet(const ClientState& state, Index layer);

/// Computes F = sigma(Phi B_t) and R = Y - Phi W_t, caches F in the state for
/// the upcoming feature update, and returns the transform packet.
CorrelationPacket client_transform_packet(ClientState& state, Index layer,
                                          const Matrix& w_t, const Matrix& b_t,
                                          const model::HyperParams& hyper);

/// The aggregation step is an interface point so secure protocols could slot
/// in; the one provided implementation is the plaintext entrywise sum in
/// ascending client-id order (fixed order keeps results bit-deterministic).
class Aggregator {
public:
    virtual ~Aggregator() = default;
    virtual CorrelationPacket aggregate(std::vector<CorrelationPacket> packets) const = 0;
};

class PlaintextSum final : public Aggregator {
public:
    CorrelationPacket aggregate(std::vector<CorrelationPacket> packets) const override;
};

/// Aggregate with the default plaintext sum.
CorrelationPacket aggregate(std::vector<CorrelationPacket> packets);

/// W_t = (G + lambda I)^{-1} H on aggregated terms.
Matrix server_solve_classifier(const Matrix& agg_g, const Matrix& agg_h, double lambda);

/// Omega_{t+1} from aggregated Pi, Upsilon and the broadcast W_t.
Matrix server_solve_transform(const Matrix& agg_pi, const Matrix& agg_upsilon,
                              const Matrix& w_t, double gamma);

enum class ParticipationMode { Full, Consistent, Inconsistent };
enum class Phase : std::uint8_t { Classifier = 0, Transform = 1 };

ParticipationMode participation_mode_from_name(const std::string& name);
std::string participation_mode_name(ParticipationMode mode);

struct ParticipationPolicy {
    double eta = 1.0; // participation rate in (0, 1]
    ParticipationMode mode = ParticipationMode::Full;
    std::uint64_t seed = 0;
    void validate() const;
};

/// Uniform random subset of ceil(eta * k) clients, ascending ids. Pure in
/// (policy, k, layer, phase): Consistent reuses the classifier-phase subset
/// for the transform phase of the same layer, Inconsistent draws each phase
/// independently, Full returns everyone.
std::vector<Index> select_participants(const ParticipationPolicy& policy, Index k,
                                       Index layer, Phase phase);

struct ClientCost {
    Index client_id = 0;
    std::uint64_t upload_bytes = 0;
    std::uint64_t download_bytes = 0;
    double flops = 0.0;
};

struct CostLedger {
    std::vector<ClientCost> per_client;
    double server_flops = 0.0;
    std::vector<double> per_layer_server_flops;
    double classifier_phase_seconds = 0.0;
    double transform_phase_seconds = 0.0;
    double update_phase_seconds = 0.0;
};

struct TrainOptions {
    bool store_all_classifiers = false;
    const data::Dataset* eval_data = nullptr; // per-layer test metrics when set
    const Aggregator* aggregator = nullptr;   // defaults to PlaintextSum
};

struct TrainResult {
    model::ModelSnapshot snapshot;
    LayerTrace trace;
    CostLedger ledger;
};

/// The layer-wise protocol: per layer t = 0..T, classifier packets ->
/// aggregate -> W_t; then for t < T transform packets -> aggregate ->
/// Omega_{t+1} -> feature update on every client. Client phases run in
/// parallel (capped by DEEPAFL_THREADS); the fixed aggregation order makes the
/// result independent of the interleaving.
TrainResult train_federated(const data::Dataset& dataset,
                            const data::PartitionSpec& partition,
                            const model::HyperParams& hyper,
                            const ParticipationPolicy& policy,
                            const TrainOptions& options = {});

} // namespace deepafl::fedsim
