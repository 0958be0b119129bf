// deepafl: batch experiment runner for the analytic federated-learning engine.
// Subcommands: gen-synth, partition, train, eval, oracle-check.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepafl/data.hpp"
#include "deepafl/fedsim.hpp"
#include "deepafl/linalg.hpp"
#include "deepafl/model.hpp"
#include "deepafl/oracle.hpp"
#include "deepafl/serialize.hpp"

using json = nlohmann::json;
using namespace deepafl;

namespace {

constexpr int kMetricsSchemaVersion = 1;

void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ValidationError("config: unknown key '" + key + "' in " + where);
}

// ---------------------------------------------------------------------------
// Experiment configuration (train subcommand).
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    data::SyntheticKind kind = data::SyntheticKind::ConcentricRings;
    Index n = 2000;
    Index d = 64;
    Index c = 10;
    std::uint64_t seed = 0;
    Index test_n = 0; // extra rows generated and held out for evaluation
};

struct ExperimentConfig {
    std::optional<SyntheticSpec> synthetic;
    std::string features_path, labels_path;
    std::string test_features_path, test_labels_path;

    Index clients = 10;
    data::PartitionScheme scheme = data::PartitionScheme::Dirichlet;
    double alpha = 0.1;
    Index shards_per_client = 2;
    std::uint64_t partition_seed = 0;
    std::string partition_file;

    model::HyperParams hyper; // desk-scale defaults from the struct

    fedsim::ParticipationPolicy participation;

    double noise_tau = 0.0;
    std::uint64_t noise_seed = 0;

    bool centralized = false;
    bool store_all_classifiers = false;
    std::string output_dir = "out";
};

std::uint32_t ablation_from_name(const std::string& name) {
    if (name == "noskip") return model::kNoSkip;
    if (name == "idb") return model::kIdentityB;
    if (name == "noact") return model::kNoActivation;
    if (name == "noomega") return model::kNoTrainableOmega;
    throw ValidationError("unknown ablation '" + name + "'");
}

std::vector<std::string> ablation_names(std::uint32_t mask) {
    std::vector<std::string> names;
    if (mask & model::kNoSkip) names.push_back("noskip");
    if (mask & model::kIdentityB) names.push_back("idb");
    if (mask & model::kNoActivation) names.push_back("noact");
    if (mask & model::kNoTrainableOmega) names.push_back("noomega");
    return names;
}

ExperimentConfig config_from_json(const json& doc) {
    ExperimentConfig cfg;
    reject_unknown_keys(doc,
                        {"data", "test_data", "clients", "partition", "hyper",
                         "participation", "noise", "centralized",
                         "store_all_classifiers", "output_dir"},
                        "top level");

    const json& dsrc = doc.at("data");
    if (dsrc.contains("synthetic")) {
        reject_unknown_keys(dsrc, {"synthetic"}, "data");
        const json& synth = dsrc["synthetic"];
        reject_unknown_keys(synth, {"kind", "n", "d", "c", "seed", "test_n"}, "data.synthetic");
        SyntheticSpec spec;
        spec.kind = data::synthetic_kind_from_name(synth.at("kind").get<std::string>());
        spec.n = synth.at("n").get<Index>();
        spec.d = synth.at("d").get<Index>();
        spec.c = synth.at("c").get<Index>();
        if (synth.contains("seed")) spec.seed = synth["seed"].get<std::uint64_t>();
        if (synth.contains("test_n")) spec.test_n = synth["test_n"].get<Index>();
        cfg.synthetic = spec;
    } else {
        reject_unknown_keys(dsrc, {"features", "labels"}, "data");
        cfg.features_path = dsrc.at("features").get<std::string>();
        cfg.labels_path = dsrc.at("labels").get<std::string>();
    }

    if (doc.contains("test_data")) {
        reject_unknown_keys(doc["test_data"], {"features", "labels"}, "test_data");
        cfg.test_features_path = doc["test_data"].at("features").get<std::string>();
        cfg.test_labels_path = doc["test_data"].at("labels").get<std::string>();
    }

    if (doc.contains("clients")) cfg.clients = doc["clients"].get<Index>();

    if (doc.contains("partition")) {
        const json& part = doc["partition"];
        if (part.contains("file")) {
            reject_unknown_keys(part, {"file"}, "partition");
            cfg.partition_file = part["file"].get<std::string>();
        } else {
            reject_unknown_keys(part, {"scheme", "alpha", "shards_per_client", "seed"},
                                "partition");
            cfg.scheme = data::partition_scheme_from_name(part.at("scheme").get<std::string>());
            if (part.contains("alpha")) cfg.alpha = part["alpha"].get<double>();
            if (part.contains("shards_per_client"))
                cfg.shards_per_client = part["shards_per_client"].get<Index>();
            if (part.contains("seed")) cfg.partition_seed = part["seed"].get<std::uint64_t>();
        }
    }

    if (doc.contains("hyper")) {
        const json& hyper = doc["hyper"];
        reject_unknown_keys(hyper,
                            {"layers", "d_phi", "d_f", "lambda", "gamma", "activation",
                             "seed", "ablations"},
                            "hyper");
        if (hyper.contains("layers")) cfg.hyper.layers = hyper["layers"].get<Index>();
        if (hyper.contains("d_phi")) cfg.hyper.d_phi = hyper["d_phi"].get<Index>();
        if (hyper.contains("d_f")) cfg.hyper.d_f = hyper["d_f"].get<Index>();
        if (hyper.contains("lambda")) cfg.hyper.lambda = hyper["lambda"].get<double>();
        if (hyper.contains("gamma")) cfg.hyper.gamma = hyper["gamma"].get<double>();
        if (hyper.contains("activation"))
            cfg.hyper.activation =
                model::activation_from_name(hyper["activation"].get<std::string>());
        if (hyper.contains("seed")) cfg.hyper.base_seed = hyper["seed"].get<std::uint64_t>();
        if (hyper.contains("ablations"))
            for (const auto& name : hyper["ablations"])
                cfg.hyper.ablation |= ablation_from_name(name.get<std::string>());
    }

    if (doc.contains("participation")) {
        const json& part = doc["participation"];
        reject_unknown_keys(part, {"mode", "eta", "seed"}, "participation");
        if (part.contains("mode"))
            cfg.participation.mode =
                fedsim::participation_mode_from_name(part["mode"].get<std::string>());
        if (part.contains("eta")) cfg.participation.eta = part["eta"].get<double>();
        if (part.contains("seed"))
            cfg.participation.seed = part["seed"].get<std::uint64_t>();
    }

    if (doc.contains("noise")) {
        const json& noise = doc["noise"];
        reject_unknown_keys(noise, {"tau", "seed"}, "noise");
        if (noise.contains("tau")) cfg.noise_tau = noise["tau"].get<double>();
        if (noise.contains("seed")) cfg.noise_seed = noise["seed"].get<std::uint64_t>();
    }

    if (doc.contains("centralized")) cfg.centralized = doc["centralized"].get<bool>();
    if (doc.contains("store_all_classifiers"))
        cfg.store_all_classifiers = doc["store_all_classifiers"].get<bool>();
    if (doc.contains("output_dir")) cfg.output_dir = doc["output_dir"].get<std::string>();
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json doc;
    if (cfg.synthetic) {
        doc["data"]["synthetic"] = {
            {"kind", data::synthetic_kind_name(cfg.synthetic->kind)},
            {"n", cfg.synthetic->n},
            {"d", cfg.synthetic->d},
            {"c", cfg.synthetic->c},
            {"seed", cfg.synthetic->seed},
            {"test_n", cfg.synthetic->test_n}};
    } else {
        doc["data"] = {{"features", cfg.features_path}, {"labels", cfg.labels_path}};
    }
    if (!cfg.test_features_path.empty())
        doc["test_data"] = {{"features", cfg.test_features_path},
                            {"labels", cfg.test_labels_path}};
    doc["clients"] = cfg.clients;
    if (!cfg.partition_file.empty()) {
        doc["partition"] = {{"file", cfg.partition_file}};
    } else {
        json part = {{"scheme", data::partition_scheme_name(cfg.scheme)},
                     {"seed", cfg.partition_seed}};
        if (cfg.scheme == data::PartitionScheme::Dirichlet) part["alpha"] = cfg.alpha;
        if (cfg.scheme == data::PartitionScheme::Sharding)
            part["shards_per_client"] = cfg.shards_per_client;
        doc["partition"] = part;
    }
    doc["hyper"] = {{"layers", cfg.hyper.layers},
                    {"d_phi", cfg.hyper.d_phi},
                    {"d_f", cfg.hyper.d_f},
                    {"lambda", cfg.hyper.lambda},
                    {"gamma", cfg.hyper.gamma},
                    {"activation", model::activation_name(cfg.hyper.activation)},
                    {"seed", cfg.hyper.base_seed},
                    {"ablations", ablation_names(cfg.hyper.ablation)}};
    doc["participation"] = {{"mode", fedsim::participation_mode_name(cfg.participation.mode)},
                            {"eta", cfg.participation.eta},
                            {"seed", cfg.participation.seed}};
    doc["noise"] = {{"tau", cfg.noise_tau}, {"seed", cfg.noise_seed}};
    doc["centralized"] = cfg.centralized;
    doc["store_all_classifiers"] = cfg.store_all_classifiers;
    doc["output_dir"] = cfg.output_dir;
    return doc;
}

json trace_to_json(const LayerTrace& trace) {
    json rows = json::array();
    for (const LayerRow& row : trace) {
        json r = {{"layer", row.layer},
                  {"risk_h", row.risk_h},
                  {"risk_g", row.risk_g},
                  {"train_accuracy", row.train_accuracy},
                  {"omega_frobenius", row.omega_frobenius}};
        if (std::isfinite(row.test_accuracy)) {
            r["test_accuracy"] = row.test_accuracy;
            r["test_risk_h"] = row.test_risk_h;
        }
        if (std::isfinite(row.risk_h_after_update))
            r["risk_h_after_update"] = row.risk_h_after_update;
        rows.push_back(r);
    }
    return rows;
}

json ledger_to_json(const fedsim::CostLedger& ledger, bool with_timings) {
    json clients = json::array();
    for (const auto& cost : ledger.per_client)
        clients.push_back({{"id", cost.client_id},
                           {"upload_bytes", cost.upload_bytes},
                           {"download_bytes", cost.download_bytes},
                           {"flops", cost.flops}});
    json doc = {{"clients", clients},
                {"server_flops", ledger.server_flops},
                {"per_layer_server_flops", ledger.per_layer_server_flops}};
    if (with_timings)
        doc["timings"] = {{"classifier_phase_seconds", ledger.classifier_phase_seconds},
                          {"transform_phase_seconds", ledger.transform_phase_seconds},
                          {"update_phase_seconds", ledger.update_phase_seconds}};
    return doc;
}

struct LoadedData {
    data::Dataset train;
    std::optional<data::Dataset> test;
};

LoadedData load_experiment_data(const ExperimentConfig& cfg) {
    LoadedData out;
    if (cfg.synthetic) {
        const SyntheticSpec& s = *cfg.synthetic;
        if (s.test_n > 0) {
            // one generator call so train and test share the geometry, then a
            // head/tail split (labels interleave, so both stay balanced)
            data::Dataset full =
                data::gen_synthetic(s.kind, s.n + s.test_n, s.d, s.c, s.seed);
            std::vector<Index> head(static_cast<size_t>(s.n));
            std::iota(head.begin(), head.end(), Index{0});
            std::vector<Index> tail(static_cast<size_t>(s.test_n));
            std::iota(tail.begin(), tail.end(), s.n);
            out.train = data::subset(full, head);
            out.test = data::subset(full, tail);
        } else {
            out.train = data::gen_synthetic(s.kind, s.n, s.d, s.c, s.seed);
        }
    } else {
        out.train = data::load_dataset(cfg.features_path, cfg.labels_path);
    }
    if (!cfg.test_features_path.empty())
        out.test = data::load_dataset(cfg.test_features_path, cfg.test_labels_path);
    if (cfg.noise_tau > 0.0)
        out.train = data::flip_labels(out.train, cfg.noise_tau, cfg.noise_seed);
    return out;
}

data::PartitionSpec build_partition(const ExperimentConfig& cfg, const data::Dataset& ds) {
    if (!cfg.partition_file.empty())
        return data::partition_from_json(io::read_file(cfg.partition_file), ds.size());
    switch (cfg.scheme) {
        case data::PartitionScheme::Dirichlet:
            return data::partition_dirichlet(ds, cfg.clients, cfg.alpha, cfg.partition_seed);
        case data::PartitionScheme::Sharding:
            return data::partition_sharding(ds, cfg.clients, cfg.shards_per_client,
                                            cfg.partition_seed);
        case data::PartitionScheme::Uniform:
            return data::partition_uniform(ds, cfg.clients, cfg.partition_seed);
    }
    throw ValidationError("invalid partition scheme");
}

void print_class_histograms(const data::PartitionSpec& spec, const data::Dataset& ds) {
    for (size_t client = 0; client < spec.assignments.size(); ++client) {
        std::vector<Index> hist(static_cast<size_t>(ds.class_count), 0);
        for (Index idx : spec.assignments[client])
            ++hist[static_cast<size_t>(ds.labels[static_cast<size_t>(idx)])];
        std::printf("client %3zu (%5zu samples):", client, spec.assignments[client].size());
        for (Index count : hist) std::printf(" %4" PRId64, static_cast<std::int64_t>(count));
        std::printf("\n");
    }
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

int cmd_gen_synth(const std::string& kind, Index n, Index d, Index c,
                  std::uint64_t seed, const std::string& out_stem) {
    data::Dataset ds = data::gen_synthetic(data::synthetic_kind_from_name(kind), n, d, c, seed);
    const std::string features = out_stem + ".features.fmx";
    const std::string labels = out_stem + ".labels.lbl";
    data::save_dataset(ds, features, labels);

    std::vector<Index> hist(static_cast<size_t>(c), 0);
    for (std::int32_t l : ds.labels) ++hist[static_cast<size_t>(l)];
    std::printf("generated %s: %" PRId64 " samples, %" PRId64 " features, %" PRId64
                " classes (seed %" PRIu64 ")\n",
                kind.c_str(), static_cast<std::int64_t>(n), static_cast<std::int64_t>(d),
                static_cast<std::int64_t>(c), seed);
    std::printf("per-class counts:");
    for (Index count : hist) std::printf(" %" PRId64, static_cast<std::int64_t>(count));
    std::printf("\nwrote %s and %s\n", features.c_str(), labels.c_str());
    return 0;
}

int cmd_partition(const std::string& features, const std::string& labels,
                  const std::string& scheme, Index k, double alpha, Index s,
                  std::uint64_t seed, const std::string& out_path) {
    data::Dataset ds = data::load_dataset(features, labels);
    ExperimentConfig cfg;
    cfg.scheme = data::partition_scheme_from_name(scheme);
    cfg.clients = k;
    cfg.alpha = alpha;
    cfg.shards_per_client = s;
    cfg.partition_seed = seed;
    data::PartitionSpec spec = build_partition(cfg, ds);
    io::write_file(out_path, data::partition_to_json(spec));
    std::printf("wrote %s (%" PRId64 " clients, scheme %s)\n", out_path.c_str(),
                static_cast<std::int64_t>(spec.clients()), scheme.c_str());
    print_class_histograms(spec, ds);
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, bool check_invariance, bool with_timings) {
    cfg.hyper.validate();
    LoadedData loaded = load_experiment_data(cfg);

    fedsim::TrainOptions options;
    options.store_all_classifiers = cfg.store_all_classifiers;
    if (loaded.test) options.eval_data = &*loaded.test;

    fedsim::TrainResult result;
    data::PartitionSpec partition;
    if (cfg.centralized) {
        result = oracle::train_centralized(loaded.train, cfg.hyper, options);
    } else {
        partition = build_partition(cfg, loaded.train);
        result = fedsim::train_federated(loaded.train, partition, cfg.hyper,
                                         cfg.participation, options);
    }

    std::filesystem::create_directories(cfg.output_dir);
    const std::string model_path = cfg.output_dir + "/model.dafl";
    const std::string metrics_path = cfg.output_dir + "/metrics.json";
    model::save_snapshot(result.snapshot, model_path);

    json metrics;
    metrics["schema_version"] = kMetricsSchemaVersion;
    metrics["config"] = config_to_json(cfg);
    metrics["dataset"] = {{"samples", loaded.train.size()},
                          {"features", loaded.train.dim()},
                          {"classes", loaded.train.class_count}};
    metrics["mode"] = cfg.centralized ? "centralized" : "federated";
    metrics["layers"] = trace_to_json(result.trace);
    metrics["cost"] = ledger_to_json(result.ledger, with_timings);
    io::write_file(metrics_path, metrics.dump(2) + "\n");

    const LayerRow& last = result.trace.back();
    std::printf("trained %s model: T=%" PRId64 ", final H=%.6g, train accuracy %.4f",
                cfg.centralized ? "centralized" : "federated",
                static_cast<std::int64_t>(cfg.hyper.layers), last.risk_h,
                last.train_accuracy);
    if (std::isfinite(last.test_accuracy))
        std::printf(", test accuracy %.4f", last.test_accuracy);
    std::printf("\nwrote %s and %s\n", model_path.c_str(), metrics_path.c_str());

    if (check_invariance && !cfg.centralized) {
        fedsim::TrainOptions oracle_options = options;
        oracle_options.eval_data = nullptr;
        fedsim::TrainResult central =
            oracle::train_centralized(loaded.train, cfg.hyper, oracle_options);
        oracle::ModelDiff diff = oracle::compare_models(result.snapshot, central.snapshot);
        std::printf("invariance check vs centralized: max |diff| = %.3g (tolerance %g)\n",
                    diff.max_diff, oracle::kModelDiffTol);
        if (!diff.within_tolerance) {
            std::fprintf(stderr, "invariance check FAILED\n");
            return 2;
        }
        std::printf("invariance check passed\n");
    }
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& features,
             const std::string& labels, bool separability, const std::string& out_path) {
    model::ModelSnapshot snapshot = model::load_snapshot(model_path);
    data::Dataset ds = data::load_dataset(features, labels);
    model::ProjectionSet proj =
        model::make_projections(snapshot.hyper.base_seed, snapshot.d_x, snapshot.hyper);
    oracle::Evaluation ev = oracle::evaluate(snapshot, proj, ds);

    json doc = {{"accuracy", ev.accuracy}, {"risk_h", ev.risk_h}};
    json per_class = json::array();
    for (double acc : ev.per_class_accuracy)
        per_class.push_back(std::isfinite(acc) ? json(acc) : json());
    doc["per_class_accuracy"] = per_class;

    if (separability) {
        Matrix phi = model::forward_features(snapshot, ds.features, proj);
        oracle::SeparabilityMetrics m = oracle::separability_metrics(phi, ds.labels);
        doc["separability"] = {{"csr", m.degenerate ? json() : json(m.csr)},
                               {"ifs", m.degenerate ? json() : json(m.ifs)},
                               {"dm", m.degenerate ? json() : json(m.dm)},
                               {"degenerate", m.degenerate}};
    }

    const std::string text = doc.dump(2) + "\n";
    std::fputs(text.c_str(), stdout);
    if (!out_path.empty()) io::write_file(out_path, text);
    return 0;
}

int cmd_oracle_check(Index seeds, bool inject_wrong_sign) {
    bool all_pass = true;
    auto report = [&](const char* name, bool pass, double worst, const std::string& note) {
        std::printf("%-34s %s  worst %.3g%s%s\n", name, pass ? "PASS" : "FAIL", worst,
                    note.empty() ? "" : "  ", note.c_str());
        all_pass = all_pass && pass;
    };

    // Lemma 1: closed form vs descent on the ridge objective.
    {
        double worst = 0.0;
        std::string note;
        bool pass = true;
        const double lambdas[3] = {0.01, 1.0, 10.0};
        for (Index i = 0; i < seeds; ++i) {
            const auto seed = static_cast<std::uint64_t>(1000 + i);
            std::mt19937_64 rng(model::derive_seed(seed, 'r', 0));
            const Index n = 60 + static_cast<Index>(rng() % 141);
            const Index d = 4 + static_cast<Index>(rng() % 13);
            const Index c = 2 + static_cast<Index>(rng() % 4);
            const double lambda = lambdas[i % 3];
            Matrix phi = model::gaussian_matrix(seed * 7 + 1, n, d, 1.0);
            Matrix y = model::gaussian_matrix(seed * 7 + 2, n, c, 1.0);
            Matrix w = linalg::ridge_solve(phi, y, lambda);
            const double gap = oracle::gd_verify_ridge(phi, y, lambda, w);
            worst = std::max(worst, gap);
            if (gap > 1e-5) {
                pass = false;
                note = "seed " + std::to_string(seed);
                break;
            }
        }
        report("lemma-1 ridge vs descent", pass, worst, note);
    }

    // Lemma 2: closed form vs descent on the sandwiched objective.
    {
        double worst = 0.0, worst_resid = 0.0;
        std::string note;
        bool pass = true;
        for (Index i = 0; i < seeds; ++i) {
            const auto seed = static_cast<std::uint64_t>(2000 + i);
            std::mt19937_64 rng(model::derive_seed(seed, 's', 0));
            const Index n = 40 + static_cast<Index>(rng() % 101);
            const Index d_f = 4 + static_cast<Index>(rng() % 9);
            const Index d_phi = 3 + static_cast<Index>(rng() % 9);
            const Index c = 2 + static_cast<Index>(rng() % 3);
            const bool rank_deficient = (i % 4) == 3;
            const double gamma = rank_deficient ? 0.0 : (i % 2 ? 0.05 : 0.5);
            Matrix f = model::gaussian_matrix(seed * 7 + 1, n, d_f, 1.0);
            Matrix r = model::gaussian_matrix(seed * 7 + 2, n, c, 1.0);
            Matrix w = model::gaussian_matrix(seed * 7 + 3, d_phi, c, 1.0);
            Matrix omega = linalg::sandwich_solve(f, r, w, gamma);
            if (inject_wrong_sign) omega = -omega;

            Matrix pi = f.transpose() * f;
            Matrix upsilon = f.transpose() * r;
            const double resid = linalg::sandwich_residual(pi, upsilon, w, gamma, omega);
            const double resid_scale = 1.0 + max_abs(Matrix(upsilon * w.transpose()));
            worst_resid = std::max(worst_resid, resid / resid_scale);
            if (resid > 1e-8 * resid_scale) {
                pass = false;
                note = "stationarity residual " + std::to_string(resid) + " at seed " +
                       std::to_string(seed);
                break;
            }
            const double gap = oracle::gd_verify_sandwich(f, r, w, gamma, omega);
            worst = std::max(worst, gap);
            if (gap > 1e-5) {
                pass = false;
                note = "seed " + std::to_string(seed);
                break;
            }
        }
        report("lemma-2 sandwich vs descent", pass, std::max(worst, worst_resid), note);
    }

    // Risk monotonicity, plain and regularized.
    {
        data::Dataset ds = data::gen_synthetic(data::SyntheticKind::ConcentricRings, 400,
                                               16, 4, 77);
        bool pass = true;
        double worst = 0.0;
        std::string note;
        for (int regularized = 0; regularized < 2; ++regularized) {
            model::HyperParams h;
            h.layers = 8;
            h.d_phi = 32;
            h.d_f = 32;
            h.lambda = regularized ? 1.0 : 0.0;
            h.gamma = regularized ? 0.01 : 0.0;
            h.base_seed = 78;
            fedsim::TrainResult res = oracle::train_centralized(ds, h);
            const double slack =
                1e-9 * (1.0 + (regularized ? res.trace[0].risk_g : res.trace[0].risk_h));
            for (size_t t = 1; t < res.trace.size(); ++t) {
                const double prev =
                    regularized ? res.trace[t - 1].risk_g : res.trace[t - 1].risk_h;
                const double cur = regularized ? res.trace[t].risk_g : res.trace[t].risk_h;
                worst = std::max(worst, cur - prev);
                if (cur > prev + slack) {
                    pass = false;
                    note = (regularized ? std::string("G") : std::string("H")) +
                           " rises at layer " + std::to_string(t);
                }
            }
        }
        report("risk monotonicity (plain+reg)", pass, worst, note);
    }

    // Eigenbasis invariance of the sandwich assembly.
    {
        bool pass = true;
        double worst = 0.0;
        std::string note;
        for (Index i = 0; i < 10; ++i) {
            const auto seed = static_cast<std::uint64_t>(3000 + i);
            Matrix f = model::gaussian_matrix(seed * 9 + 1, 30, 6, 1.0);
            Matrix r = model::gaussian_matrix(seed * 9 + 2, 30, 3, 1.0);
            Matrix w = model::gaussian_matrix(seed * 9 + 3, 5, 3, 1.0);
            Matrix pi = f.transpose() * f;
            Matrix numerator = f.transpose() * r * w.transpose();
            linalg::SymEig ef = linalg::sym_eig(pi);
            linalg::SymEig ew = linalg::sym_eig(Matrix(w * w.transpose()));
            Matrix base = linalg::sandwich_assemble(ef.vectors, ef.values, ew.vectors,
                                                    ew.values, numerator, 0.01);
            Matrix v = ef.vectors;
            Matrix u = ew.vectors;
            std::mt19937_64 rng(seed);
            for (Index col = 0; col < v.cols(); ++col)
                if (rng() & 1) v.col(col) *= -1.0;
            for (Index col = 0; col < u.cols(); ++col)
                if (rng() & 1) u.col(col) *= -1.0;
            Matrix flipped =
                linalg::sandwich_assemble(v, ef.values, u, ew.values, numerator, 0.01);
            const double diff = max_abs(Matrix(flipped - base));
            worst = std::max(worst, diff);
            if (diff > 1e-10) {
                pass = false;
                note = "seed " + std::to_string(seed);
            }
        }
        report("eigenbasis sign invariance", pass, worst, note);
    }

    std::printf("%s\n", all_pass ? "all checks passed" : "CHECKS FAILED");
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deepafl: gradient-free federated learning on analytic residual networks"};
    app.require_subcommand(1);

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
    std::string g_kind = "rings", g_out = "dataset";
    Index g_n = 2000, g_d = 64, g_c = 10;
    std::uint64_t g_seed = 0;
    gen->add_option("--kind", g_kind, "blobs | rings | teacher");
    gen->add_option("--n", g_n, "sample count");
    gen->add_option("--d", g_d, "feature width");
    gen->add_option("--c", g_c, "class count");
    gen->add_option("--seed", g_seed, "generator seed");
    gen->add_option("--out", g_out, "output stem (.features.fmx / .labels.lbl)");

    // partition
    auto* part = app.add_subcommand("partition", "split a dataset across clients");
    std::string p_features, p_labels, p_scheme = "dirichlet", p_out = "partition.json";
    Index p_k = 10, p_s = 2;
    double p_alpha = 0.1;
    std::uint64_t p_seed = 0;
    part->add_option("--features", p_features)->required();
    part->add_option("--labels", p_labels)->required();
    part->add_option("--scheme", p_scheme, "dirichlet | sharding | uniform");
    part->add_option("--k", p_k, "client count");
    part->add_option("--alpha", p_alpha, "dirichlet concentration");
    part->add_option("--s", p_s, "shards per client");
    part->add_option("--seed", p_seed);
    part->add_option("--out", p_out);

    // train
    auto* train = app.add_subcommand("train", "run federated or centralized training");
    std::string t_config;
    std::string t_features, t_labels, t_test_features, t_test_labels;
    std::string t_synth_kind, t_scheme, t_activation, t_partition_file, t_participation;
    std::string t_out_dir;
    Index t_synth_n = -1, t_synth_d = -1, t_synth_c = -1, t_synth_test_n = -1;
    Index t_k = -1, t_s = -1, t_layers = -1, t_d_phi = -1, t_d_f = -1;
    double t_alpha = -1.0, t_lambda = -1.0, t_gamma = -1.0, t_eta = -1.0, t_tau = -1.0;
    bool t_centralized = false, t_store_all = false, t_check_invariance = false;
    bool t_timings = false;
    std::vector<std::string> t_ablate;
    std::uint64_t t_synth_seed = 0, t_seed = 0, t_part_seed = 0, t_particip_seed = 0,
                  t_noise_seed = 0;
    auto* o_synth_seed = train->add_option("--synth-seed", t_synth_seed);
    auto* o_seed = train->add_option("--seed", t_seed, "base seed for all projections");
    auto* o_part_seed = train->add_option("--partition-seed", t_part_seed);
    auto* o_particip_seed = train->add_option("--participation-seed", t_particip_seed);
    auto* o_noise_seed = train->add_option("--noise-seed", t_noise_seed);
    train->add_option("--config", t_config, "experiment config JSON; flags override");
    train->add_option("--features", t_features);
    train->add_option("--labels", t_labels);
    train->add_option("--test-features", t_test_features);
    train->add_option("--test-labels", t_test_labels);
    train->add_option("--synth-kind", t_synth_kind, "blobs | rings | teacher");
    train->add_option("--synth-n", t_synth_n);
    train->add_option("--synth-d", t_synth_d);
    train->add_option("--synth-c", t_synth_c);
    train->add_option("--synth-test-n", t_synth_test_n,
                      "extra held-out rows generated alongside the training data");
    train->add_option("--k", t_k, "client count");
    train->add_option("--scheme", t_scheme, "dirichlet | sharding | uniform");
    train->add_option("--alpha", t_alpha);
    train->add_option("--s", t_s, "shards per client");
    train->add_option("--partition", t_partition_file, "partition JSON file");
    train->add_option("--layers,-T", t_layers, "network depth T");
    train->add_option("--d-phi", t_d_phi);
    train->add_option("--d-f", t_d_f);
    train->add_option("--lambda", t_lambda);
    train->add_option("--gamma", t_gamma);
    train->add_option("--activation", t_activation);
    train->add_option("--ablate", t_ablate, "noskip | idb | noact | noomega (repeatable)");
    train->add_option("--participation", t_participation, "full | consistent | inconsistent");
    train->add_option("--eta", t_eta, "participation rate in (0, 1]");
    train->add_option("--noise-tau", t_tau, "label flip fraction on the training split");
    train->add_flag("--centralized", t_centralized);
    train->add_flag("--store-all-classifiers", t_store_all);
    train->add_flag("--check-invariance", t_check_invariance,
                    "also train centralized and require matching weights (exit 2 on drift)");
    train->add_flag("--timings", t_timings, "include wall-clock timings in metrics.json");
    train->add_option("--out-dir", t_out_dir);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a saved model on a dataset");
    std::string e_model, e_features, e_labels, e_out;
    bool e_separability = false;
    eval->add_option("--model", e_model)->required();
    eval->add_option("--features", e_features)->required();
    eval->add_option("--labels", e_labels)->required();
    eval->add_flag("--separability", e_separability, "add CSR/IFS/DM on final features");
    eval->add_option("--out", e_out, "also write the metrics JSON here");

    // oracle-check
    auto* check = app.add_subcommand("oracle-check", "run the solver verification suite");
    Index c_seeds = 20;
    bool c_inject = false;
    check->add_option("--seeds", c_seeds, "instances per lemma suite");
    check->add_flag("--inject-wrong-sign", c_inject,
                    "negative control: corrupt the solved transforms");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_synth(g_kind, g_n, g_d, g_c, g_seed, g_out);
        if (part->parsed())
            return cmd_partition(p_features, p_labels, p_scheme, p_k, p_alpha, p_s, p_seed,
                                 p_out);
        if (eval->parsed())
            return cmd_eval(e_model, e_features, e_labels, e_separability, e_out);
        if (check->parsed()) return cmd_oracle_check(c_seeds, c_inject);

        // train: config file first, explicit flags override
        ExperimentConfig cfg;
        if (!t_config.empty()) {
            json doc;
            try {
                doc = json::parse(io::read_file(t_config));
            } catch (const json::parse_error& e) {
                throw FormatError(std::string("config: ") + e.what());
            }
            cfg = config_from_json(doc);
        }
        if (!t_features.empty()) {
            cfg.features_path = t_features;
            cfg.labels_path = t_labels;
            cfg.synthetic.reset();
        }
        if (!t_synth_kind.empty() || t_synth_n >= 0) {
            SyntheticSpec spec = cfg.synthetic.value_or(SyntheticSpec{});
            if (!t_synth_kind.empty())
                spec.kind = data::synthetic_kind_from_name(t_synth_kind);
            if (t_synth_n >= 0) spec.n = t_synth_n;
            if (t_synth_d >= 0) spec.d = t_synth_d;
            if (t_synth_c >= 0) spec.c = t_synth_c;
            if (t_synth_test_n >= 0) spec.test_n = t_synth_test_n;
            if (o_synth_seed->count()) spec.seed = t_synth_seed;
            cfg.synthetic = spec;
            cfg.features_path.clear();
            cfg.labels_path.clear();
        }
        if (!cfg.synthetic && cfg.features_path.empty())
            throw ValidationError("train needs either --features/--labels or --synth-*");
        if (!t_test_features.empty()) {
            cfg.test_features_path = t_test_features;
            cfg.test_labels_path = t_test_labels;
        }
        if (t_k >= 0) cfg.clients = t_k;
        if (!t_scheme.empty()) cfg.scheme = data::partition_scheme_from_name(t_scheme);
        if (t_alpha >= 0.0) cfg.alpha = t_alpha;
        if (t_s >= 0) cfg.shards_per_client = t_s;
        if (o_part_seed->count()) cfg.partition_seed = t_part_seed;
        if (!t_partition_file.empty()) cfg.partition_file = t_partition_file;
        if (t_layers >= 0) cfg.hyper.layers = t_layers;
        if (t_d_phi >= 0) cfg.hyper.d_phi = t_d_phi;
        if (t_d_f >= 0) cfg.hyper.d_f = t_d_f;
        if (t_lambda >= 0.0) cfg.hyper.lambda = t_lambda;
        if (t_gamma >= 0.0) cfg.hyper.gamma = t_gamma;
        if (!t_activation.empty())
            cfg.hyper.activation = model::activation_from_name(t_activation);
        if (o_seed->count()) cfg.hyper.base_seed = t_seed;
        for (const std::string& name : t_ablate)
            cfg.hyper.ablation |= ablation_from_name(name);
        if (!t_participation.empty())
            cfg.participation.mode = fedsim::participation_mode_from_name(t_participation);
        if (t_eta >= 0.0) cfg.participation.eta = t_eta;
        if (o_particip_seed->count()) cfg.participation.seed = t_particip_seed;
        if (t_tau >= 0.0) cfg.noise_tau = t_tau;
        if (o_noise_seed->count()) cfg.noise_seed = t_noise_seed;
        if (t_centralized) cfg.centralized = true;
        if (t_store_all) cfg.store_all_classifiers = true;
        if (!t_out_dir.empty()) cfg.output_dir = t_out_dir;

        return cmd_train(cfg, t_check_invariance, t_timings);
    } catch (const Error& e) {
        json err = {{"error", e.kind()}, {"message", e.what()}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    } catch (const std::exception& e) {
        json err = {{"error", "internal"}, {"message", e.what()}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    }
}
