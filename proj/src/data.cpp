#include "deepafl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "deepafl/serialize.hpp"

namespace deepafl::data {

namespace {

// Frozen constants of the synthetic generators. Ring geometry is chosen so a
// linear classifier on raw features stays near chance while depth has room to
// improve on the zero-layer model.
constexpr double kBlobSeparation = 10.0; // min distance between class means
constexpr double kBlobNoise = 1.0;
constexpr double kRingBase = 2.0;    // radius of the innermost shell
constexpr double kRingStep = 1.0;    // radius increment per class
constexpr double kRingJitter = 0.22; // radial noise (fraction of the step)
constexpr double kRingAmbient = 0.3; // isotropic noise in all ambient dims
constexpr Index kTeacherHidden = 32;

std::vector<std::int32_t> balanced_labels(Index n, Index c) {
    std::vector<std::int32_t> labels(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = static_cast<std::int32_t>(i % c);
    return labels;
}

Dataset gen_blobs(Index n, Index d_x, Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix means(c, d_x);
    for (Index i = 0; i < means.size(); ++i) means.data()[i] = normal(rng);
    double min_dist = std::numeric_limits<double>::infinity();
    for (Index a = 0; a < c; ++a)
        for (Index b = a + 1; b < c; ++b)
            min_dist = std::min(min_dist, (means.row(a) - means.row(b)).norm());
    if (c > 1) means *= kBlobSeparation * kBlobNoise / min_dist;

    Dataset ds;
    ds.class_count = c;
    ds.labels = balanced_labels(n, c);
    ds.features.resize(n, d_x);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d_x; ++j)
            ds.features(i, j) = means(ds.labels[static_cast<size_t>(i)], j) +
                                kBlobNoise * normal(rng);
    return ds;
}

Dataset gen_rings(Index n, Index d_x, Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);

    // Random orthonormal plane the shells live in.
    Matrix g(d_x, 2);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix plane = qr.householderQ() * Matrix::Identity(d_x, 2);

    Dataset ds;
    ds.class_count = c;
    ds.labels = balanced_labels(n, c);
    ds.features.resize(n, d_x);
    for (Index i = 0; i < n; ++i) {
        const double radius = kRingBase +
                              kRingStep * ds.labels[static_cast<size_t>(i)] +
                              kRingStep * kRingJitter * normal(rng);
        const double theta = angle(rng);
        const double px = radius * std::cos(theta);
        const double py = radius * std::sin(theta);
        for (Index j = 0; j < d_x; ++j)
            ds.features(i, j) = plane(j, 0) * px + plane(j, 1) * py +
                                kRingAmbient * normal(rng);
    }
    return ds;
}

Dataset gen_teacher(Index n, Index d_x, Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix w1(d_x, kTeacherHidden);
    for (Index i = 0; i < w1.size(); ++i)
        w1.data()[i] = normal(rng) / std::sqrt(static_cast<double>(d_x));
    Matrix w2(kTeacherHidden, c);
    for (Index i = 0; i < w2.size(); ++i)
        w2.data()[i] = normal(rng) / std::sqrt(static_cast<double>(kTeacherHidden));

    Dataset ds;
    ds.class_count = c;
    ds.features.resize(n, d_x);
    for (Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = normal(rng);

    Matrix hidden = (ds.features * w1).array().tanh().matrix();
    Matrix scores = hidden * w2;
    ds.labels.resize(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
        Index best = 0;
        for (Index j = 1; j < c; ++j)
            if (scores(i, j) > scores(i, best)) best = j;
        ds.labels[static_cast<size_t>(i)] = static_cast<std::int32_t>(best);
    }
    return ds;
}

} // namespace

void Dataset::validate() const {
    if (size() < 1) throw ValidationError("dataset must hold at least one sample");
    if (class_count < 1) throw ValidationError("dataset class count must be >= 1");
    if (static_cast<Index>(labels.size()) != size())
        throw DimensionError("dataset feature/label count mismatch");
    for (std::int32_t l : labels)
        if (l < 0 || l >= class_count)
            throw ValidationError("label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(class_count) + ")");
}

SyntheticKind synthetic_kind_from_name(const std::string& name) {
    if (name == "blobs") return SyntheticKind::LinearlySeparable;
    if (name == "rings") return SyntheticKind::ConcentricRings;
    if (name == "teacher") return SyntheticKind::RandomTeacher;
    throw ValidationError("unknown synthetic kind '" + name + "'");
}

std::string synthetic_kind_name(SyntheticKind kind) {
    switch (kind) {
        case SyntheticKind::LinearlySeparable: return "blobs";
        case SyntheticKind::ConcentricRings: return "rings";
        case SyntheticKind::RandomTeacher: return "teacher";
    }
    throw ValidationError("invalid synthetic kind");
}

Dataset gen_synthetic(SyntheticKind kind, Index n, Index d_x, Index c, std::uint64_t seed) {
    if (c < 1) throw ValidationError("gen_synthetic: class count must be >= 1");
    if (n < c) throw ValidationError("gen_synthetic: need n >= c");
    if (d_x < 2) throw ValidationError("gen_synthetic: need d_x >= 2");
    switch (kind) {
        case SyntheticKind::LinearlySeparable: return gen_blobs(n, d_x, c, seed);
        case SyntheticKind::ConcentricRings: return gen_rings(n, d_x, c, seed);
        case SyntheticKind::RandomTeacher: return gen_teacher(n, d_x, c, seed);
    }
    throw ValidationError("invalid synthetic kind");
}

Matrix one_hot(const std::vector<std::int32_t>& labels, Index c) {
    Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), c);
    for (Index i = 0; i < y.rows(); ++i) {
        const std::int32_t l = labels[static_cast<size_t>(i)];
        if (l < 0 || l >= c)
            throw ValidationError("one_hot: label " + std::to_string(l) + " out of range");
        y(i, l) = 1.0;
    }
    return y;
}

std::string partition_scheme_name(PartitionScheme s) {
    switch (s) {
        case PartitionScheme::Dirichlet: return "dirichlet";
        case PartitionScheme::Sharding: return "sharding";
        case PartitionScheme::Uniform: return "uniform";
    }
    throw ValidationError("invalid partition scheme");
}

PartitionScheme partition_scheme_from_name(const std::string& name) {
    if (name == "dirichlet") return PartitionScheme::Dirichlet;
    if (name == "sharding") return PartitionScheme::Sharding;
    if (name == "uniform") return PartitionScheme::Uniform;
    throw ValidationError("unknown partition scheme '" + name + "'");
}

void PartitionSpec::validate(Index n) const {
    if (assignments.empty()) throw ValidationError("partition has no clients");
    std::vector<char> seen(static_cast<size_t>(n), 0);
    Index total = 0;
    for (const auto& idx : assignments) {
        if (idx.empty()) throw ValidationError("partition has an empty client");
        for (Index i : idx) {
            if (i < 0 || i >= n) throw ValidationError("partition index out of range");
            if (seen[static_cast<size_t>(i)]++)
                throw ValidationError("partition assigns an index twice");
            ++total;
        }
    }
    if (total != n) throw ValidationError("partition does not cover the dataset");
}

PartitionSpec partition_dirichlet(const Dataset& dataset, Index k, double alpha,
                                  std::uint64_t seed) {
    dataset.validate();
    if (k < 1) throw ValidationError("partition: need k >= 1");
    if (alpha <= 0.0) throw ValidationError("partition: need alpha > 0");

    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> gamma(alpha, 1.0);

    std::vector<std::vector<Index>> by_class(static_cast<size_t>(dataset.class_count));
    for (Index i = 0; i < dataset.size(); ++i)
        by_class[static_cast<size_t>(dataset.labels[static_cast<size_t>(i)])].push_back(i);

    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<std::vector<Index>> assignments(static_cast<size_t>(k));
        bool usable = true;
        for (auto cls : by_class) {
            if (cls.empty()) continue;
            std::shuffle(cls.begin(), cls.end(), rng);
            std::vector<double> props(static_cast<size_t>(k));
            double sum = 0.0;
            for (double& p : props) sum += (p = gamma(rng));
            if (!(sum > 0.0) || !std::isfinite(sum)) {
                usable = false;
                break;
            }
            const auto n_c = static_cast<double>(cls.size());
            double cum = 0.0;
            size_t start = 0;
            for (Index j = 0; j < k; ++j) {
                cum += props[static_cast<size_t>(j)] / sum;
                size_t stop = j + 1 == k
                                  ? cls.size()
                                  : std::min(cls.size(),
                                             static_cast<size_t>(std::floor(cum * n_c)));
                stop = std::max(stop, start);
                auto& dst = assignments[static_cast<size_t>(j)];
                dst.insert(dst.end(), cls.begin() + static_cast<std::ptrdiff_t>(start),
                           cls.begin() + static_cast<std::ptrdiff_t>(stop));
                start = stop;
            }
        }
        if (!usable) continue;
        const bool nonempty = std::all_of(assignments.begin(), assignments.end(),
                                          [](const auto& a) { return !a.empty(); });
        if (!nonempty) continue;

        PartitionSpec spec;
        spec.scheme = PartitionScheme::Dirichlet;
        spec.alpha = alpha;
        spec.seed = seed;
        spec.assignments = std::move(assignments);
        spec.validate(dataset.size());
        return spec;
    }
    throw ValidationError("partition_dirichlet: could not produce nonempty clients in "
                          "100 attempts (alpha too small for this k)");
}

PartitionSpec partition_sharding(const Dataset& dataset, Index k, Index s,
                                 std::uint64_t seed) {
    dataset.validate();
    if (k < 1 || s < 1) throw ValidationError("partition: need k >= 1 and s >= 1");
    const Index n = dataset.size();
    const Index shard_count = k * s;
    if (shard_count > n)
        throw ValidationError("partition_sharding: k*s exceeds the dataset size");

    // Stable sort keeps the original order within a class.
    std::vector<Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return dataset.labels[static_cast<size_t>(a)] < dataset.labels[static_cast<size_t>(b)];
    });

    const Index shard_size = n / shard_count;
    std::vector<Index> shard_ids(static_cast<size_t>(shard_count));
    std::iota(shard_ids.begin(), shard_ids.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

    PartitionSpec spec;
    spec.scheme = PartitionScheme::Sharding;
    spec.shards_per_client = s;
    spec.seed = seed;
    spec.assignments.resize(static_cast<size_t>(k));
    for (Index j = 0; j < k; ++j) {
        auto& dst = spec.assignments[static_cast<size_t>(j)];
        for (Index i = 0; i < s; ++i) {
            const Index shard = shard_ids[static_cast<size_t>(j * s + i)];
            const Index begin = shard * shard_size;
            const Index end = shard + 1 == shard_count ? n : begin + shard_size;
            for (Index p = begin; p < end; ++p) dst.push_back(order[static_cast<size_t>(p)]);
        }
    }
    spec.validate(n);
    return spec;
}

PartitionSpec partition_uniform(const Dataset& dataset, Index k, std::uint64_t seed) {
    dataset.validate();
    if (k < 1) throw ValidationError("partition: need k >= 1");
    const Index n = dataset.size();
    if (k > n) throw ValidationError("partition_uniform: more clients than samples");

    std::vector<Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    PartitionSpec spec;
    spec.scheme = PartitionScheme::Uniform;
    spec.seed = seed;
    spec.assignments.resize(static_cast<size_t>(k));
    for (Index i = 0; i < n; ++i)
        spec.assignments[static_cast<size_t>(i % k)].push_back(order[static_cast<size_t>(i)]);
    spec.validate(n);
    return spec;
}

Dataset flip_labels(const Dataset& dataset, double tau, std::uint64_t seed) {
    dataset.validate();
    if (tau < 0.0 || tau > 1.0) throw ValidationError("flip_labels: tau must be in [0, 1]");
    const auto flip_count =
        static_cast<Index>(std::floor(tau * static_cast<double>(dataset.size())));
    Dataset out = dataset;
    if (flip_count == 0) return out;
    if (dataset.class_count < 2)
        throw ValidationError("flip_labels: need at least two classes to flip");

    std::mt19937_64 rng(seed);
    std::vector<Index> order(static_cast<size_t>(dataset.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::uniform_int_distribution<std::int32_t> other(
        0, static_cast<std::int32_t>(dataset.class_count) - 2);
    for (Index i = 0; i < flip_count; ++i) {
        const auto victim = static_cast<size_t>(order[static_cast<size_t>(i)]);
        const std::int32_t old = out.labels[victim];
        std::int32_t drawn = other(rng);
        out.labels[victim] = drawn >= old ? drawn + 1 : drawn;
    }
    return out;
}

Dataset subset(const Dataset& dataset, const std::vector<Index>& indices) {
    Dataset out;
    out.class_count = dataset.class_count;
    out.features.resize(static_cast<Index>(indices.size()), dataset.dim());
    out.labels.reserve(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const Index src = indices[i];
        if (src < 0 || src >= dataset.size())
            throw ValidationError("subset: index out of range");
        out.features.row(static_cast<Index>(i)) = dataset.features.row(src);
        out.labels.push_back(dataset.labels[static_cast<size_t>(src)]);
    }
    return out;
}

void save_dataset(const Dataset& dataset, const std::string& features_path,
                  const std::string& labels_path) {
    dataset.validate();
    std::string f;
    f.append("FMX1");
    io::put_le<std::uint32_t>(f, static_cast<std::uint32_t>(dataset.features.rows()));
    io::put_le<std::uint32_t>(f, static_cast<std::uint32_t>(dataset.features.cols()));
    io::put_matrix(f, dataset.features);
    io::write_file(features_path, f);

    std::string l;
    l.append("LBL1");
    io::put_le<std::uint32_t>(l, static_cast<std::uint32_t>(dataset.labels.size()));
    io::put_le<std::uint32_t>(l, static_cast<std::uint32_t>(dataset.class_count));
    for (std::int32_t v : dataset.labels) io::put_le<std::uint32_t>(l, static_cast<std::uint32_t>(v));
    io::write_file(labels_path, l);
}

Dataset load_dataset(const std::string& features_path, const std::string& labels_path) {
    const std::string fbytes = io::read_file(features_path);
    io::Reader fr(fbytes, "features file");
    if (fr.get_magic() != "FMX1") throw FormatError("features file: bad magic");
    const auto rows = fr.get_le<std::uint32_t>();
    const auto cols = fr.get_le<std::uint32_t>();

    Dataset ds;
    ds.features = fr.get_matrix(static_cast<Index>(rows), static_cast<Index>(cols));
    if (!fr.at_end()) throw FormatError("features file: trailing bytes");

    const std::string lbytes = io::read_file(labels_path);
    io::Reader lr(lbytes, "labels file");
    if (lr.get_magic() != "LBL1") throw FormatError("labels file: bad magic");
    const auto count = lr.get_le<std::uint32_t>();
    const auto classes = lr.get_le<std::uint32_t>();
    if (count != rows)
        throw DimensionError("labels file count does not match the features file");
    ds.class_count = static_cast<Index>(classes);
    ds.labels.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i)
        ds.labels.push_back(static_cast<std::int32_t>(lr.get_le<std::uint32_t>()));
    if (!lr.at_end()) throw FormatError("labels file: trailing bytes");

    ds.validate();
    return ds;
}

Dataset load_dataset_csv(const std::string& path, Index class_count) {
    const std::string text = io::read_file(path);
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    std::vector<std::int32_t> labels;
    Index width = -1;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(ls, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw FormatError("csv line " + std::to_string(lineno) +
                                  ": cannot parse '" + cell + "'");
            }
        }
        if (values.size() < 2)
            throw FormatError("csv line " + std::to_string(lineno) +
                              ": need a label and at least one feature");
        const double label = values.front();
        if (label != std::floor(label) || label < 0)
            throw FormatError("csv line " + std::to_string(lineno) +
                              ": label must be a non-negative integer");
        if (width < 0) width = static_cast<Index>(values.size()) - 1;
        if (static_cast<Index>(values.size()) - 1 != width)
            throw DimensionError("csv line " + std::to_string(lineno) +
                                 ": inconsistent feature count");
        labels.push_back(static_cast<std::int32_t>(label));
        values.erase(values.begin());
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw FormatError("csv file holds no samples");

    Dataset ds;
    ds.labels = std::move(labels);
    ds.class_count = class_count > 0
                         ? class_count
                         : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    ds.features.resize(static_cast<Index>(rows.size()), width);
    for (size_t i = 0; i < rows.size(); ++i)
        for (Index j = 0; j < width; ++j)
            ds.features(static_cast<Index>(i), j) = rows[i][static_cast<size_t>(j)];
    ds.validate();
    return ds;
}

std::string partition_to_json(const PartitionSpec& spec) {
    nlohmann::json doc;
    doc["scheme"] = partition_scheme_name(spec.scheme);
    if (spec.scheme == PartitionScheme::Dirichlet) doc["alpha"] = spec.alpha;
    if (spec.scheme == PartitionScheme::Sharding)
        doc["shards_per_client"] = spec.shards_per_client;
    doc["seed"] = spec.seed;
    doc["clients"] = spec.assignments.size();
    doc["assignments"] = spec.assignments;
    return doc.dump(2) + "\n";
}

PartitionSpec partition_from_json(const std::string& text, Index dataset_size) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("partition file: ") + e.what());
    }
    static const std::vector<std::string> known = {"scheme", "alpha", "shards_per_client",
                                                   "seed", "clients", "assignments"};
    for (const auto& [key, value] : doc.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ValidationError("partition file: unknown key '" + key + "'");

    PartitionSpec spec;
    spec.scheme = partition_scheme_from_name(doc.at("scheme").get<std::string>());
    if (doc.contains("alpha")) spec.alpha = doc["alpha"].get<double>();
    if (doc.contains("shards_per_client"))
        spec.shards_per_client = doc["shards_per_client"].get<Index>();
    spec.seed = doc.at("seed").get<std::uint64_t>();
    spec.assignments = doc.at("assignments").get<std::vector<std::vector<Index>>>();
    if (doc.contains("clients") &&
        doc["clients"].get<size_t>() != spec.assignments.size())
        throw ValidationError("partition file: client count mismatch");
    spec.validate(dataset_size);
    return spec;
}

} // namespace deepafl::data
