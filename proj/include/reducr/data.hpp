// data.hpp
//
// Labelled example pools with train/holdout/test split tags, the synthetic
// Gaussian generator, CSV ingestion/export, the streaming large-batch sampler
// (optionally class-imbalanced), and superclass maps.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reducr/learner.hpp"
#include "reducr/numerics.hpp"

namespace reducr {

enum class Split : std::uint8_t { train = 0, holdout = 1, test = 2 };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::holdout: return "holdout";
        case Split::test: return "test";
    }
    return "?";
}

struct DataPool {
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::vector<double> features;  // size() * dim
    std::vector<int> labels;
    std::vector<Split> splits;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < size(); ++i) {
            if (splits[i] == s) out.push_back(i);
        }
        return out;
    }

    WeightedBatch gather(std::span<const std::size_t> idx) const {
        WeightedBatch b;
        b.dim = dim;
        b.features.reserve(idx.size() * dim);
        for (std::size_t i : idx) {
            const auto r = row(i);
            b.features.insert(b.features.end(), r.begin(), r.end());
            b.labels.push_back(labels[i]);
        }
        b.weights.assign(idx.size(), 1.0);
        return b;
    }

    WeightedBatch split_batch(Split s) const {
        const auto idx = indices(s);
        return gather(idx);
    }

    std::vector<std::size_t> class_counts(Split s) const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (std::size_t i = 0; i < size(); ++i) {
            if (splits[i] == s) counts[static_cast<std::size_t>(labels[i])] += 1;
        }
        return counts;
    }

    void validate() const {
        if (features.size() != size() * dim || splits.size() != size()) {
            throw InvalidInput("DataPool: inconsistent field lengths");
        }
        for (int y : labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw InvalidInput("DataPool: label out of range");
        }
    }

    /// FNV-1a over shape, feature bit patterns, labels and split tags.
    std::uint64_t fingerprint() const {
        Fnv1a h;
        h.value(static_cast<std::uint64_t>(num_classes));
        h.value(static_cast<std::uint64_t>(dim));
        h.value(static_cast<std::uint64_t>(size()));
        if (!features.empty()) h.bytes(features.data(), features.size() * sizeof(double));
        for (int y : labels) h.value(static_cast<std::int32_t>(y));
        for (Split s : splits) h.value(static_cast<std::uint8_t>(s));
        return h.digest();
    }

    bool operator==(const DataPool&) const = default;
};

inline std::string fingerprint_hex(std::uint64_t fp) {
    std::ostringstream ss;
    ss << std::hex;
    ss.width(16);
    ss.fill('0');
    ss << fp;
    return ss.str();
}

struct SyntheticSpec {
    std::size_t num_classes = 4;
    std::size_t dim = 10;
    std::size_t n_train = 8000;
    std::size_t n_holdout = 2000;
    std::size_t n_test = 2000;
    double separation = 2.0;
    double label_noise = 0.0;
    bool noisy_holdout = false;  // test labels are always clean
    std::uint64_t seed = 0;
};

namespace detail {

// Class c is centred at separation * e_c when C <= d, otherwise at
// separation * (random unit vector).
inline std::vector<double> class_means(const SyntheticSpec& spec) {
    std::vector<double> means(spec.num_classes * spec.dim, 0.0);
    if (spec.num_classes <= spec.dim) {
        for (std::size_t c = 0; c < spec.num_classes; ++c) means[c * spec.dim + c] = spec.separation;
        return means;
    }
    Rng rng = Rng::derive(spec.seed, 0x6d65616e);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        double norm = 0.0;
        for (std::size_t j = 0; j < spec.dim; ++j) {
            means[c * spec.dim + j] = rng.normal();
            norm += means[c * spec.dim + j] * means[c * spec.dim + j];
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < spec.dim; ++j) means[c * spec.dim + j] *= spec.separation / norm;
    }
    return means;
}

}  // namespace detail

/**
 * Isotropic unit-variance Gaussian clouds, one per class. Each split is class
 * balanced (labels assigned round-robin). Labels in the train split (and the
 * holdout split when `noisy_holdout`) are then flipped independently with
 * probability `label_noise` to a uniformly chosen other class. Features and
 * noise draw from separate streams, so the noise rate never changes features.
 */
inline DataPool generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw InvalidInput("num_classes must be >= 2");
    if (spec.dim < 2) throw InvalidInput("dim must be >= 2");
    if (!(spec.separation > 0.0)) throw InvalidInput("separation must be > 0");
    if (!(spec.label_noise >= 0.0 && spec.label_noise < 1.0)) throw InvalidInput("label_noise must be in [0, 1)");

    DataPool pool;
    pool.num_classes = spec.num_classes;
    pool.dim = spec.dim;
    const std::vector<double> means = detail::class_means(spec);
    Rng feature_rng = Rng::derive(spec.seed, 1);
    Rng noise_rng = Rng::derive(spec.seed, 2);

    auto emit = [&](std::size_t n, Split split, bool noisy) {
        for (std::size_t i = 0; i < n; ++i) {
            const int y = static_cast<int>(i % spec.num_classes);
            for (std::size_t j = 0; j < spec.dim; ++j) {
                pool.features.push_back(means[static_cast<std::size_t>(y) * spec.dim + j] + feature_rng.normal());
            }
            int label = y;
            if (noisy && spec.label_noise > 0.0 && noise_rng.uniform() < spec.label_noise) {
                const auto other = static_cast<int>(noise_rng.below(spec.num_classes - 1));
                label = other >= y ? other + 1 : other;
            }
            pool.labels.push_back(label);
            pool.splits.push_back(split);
        }
    };
    emit(spec.n_train, Split::train, true);
    emit(spec.n_holdout, Split::holdout, spec.noisy_holdout);
    emit(spec.n_test, Split::test, false);
    return pool;
}

/// Z-score every feature with train-split statistics.
inline void standardize(DataPool& pool) {
    const auto train = pool.indices(Split::train);
    if (train.empty()) throw InvalidInput("standardize: empty train split");
    for (std::size_t j = 0; j < pool.dim; ++j) {
        double mean = 0.0;
        for (std::size_t i : train) mean += pool.features[i * pool.dim + j];
        mean /= static_cast<double>(train.size());
        double var = 0.0;
        for (std::size_t i : train) {
            const double d = pool.features[i * pool.dim + j] - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(train.size()));
        const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            pool.features[i * pool.dim + j] = (pool.features[i * pool.dim + j] - mean) * scale;
        }
    }
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
    std::string label_column = "label";
    std::size_t num_classes = 0;  // 0: infer as max label + 1
    double train_fraction = 0.6;
    double holdout_fraction = 0.2;  // test gets the remainder
    std::uint64_t seed = 0;
    bool standardize = false;
    /// Split manifest written by write_pool; when set, fractions and seed are ignored.
    std::optional<std::string> manifest_path;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view s, std::size_t line) {
    s = trim(s);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v)) {
        throw ParseError(line, "non-numeric value '" + std::string(s) + "'");
    }
    return v;
}

inline long parse_label(std::string_view s, std::size_t line) {
    s = trim(s);
    long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw ParseError(line, "label '" + std::string(s) + "' is not an integer");
    }
    return v;
}

}  // namespace detail

inline std::string manifest_path_for(const std::string& csv_path) { return csv_path + ".splits.json"; }

/**
 * Reads `f0,...,f{d-1},label` style CSV (any feature column names; the label
 * column is found by name). Examples keep file order. Splits come from the
 * schema's manifest if given, otherwise from a seeded shuffle cut at the
 * schema fractions.
 */
inline DataPool load_csv(const std::string& path, const CsvSchema& schema = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError(1, "missing header row");
    line_no = 1;
    const auto header = detail::split_commas(line);
    std::size_t label_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (detail::trim(header[i]) == schema.label_column) label_col = i;
    }
    if (label_col == header.size()) throw ParseError(1, "no '" + schema.label_column + "' column in header");
    if (header.size() < 2) throw ParseError(1, "header needs at least one feature column");

    DataPool pool;
    pool.dim = header.size() - 1;
    long max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_commas(line);
        if (cells.size() != header.size()) {
            throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                          std::to_string(cells.size()));
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_col) continue;
            pool.features.push_back(detail::parse_double(cells[i], line_no));
        }
        const long y = detail::parse_label(cells[label_col], line_no);
        if (y < 0 || (schema.num_classes > 0 && static_cast<std::size_t>(y) >= schema.num_classes)) {
            throw ParseError(line_no, "label " + std::to_string(y) + " out of range");
        }
        max_label = std::max(max_label, y);
        pool.labels.push_back(static_cast<int>(y));
    }
    pool.num_classes = schema.num_classes > 0 ? schema.num_classes : static_cast<std::size_t>(max_label + 1);
    if (pool.num_classes < 2) throw InvalidInput(path + ": need at least 2 classes");
    pool.splits.assign(pool.size(), Split::test);

    if (schema.manifest_path) {
        std::ifstream min(*schema.manifest_path);
        if (!min) throw IoError("cannot read split manifest " + *schema.manifest_path);
        const auto manifest = nlohmann::json::parse(min);
        if (manifest.at("rows").get<std::size_t>() != pool.size()) {
            throw InvalidInput("split manifest row count does not match " + path);
        }
        if (manifest.contains("num_classes")) pool.num_classes = manifest.at("num_classes").get<std::size_t>();
        for (Split s : {Split::train, Split::holdout, Split::test}) {
            const auto range = manifest.at("splits").at(to_string(s));
            const auto begin = range.at(0).get<std::size_t>(), count = range.at(1).get<std::size_t>();
            if (begin + count > pool.size()) throw InvalidInput("split manifest range exceeds row count");
            for (std::size_t i = begin; i < begin + count; ++i) pool.splits[i] = s;
        }
    } else {
        if (schema.train_fraction < 0 || schema.holdout_fraction < 0 ||
            schema.train_fraction + schema.holdout_fraction > 1.0) {
            throw InvalidInput("split fractions must be nonnegative and sum to at most 1");
        }
        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(schema.seed);
        rng.shuffle(std::span<std::size_t>(order));
        const auto n_train = static_cast<std::size_t>(std::llround(schema.train_fraction * static_cast<double>(pool.size())));
        const auto n_hold = static_cast<std::size_t>(std::llround(schema.holdout_fraction * static_cast<double>(pool.size())));
        for (std::size_t r = 0; r < order.size(); ++r) {
            pool.splits[order[r]] = r < n_train ? Split::train : (r < n_train + n_hold ? Split::holdout : Split::test);
        }
    }
    pool.validate();
    if (schema.standardize) standardize(pool);
    return pool;
}

/**
 * Writes the pool as CSV (rows grouped train, holdout, test) plus a JSON split
 * manifest at manifest_path_for(path). Doubles are printed with 17 significant
 * digits so load_csv round-trips them exactly.
 */
inline void write_pool(const std::string& path, const DataPool& pool) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (std::size_t j = 0; j < pool.dim; ++j) out << 'f' << j << ',';
    out << "label\n";
    out.precision(17);
    nlohmann::json splits = nlohmann::json::object();
    std::size_t row = 0;
    for (Split s : {Split::train, Split::holdout, Split::test}) {
        const std::size_t begin = row;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (pool.splits[i] != s) continue;
            for (double v : pool.row(i)) out << v << ',';
            out << pool.labels[i] << '\n';
            ++row;
        }
        splits[to_string(s)] = {begin, row - begin};
    }
    if (!out) throw IoError("failed writing " + path);

    nlohmann::json manifest = {
        {"format", "reducr-pool-splits"},
        {"version", 1},
        {"rows", pool.size()},
        {"num_classes", pool.num_classes},
        {"dim", pool.dim},
        {"splits", splits},
    };
    std::ofstream mout(manifest_path_for(path), std::ios::binary | std::ios::trunc);
    if (!mout) throw IoError("cannot write " + manifest_path_for(path));
    mout << manifest.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Sampling

/// Classes in `classes` are each drawn with probability p; the remaining mass
/// is split evenly over the other classes.
struct ImbalanceSpec {
    std::vector<int> classes;
    double p = 0.1;

    void validate(std::size_t num_classes) const {
        if (classes.empty()) throw InvalidInput("imbalance: no imbalanced class given");
        for (int c : classes) {
            if (c < 0 || static_cast<std::size_t>(c) >= num_classes) throw InvalidInput("imbalance: class out of range");
        }
        if (!(p > 0.0) || p > 1.0 / static_cast<double>(num_classes) + 1e-12) {
            throw InvalidInput("imbalance: p must be in (0, 1/C]");
        }
        if (classes.size() >= num_classes) throw InvalidInput("imbalance: at least one class must stay balanced");
    }
};

inline std::vector<double> class_probabilities(std::size_t num_classes, const ImbalanceSpec& spec) {
    spec.validate(num_classes);
    std::vector<bool> flagged(num_classes, false);
    for (int c : spec.classes) flagged[static_cast<std::size_t>(c)] = true;
    std::size_t m = 0;
    for (bool f : flagged) m += f ? 1 : 0;
    const double rest = (1.0 - static_cast<double>(m) * spec.p) / static_cast<double>(num_classes - m);
    std::vector<double> probs(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) probs[c] = flagged[c] ? spec.p : rest;
    return probs;
}

/// A drawn candidate batch together with the pool row of each candidate.
struct CandidateBatch {
    WeightedBatch batch;
    std::vector<std::size_t> pool_index;

    std::size_t size() const { return pool_index.size(); }
};

/**
 * Draws examples with replacement from a fixed set of pool rows. Without an
 * imbalance spec each row is equally likely; with one, a class is drawn from
 * class_probabilities() and then a uniform row of that class.
 */
class LargeBatchSampler {
public:
    LargeBatchSampler(const DataPool& pool, std::vector<std::size_t> rows,
                      std::optional<ImbalanceSpec> imbalance = std::nullopt)
        : pool_(&pool), rows_(std::move(rows)) {
        if (rows_.empty()) throw InvalidInput("sampler: no rows to sample from");
        if (!imbalance) return;
        probs_ = class_probabilities(pool.num_classes, *imbalance);
        by_class_.resize(pool.num_classes);
        for (std::size_t i : rows_) by_class_[static_cast<std::size_t>(pool.labels[i])].push_back(i);
        cumulative_.resize(probs_.size());
        double acc = 0.0;
        for (std::size_t c = 0; c < probs_.size(); ++c) {
            if (probs_[c] > 0.0 && by_class_[c].empty()) {
                throw InvalidInput("sampler: class " + std::to_string(c) + " has no examples to draw");
            }
            acc += probs_[c];
            cumulative_[c] = acc;
        }
    }

    LargeBatchSampler(const DataPool& pool, Split split, std::optional<ImbalanceSpec> imbalance = std::nullopt)
        : LargeBatchSampler(pool, pool.indices(split), std::move(imbalance)) {}

    std::size_t draw_row(Rng& rng) const {
        if (probs_.empty()) return rows_[static_cast<std::size_t>(rng.below(rows_.size()))];
        const double u = rng.uniform() * cumulative_.back();
        std::size_t c = 0;
        while (c + 1 < cumulative_.size() && u >= cumulative_[c]) ++c;
        const auto& members = by_class_[c];
        return members[static_cast<std::size_t>(rng.below(members.size()))];
    }

    CandidateBatch sample(std::size_t size, Rng& rng) const {
        if (size < 1) throw InvalidInput("sampler: batch size must be >= 1");
        CandidateBatch out;
        out.pool_index.reserve(size);
        for (std::size_t i = 0; i < size; ++i) out.pool_index.push_back(draw_row(rng));
        out.batch = pool_->gather(out.pool_index);
        return out;
    }

    /// Probability of each class under this sampler.
    std::vector<double> class_distribution() const {
        if (!probs_.empty()) return probs_;
        std::vector<double> out(pool_->num_classes, 0.0);
        for (std::size_t i : rows_) out[static_cast<std::size_t>(pool_->labels[i])] += 1.0;
        for (double& v : out) v /= static_cast<double>(rows_.size());
        return out;
    }

private:
    const DataPool* pool_;
    std::vector<std::size_t> rows_;
    std::vector<double> probs_;
    std::vector<double> cumulative_;
    std::vector<std::vector<std::size_t>> by_class_;
};

inline CandidateBatch sample_large_batch(const DataPool& pool, std::size_t size,
                                         const std::optional<ImbalanceSpec>& imbalance, Rng& rng) {
    return LargeBatchSampler(pool, Split::train, imbalance).sample(size, rng);
}

// ---------------------------------------------------------------------------
// Superclasses

/// Partition of the classes into groups; the identity map has one group per class.
struct SuperclassMap {
    std::vector<int> group_of_class;
    std::size_t num_groups = 0;

    static SuperclassMap identity(std::size_t num_classes) {
        SuperclassMap m;
        m.num_groups = num_classes;
        for (std::size_t c = 0; c < num_classes; ++c) m.group_of_class.push_back(static_cast<int>(c));
        return m;
    }

    /// Builds from explicit member lists; rejects overlap, gaps and empty groups.
    static SuperclassMap from_groups(std::size_t num_classes, const std::vector<std::vector<int>>& groups) {
        SuperclassMap m;
        m.num_groups = groups.size();
        m.group_of_class.assign(num_classes, -1);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (groups[g].empty()) throw InvalidInput("superclass map: group " + std::to_string(g) + " is empty");
            for (int c : groups[g]) {
                if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
                    throw InvalidInput("superclass map: class " + std::to_string(c) + " out of range");
                }
                if (m.group_of_class[static_cast<std::size_t>(c)] != -1) {
                    throw InvalidInput("superclass map: class " + std::to_string(c) + " appears in two groups");
                }
                m.group_of_class[static_cast<std::size_t>(c)] = static_cast<int>(g);
            }
        }
        m.validate(num_classes);
        return m;
    }

    /// Parses "0,1|2,3": groups separated by '|', members by ','.
    static SuperclassMap parse(std::size_t num_classes, std::string_view text) {
        std::vector<std::vector<int>> groups;
        std::size_t start = 0;
        for (;;) {
            const std::size_t bar = text.find('|', start);
            const auto part = text.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start);
            std::vector<int> members;
            for (auto cell : detail::split_commas(part)) {
                try {
                    members.push_back(static_cast<int>(detail::parse_label(cell, 0)));
                } catch (const ParseError&) {
                    throw InvalidInput("superclass map: bad class id '" + std::string(detail::trim(cell)) + "'");
                }
            }
            groups.push_back(std::move(members));
            if (bar == std::string_view::npos) break;
            start = bar + 1;
        }
        return from_groups(num_classes, groups);
    }

    std::string to_text() const {
        std::string out;
        for (std::size_t g = 0; g < num_groups; ++g) {
            if (g) out += '|';
            bool first = true;
            for (std::size_t c = 0; c < group_of_class.size(); ++c) {
                if (group_of_class[c] != static_cast<int>(g)) continue;
                if (!first) out += ',';
                out += std::to_string(c);
                first = false;
            }
        }
        return out;
    }

    void validate(std::size_t num_classes) const {
        if (group_of_class.size() != num_classes) throw InvalidInput("superclass map: does not cover every class");
        if (num_groups < 1 || num_groups > num_classes) throw InvalidInput("superclass map: bad group count");
        std::vector<std::size_t> sizes(num_groups, 0);
        for (int g : group_of_class) {
            if (g < 0 || static_cast<std::size_t>(g) >= num_groups) {
                throw InvalidInput("superclass map: class without a valid group");
            }
            sizes[static_cast<std::size_t>(g)] += 1;
        }
        for (std::size_t s : sizes) {
            if (s == 0) throw InvalidInput("superclass map: empty group");
        }
    }

    bool is_identity() const {
        if (num_groups != group_of_class.size()) return false;
        for (std::size_t c = 0; c < group_of_class.size(); ++c) {
            if (group_of_class[c] != static_cast<int>(c)) return false;
        }
        return true;
    }

    std::vector<int> members(std::size_t group) const {
        std::vector<int> out;
        for (std::size_t c = 0; c < group_of_class.size(); ++c) {
            if (group_of_class[c] == static_cast<int>(group)) out.push_back(static_cast<int>(c));
        }
        return out;
    }

    bool operator==(const SuperclassMap&) const = default;
};

}  // namespace reducr
