// experts.hpp
//
// Amortised class-irreducible loss models ("experts") and the RHO-Loss
// reference model. Each expert is trained on the holdout split with examples
// of its class (or superclass) up-weighted by (1 + gamma); the reference model
// is the same procedure with every weight equal to 1. Experts are frozen once
// trained.
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reducr/data.hpp"
#include "reducr/learner.hpp"
#include "reducr/numerics.hpp"

namespace reducr {

struct ExpertTrainingOptions {
    Architecture arch;
    std::size_t steps = 3000;
    std::size_t batch_size = 64;
    double learning_rate = 0.1;
    /// Fraction of the holdout split held back to pick the best checkpoint.
    double validation_fraction = 0.2;
    std::size_t eval_every = 50;
    /// Draw training batches with the imbalanced sampler.
    std::optional<ImbalanceSpec> imbalance;
};

/// Diagnostics from one training run.
struct TrainReport {
    std::vector<std::string> warnings;
    std::size_t best_step = 0;
    double best_validation_loss = 0.0;
};

namespace detail {

/**
 * Shared trainer. Holdout rows are shuffled once; the first
 * round(validation_fraction * n) become the validation slice. Every
 * `eval_every` steps (and at the end) the weighted loss on the validation
 * slice is computed; the lowest wins, earlier on ties. When training batches
 * come from the imbalanced sampler, validation examples are importance
 * weighted to that sampler's class distribution.
 */
inline LearnerState train_weighted(const DataPool& pool, const std::vector<bool>& upweighted, double gamma,
                                   const ExpertTrainingOptions& opts, std::uint64_t seed, TrainReport* report) {
    std::vector<std::size_t> rows = pool.indices(Split::holdout);
    if (rows.empty()) throw InvalidInput("expert training: empty holdout split");
    if (opts.batch_size < 1) throw InvalidInput("expert training: batch size must be >= 1");
    if (!(opts.validation_fraction >= 0.0 && opts.validation_fraction < 1.0)) {
        throw InvalidInput("expert training: validation fraction must be in [0, 1)");
    }

    Rng split_rng = Rng::derive(seed, 10);
    split_rng.shuffle(std::span<std::size_t>(rows));
    auto n_val = static_cast<std::size_t>(std::llround(opts.validation_fraction * static_cast<double>(rows.size())));
    if (n_val >= rows.size()) n_val = rows.size() - 1;
    std::vector<std::size_t> val_rows(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> fit_rows(rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(fit_rows.begin(), fit_rows.end());

    auto weight_of = [&](int label) {
        return 1.0 + gamma * (upweighted.empty() || !upweighted[static_cast<std::size_t>(label)] ? 0.0 : 1.0);
    };

    const LargeBatchSampler sampler(pool, fit_rows, opts.imbalance);

    WeightedBatch val = pool.gather(val_rows);
    if (!val_rows.empty()) {
        std::vector<double> importance(pool.num_classes, 1.0);
        if (opts.imbalance) {
            const std::vector<double> target = sampler.class_distribution();
            std::vector<double> freq(pool.num_classes, 0.0);
            for (int y : val.labels) freq[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(val.size());
            for (std::size_t c = 0; c < pool.num_classes; ++c) importance[c] = freq[c] > 0 ? target[c] / freq[c] : 0.0;
        }
        for (std::size_t i = 0; i < val.size(); ++i) val.weights[i] = importance[val.labels[i]] * weight_of(val.labels[i]);
    }

    Rng batch_rng = Rng::derive(seed, 11);
    LearnerState state = init_learner(opts.arch, Rng::derive(seed, 12).next());
    LearnerState best = state;
    double best_loss = val_rows.empty() ? 0.0 : weighted_mean_loss(state, val);
    std::size_t best_step = 0;

    for (std::size_t step = 1; step <= opts.steps; ++step) {
        CandidateBatch b = sampler.sample(opts.batch_size, batch_rng);
        for (std::size_t i = 0; i < b.batch.size(); ++i) b.batch.weights[i] = weight_of(b.batch.labels[i]);
        state = sgd_step(state, b.batch, opts.learning_rate);
        if (val_rows.empty()) continue;
        if (step % std::max<std::size_t>(opts.eval_every, 1) == 0 || step == opts.steps) {
            const double loss = weighted_mean_loss(state, val);
            if (loss < best_loss) {
                best_loss = loss;
                best = state;
                best_step = step;
            }
        }
    }
    if (val_rows.empty()) {
        best = state;
        best_step = opts.steps;
    }
    if (report) {
        report->best_step = best_step;
        report->best_validation_loss = best_loss;
    }
    return best;
}

}  // namespace detail

/// Expert for the classes in `members` (one class, or a superclass).
inline LearnerState train_group_expert(const DataPool& pool, const std::vector<int>& members, double gamma,
                                       const ExpertTrainingOptions& opts, std::uint64_t seed,
                                       TrainReport* report = nullptr) {
    if (!(gamma > 0.0)) throw InvalidInput("expert training: gamma must be > 0");
    std::vector<bool> flagged(pool.num_classes, false);
    for (int c : members) {
        if (c < 0 || static_cast<std::size_t>(c) >= pool.num_classes) throw InvalidInput("expert training: class out of range");
        flagged[static_cast<std::size_t>(c)] = true;
    }
    const auto counts = pool.class_counts(Split::holdout);
    std::size_t present = 0;
    for (int c : members) present += counts[static_cast<std::size_t>(c)];
    TrainReport local;
    TrainReport& rep = report ? *report : local;
    if (present == 0 && pool.size() > 0) {
        rep.warnings.push_back("no holdout examples for expert classes; weights degenerate to 1");
    }
    return detail::train_weighted(pool, flagged, gamma, opts, seed, &rep);
}

inline LearnerState train_class_expert(const DataPool& pool, int cls, double gamma, const ExpertTrainingOptions& opts,
                                       std::uint64_t seed, TrainReport* report = nullptr) {
    return train_group_expert(pool, {cls}, gamma, opts, seed, report);
}

inline LearnerState train_reference_model(const DataPool& pool, const ExpertTrainingOptions& opts, std::uint64_t seed,
                                          TrainReport* report = nullptr) {
    return detail::train_weighted(pool, {}, 0.0, opts, seed, report);
}

struct ExpertBank {
    std::vector<LearnerState> experts;  // one per group
    SuperclassMap groups;
    double gamma = 9.0;
    std::size_t training_steps = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> warnings;

    std::size_t size() const { return experts.size(); }

    void validate(std::size_t num_classes) const {
        groups.validate(num_classes);
        if (experts.size() != groups.num_groups) throw InvalidInput("expert bank: expert count does not match groups");
        for (const auto& e : experts) {
            if (!(e.arch == experts.front().arch)) throw InvalidInput("expert bank: experts differ in architecture");
        }
    }
};

/// One expert per group of `groups`, expert g seeded with Rng::derive(seed, g).
inline ExpertBank train_group_experts(const DataPool& pool, const SuperclassMap& groups, double gamma,
                                      const ExpertTrainingOptions& opts, std::uint64_t seed) {
    groups.validate(pool.num_classes);
    ExpertBank bank;
    bank.groups = groups;
    bank.gamma = gamma;
    bank.training_steps = opts.steps;
    for (std::size_t g = 0; g < groups.num_groups; ++g) {
        const std::uint64_t s = Rng::derive(seed, g).next();
        TrainReport rep;
        bank.experts.push_back(train_group_expert(pool, groups.members(g), gamma, opts, s, &rep));
        bank.seeds.push_back(s);
        for (auto& w : rep.warnings) bank.warnings.push_back("group " + std::to_string(g) + ": " + w);
    }
    return bank;
}

inline ExpertBank train_class_experts(const DataPool& pool, double gamma, const ExpertTrainingOptions& opts,
                                      std::uint64_t seed) {
    return train_group_experts(pool, SuperclassMap::identity(pool.num_classes), gamma, opts, seed);
}

// On-disk layout of an expert directory:
//   expert_<g>.ckpt      one learner checkpoint per group
//   reference.ckpt       optional RHO-Loss reference model
//   manifest.json        gamma, steps, seeds, groups and file names

inline void save_expert_bank(const std::string& dir, const ExpertBank& bank,
                             const std::optional<LearnerState>& reference = std::nullopt,
                             const nlohmann::json& extra = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t g = 0; g < bank.experts.size(); ++g) {
        const std::string name = "expert_" + std::to_string(g) + ".ckpt";
        save_learner((std::filesystem::path(dir) / name).string(), bank.experts[g]);
        files.push_back(name);
    }
    nlohmann::json manifest = {
        {"format", "reducr-experts"},
        {"version", 1},
        {"gamma", bank.gamma},
        {"steps", bank.training_steps},
        {"seeds", bank.seeds},
        {"num_classes", bank.groups.group_of_class.size()},
        {"groups", bank.groups.to_text()},
        {"experts", files},
        {"warnings", bank.warnings},
    };
    if (reference) {
        save_learner((std::filesystem::path(dir) / "reference.ckpt").string(), *reference);
        manifest["reference"] = "reference.ckpt";
    }
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
    std::ofstream out(std::filesystem::path(dir) / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write expert manifest in " + dir);
    out << manifest.dump(2) << '\n';
}

struct LoadedExperts {
    ExpertBank bank;
    std::optional<LearnerState> reference;
    nlohmann::json manifest;
};

inline LoadedExperts load_expert_bank(const std::string& dir) {
    const auto manifest_path = std::filesystem::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot read " + manifest_path.string());
    LoadedExperts out;
    out.manifest = nlohmann::json::parse(in);
    if (out.manifest.value("format", "") != "reducr-experts") throw InvalidInput("not an expert manifest: " + manifest_path.string());
    const auto num_classes = out.manifest.at("num_classes").get<std::size_t>();
    out.bank.gamma = out.manifest.at("gamma").get<double>();
    out.bank.training_steps = out.manifest.at("steps").get<std::size_t>();
    out.bank.seeds = out.manifest.at("seeds").get<std::vector<std::uint64_t>>();
    out.bank.groups = SuperclassMap::parse(num_classes, out.manifest.at("groups").get<std::string>());
    out.bank.warnings = out.manifest.value("warnings", std::vector<std::string>{});
    for (const auto& name : out.manifest.at("experts")) {
        out.bank.experts.push_back(load_learner((std::filesystem::path(dir) / name.get<std::string>()).string()));
    }
    if (out.manifest.contains("reference")) {
        out.reference = load_learner((std::filesystem::path(dir) / out.manifest.at("reference").get<std::string>()).string());
    }
    out.bank.validate(num_classes);
    return out;
}

}  // namespace reducr
