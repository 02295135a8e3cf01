// simulator.hpp
//
// The online batch-selection loop. Per step t:
//
//   1. refresh the holdout-loss tracker (full mode: once per epoch; ewma: every step)
//   2. draw a candidate batch B_t from the train split (optionally imbalanced)
//   3. select b_t with the configured rule using the current target theta_t
//   4. reducr only: alpha from theta_t's losses on b_t, multiplicative weight update
//   5. one SGD step of the target on b_t
//   6. on the evaluation cadence, evaluate on holdout and update checkpoints
//
// After the loop every checkpoint policy's model is evaluated on the test split.
#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "reducr/class_weights.hpp"
#include "reducr/config.hpp"
#include "reducr/data.hpp"
#include "reducr/experts.hpp"
#include "reducr/learner.hpp"
#include "reducr/numerics.hpp"
#include "reducr/reporting.hpp"
#include "reducr/selection.hpp"

namespace reducr {

/// A failure inside the loop, tagged with the 1-based step that failed.
class RunError : public std::runtime_error {
public:
    RunError(std::size_t step, const std::string& what)
        : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

struct Checkpoint {
    LearnerState state;
    std::size_t step = 0;
    double score = 0.0;
    bool set = false;
};

/**
 * best-average keeps the highest overall holdout accuracy, best-worst-class
 * the highest minimum per-class holdout accuracy, final always takes the
 * latest. Ties keep the earlier checkpoint.
 */
inline Checkpoint checkpoint(CheckpointPolicy policy, const LearnerState& current, std::size_t step,
                             const Evaluation& holdout, Checkpoint best) {
    double score = 0.0;
    switch (policy) {
        case CheckpointPolicy::best_average: score = holdout.average_accuracy; break;
        case CheckpointPolicy::best_worst_class: score = holdout.worst_class_accuracy(); break;
        case CheckpointPolicy::final: score = static_cast<double>(step); break;
    }
    if (!best.set || score > best.score) return {current, step, score, true};
    return best;
}

inline constexpr CheckpointPolicy kAllPolicies[] = {CheckpointPolicy::best_average, CheckpointPolicy::best_worst_class,
                                                    CheckpointPolicy::final};

struct SelectionLog {
    std::vector<std::vector<std::size_t>> pool_indices;  // per step
    std::vector<std::vector<int>> labels;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& s : pool_indices) n += s.size();
        return n;
    }
};

struct RunResult {
    RunHeader header;
    std::vector<MetricsRecord> records;  // one per executed step
    std::map<CheckpointPolicy, Checkpoint> checkpoints;
    std::map<CheckpointPolicy, TestMetrics> test;
    CheckpointPolicy policy = CheckpointPolicy::best_worst_class;
    SelectionLog selections;
    std::vector<std::size_t> tracker_refresh_steps;  // 0-based step index at which the tracker was refreshed
    LearnerState final_state;

    const TestMetrics& final_test() const { return test.at(policy); }

    RunFile to_run_file() const {
        RunFile f;
        f.header = header;
        f.records = records;
        f.final.policy = to_string(policy);
        f.final.test = final_test();
        for (const auto& [p, t] : test) f.final.checkpoints[to_string(p)] = t;
        return f;
    }
};

inline TestMetrics test_metrics(const Checkpoint& cp, const WeightedBatch& test) {
    const Evaluation ev = evaluate(cp.state, test);
    return {cp.step, ev.accuracy, ev.worst_class_accuracy(), ev.average_accuracy};
}

/// Steps per epoch for tracker refresh: ceil(|train| / |B_t|) unless overridden.
inline std::size_t refresh_period(const ExperimentConfig& config, const DataPool& pool) {
    if (config.tracker_refresh > 0) return config.tracker_refresh;
    const std::size_t n_train = pool.indices(Split::train).size();
    return std::max<std::size_t>(1, (n_train + config.large_batch - 1) / config.large_batch);
}

inline RunResult run_experiment(const ExperimentConfig& config, const DataPool& pool, const ExpertBank* experts,
                                const LearnerState* reference) {
    config.validate();
    pool.validate();
    if (pool.num_classes != config.num_classes) {
        throw InvalidInput("num_classes: config says " + std::to_string(config.num_classes) + " but the dataset has " +
                           std::to_string(pool.num_classes));
    }
    const SuperclassMap groups = config.groups();
    const Rule rule = config.rule;
    const std::size_t k = config.selected_per_step();
    const bool weighted = rule == Rule::reducr;
    const bool tracked = rule == Rule::reducr || rule == Rule::payoff;
    if (needs_experts(rule)) {
        if (!experts) throw InvalidInput(std::string("rule ") + to_string(rule) + " needs trained experts");
        experts->validate(pool.num_classes);
        if (!(experts->groups == groups)) throw InvalidInput("superclasses: expert bank groups differ from config");
    }
    if (needs_reference(rule) && !reference) throw InvalidInput("rule rholoss needs a reference model");

    const WeightedBatch holdout = pool.split_batch(Split::holdout);
    const WeightedBatch test = pool.split_batch(Split::test);
    if (holdout.size() == 0) throw InvalidInput("dataset: empty holdout split");
    if (test.size() == 0) throw InvalidInput("dataset: empty test split");
    if (tracked) {
        const auto counts = pool.class_counts(Split::holdout);
        std::vector<std::size_t> group_counts(groups.num_groups, 0);
        for (std::size_t c = 0; c < counts.size(); ++c) group_counts[static_cast<std::size_t>(groups.group_of_class[c])] += counts[c];
        for (std::size_t g = 0; g < group_counts.size(); ++g) {
            if (group_counts[g] == 0) throw InvalidInput("dataset: group " + std::to_string(g) + " has no holdout examples");
        }
    }
    const LargeBatchSampler sampler(pool, Split::train, config.imbalance());

    RunResult result;
    result.policy = config.checkpoint;
    result.header = {to_string(rule), config.seed, pool.num_classes, groups.num_groups,
                     fingerprint_hex(pool.fingerprint()), to_text(config)};

    Rng sample_rng = Rng::derive(config.seed, 101);
    Rng select_rng = Rng::derive(config.seed, 102);
    Rng tracker_rng = Rng::derive(config.seed, 103);
    LearnerState target = init_learner(config.architecture(pool.dim, pool.num_classes), Rng::derive(config.seed, 100).next());

    ClassWeights weights = weighted ? ClassWeights::uniform(groups.num_groups) : ClassWeights{};
    HoldoutLossTracker tracker(config.tracker, groups.num_groups, config.ewma_decay);
    const std::size_t period = refresh_period(config, pool);
    const ExcessTerms terms = config.terms();

    {
        const Evaluation ev = evaluate(target, holdout);
        for (auto p : kAllPolicies) result.checkpoints[p] = checkpoint(p, target, 0, ev, {});
    }

    const std::size_t steps = config.step_budget();
    result.records.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        try {
            if (tracked) {
                if (config.tracker == HoldoutLossTracker::Mode::full) {
                    if (t % period == 0) {
                        tracker = refresh_holdout_full(std::move(tracker), target, holdout, groups);
                        result.tracker_refresh_steps.push_back(t);
                    }
                } else {
                    tracker = refresh_holdout_ewma(std::move(tracker), target, holdout, config.ewma_batch, groups, tracker_rng);
                    result.tracker_refresh_steps.push_back(t);
                }
            }

            const CandidateBatch candidates = sampler.sample(config.large_batch, sample_rng);
            LossTable losses;
            if (rule == Rule::uniform) {
                losses.target.assign(candidates.size(), 0.0);
            } else {
                losses = compute_losses(candidates.batch, target, needs_experts(rule) ? experts : nullptr,
                                        needs_reference(rule) ? reference : nullptr);
            }
            SelectionContext ctx;
            ctx.target = &target;
            ctx.experts = experts;
            ctx.reference = reference;
            ctx.weights = &weights;
            ctx.tracker = &tracker;
            ctx.k = k;
            ctx.terms = terms;
            ctx.payoff_clip = config.payoff_clip;
            ctx.selection_pressure = config.selection_pressure;
            ctx.rng = &select_rng;
            const SelectionResult sel = select(rule, losses, ctx);

            MetricsRecord rec;
            rec.step = t + 1;
            rec.rule = to_string(rule);
            rec.seed = config.seed;
            rec.selected_histogram.assign(pool.num_classes, 0);
            std::vector<std::size_t> picked_rows;
            std::vector<int> picked_labels;
            for (std::size_t i : sel.selected) {
                picked_rows.push_back(candidates.pool_index[i]);
                picked_labels.push_back(candidates.batch.labels[i]);
                rec.selected_histogram[static_cast<std::size_t>(candidates.batch.labels[i])] += 1;
            }

            if (weighted) {
                rec.alpha = compute_alpha(losses, sel.selected, tracker.values(), terms);
                weights = update_weights(weights, rec.alpha, config.eta);
                rec.weights = weights.values();
            }

            const WeightedBatch chosen = pool.gather(picked_rows);
            target = sgd_step(target, chosen, config.learning_rate);

            if ((t + 1) % config.eval_every == 0 || t + 1 == steps) {
                const Evaluation ev = evaluate(target, holdout);
                rec.holdout = HoldoutMetrics::from(ev);
                for (auto p : kAllPolicies) result.checkpoints[p] = checkpoint(p, target, t + 1, ev, std::move(result.checkpoints[p]));
            }
            result.selections.pool_indices.push_back(std::move(picked_rows));
            result.selections.labels.push_back(std::move(picked_labels));
            result.records.push_back(std::move(rec));
        } catch (const RunError&) {
            throw;
        } catch (const std::exception& e) {
            throw RunError(t + 1, e.what());
        }
    }

    for (auto p : kAllPolicies) result.test[p] = test_metrics(result.checkpoints.at(p), test);
    result.final_state = std::move(target);
    return result;
}

// ---------------------------------------------------------------------------
// Dataset / model preparation shared by the CLI and the experiment harnesses.

/// Synthetic pool from the config knobs, or the configured CSV (with its split manifest when present).
inline DataPool load_dataset(const ExperimentConfig& config) {
    DataPool pool;
    if (config.data == "synthetic") {
        pool = generate_synthetic(config.synthetic());
        if (config.standardize) standardize(pool);
        return pool;
    }
    CsvSchema schema;
    schema.num_classes = config.num_classes;
    schema.train_fraction = config.train_fraction;
    schema.holdout_fraction = config.holdout_fraction;
    schema.seed = config.data_seed;
    schema.standardize = config.standardize;
    if (std::filesystem::exists(manifest_path_for(config.data))) schema.manifest_path = manifest_path_for(config.data);
    return load_csv(config.data, schema);
}

inline std::uint64_t reference_seed(std::uint64_t expert_seed) { return Rng::derive(expert_seed, 0x7265666572656e63ULL).next(); }

struct TrainedModels {
    ExpertBank experts;
    LearnerState reference;
};

/// Experts for config.groups() and the reference model, both from config.expert_seed.
inline TrainedModels train_models(const ExperimentConfig& config, const DataPool& pool) {
    const ExpertTrainingOptions opts = config.expert_options(pool.dim, pool.num_classes);
    TrainedModels m;
    m.experts = train_group_experts(pool, config.groups(), config.gamma, opts, config.expert_seed);
    m.reference = train_reference_model(pool, opts, reference_seed(config.expert_seed));
    return m;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRun {
    Rule rule = Rule::uniform;
    std::uint64_t seed = 0;
    std::optional<RunResult> result;
    std::string error;
};

struct SweepResult {
    std::vector<SweepRun> runs;  // rule-major, seeds in the given order
    std::vector<SummaryRow> summary;
    std::vector<std::string> warnings;
};

/**
 * Runs every (rule, seed) pair with the template config. Up to `parallel`
 * runs execute concurrently; each run is sequential and depends only on its
 * own (config, seed), so results match stand-alone runs. Failed runs are
 * recorded and excluded from the summary with a warning. `on_done` is called
 * once per finished run, serialised.
 */
inline SweepResult sweep(const ExperimentConfig& base, std::span<const std::uint64_t> seeds, std::span<const Rule> rules,
                         const DataPool& pool, const ExpertBank* experts, const LearnerState* reference,
                         std::size_t parallel = 1, const std::function<void(const SweepRun&)>& on_done = {}) {
    if (seeds.empty()) throw InvalidInput("sweep: need at least one seed");
    if (rules.empty()) throw InvalidInput("sweep: need at least one rule");
    SweepResult out;
    for (Rule r : rules) {
        for (std::uint64_t s : seeds) out.runs.push_back({r, s, std::nullopt, {}});
    }
    std::atomic<std::size_t> next{0};
    std::mutex done_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= out.runs.size()) return;
            SweepRun& run = out.runs[i];
            ExperimentConfig cfg = base;
            cfg.rule = run.rule;
            cfg.seed = run.seed;
            try {
                run.result = run_experiment(cfg, pool, experts, reference);
            } catch (const std::exception& e) {
                run.error = e.what();
            }
            if (on_done) {
                std::lock_guard<std::mutex> lock(done_mutex);
                on_done(run);
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(parallel, out.runs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }

    std::vector<std::pair<std::string, TestMetrics>> finished;
    for (const auto& run : out.runs) {
        if (run.result) {
            finished.emplace_back(to_string(run.rule), run.result->final_test());
        } else {
            out.warnings.push_back(std::string(to_string(run.rule)) + " seed " + std::to_string(run.seed) +
                                   " failed: " + run.error);
        }
    }
    out.summary = aggregate(finished);
    return out;
}

}  // namespace reducr
