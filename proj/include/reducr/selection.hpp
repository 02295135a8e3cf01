// selection.hpp
//
// The five batch-selection rules. Each picks k of the |B_t| candidates:
//
//   uniform    k distinct candidates uniformly at random
//   trainloss  rank-based sampling by target loss with selection pressure s_e
//   rholoss    top-k of target loss minus reference-model loss
//   reducr     top-k of sum_g w_g * excess_g (class-holdout term factored out)
//   payoff     top-k of min_g (target - expert_g - holdout_g)
//
// Scoring works on a LossTable so that rules can be exercised with hand-set
// losses; compute_losses() fills the table from models.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reducr/class_weights.hpp"
#include "reducr/experts.hpp"
#include "reducr/learner.hpp"
#include "reducr/numerics.hpp"

namespace reducr {

enum class Rule { uniform, trainloss, rholoss, reducr, payoff };

inline const char* to_string(Rule r) {
    switch (r) {
        case Rule::uniform: return "uniform";
        case Rule::trainloss: return "trainloss";
        case Rule::rholoss: return "rholoss";
        case Rule::reducr: return "reducr";
        case Rule::payoff: return "payoff";
    }
    return "?";
}

inline Rule parse_rule(std::string_view s) {
    for (Rule r : {Rule::uniform, Rule::trainloss, Rule::rholoss, Rule::reducr, Rule::payoff}) {
        if (s == to_string(r)) return r;
    }
    throw InvalidInput("unknown rule '" + std::string(s) + "' (expected uniform|trainloss|rholoss|reducr|payoff)");
}

inline bool needs_experts(Rule r) { return r == Rule::reducr || r == Rule::payoff; }
inline bool needs_reference(Rule r) { return r == Rule::rholoss; }

struct SelectionResult {
    std::vector<std::size_t> selected;
    std::vector<double> scores;  // empty for uniform
};

/// Losses of every candidate under the models that are present.
inline LossTable compute_losses(const WeightedBatch& candidates, const LearnerState& target, const ExpertBank* experts,
                                const LearnerState* reference) {
    LossTable t;
    t.target = per_example_loss(target, candidates);
    if (experts) {
        for (const auto& e : experts->experts) t.experts.push_back(per_example_loss(e, candidates));
    }
    if (reference) t.reference = per_example_loss(*reference, candidates);
    return t;
}

/// sum_g w_g * excess_loss(g); the point-independent holdout term is omitted.
inline std::vector<double> score_reducr(const LossTable& t, const ClassWeights& w, const ExcessTerms& terms) {
    if (t.experts.size() != w.size()) {
        throw InvalidInput("score_reducr: " + std::to_string(t.experts.size()) + " experts but " +
                           std::to_string(w.size()) + " weights");
    }
    for (const auto& e : t.experts) {
        if (e.size() != t.size()) throw InvalidInput("score_reducr: expert loss length mismatch");
    }
    const std::vector<double> wv = w.values();
    std::vector<double> scores(t.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        double s = 0.0;
        for (std::size_t g = 0; g < wv.size(); ++g) s += wv[g] * excess_loss(t, g, i, terms);
        scores[i] = s;
    }
    return scores;
}

inline SelectionResult select_reducr(const LossTable& t, const ClassWeights& w, std::size_t k, const ExcessTerms& terms,
                                     Rng& rng) {
    SelectionResult r;
    r.scores = score_reducr(t, w, terms);
    r.selected = top_k_indices(r.scores, k, rng);
    return r;
}

inline SelectionResult select_rho(const LossTable& t, std::size_t k, Rng& rng) {
    if (t.reference.size() != t.size()) throw InvalidInput("select_rho: reference losses missing");
    SelectionResult r;
    r.scores.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) r.scores[i] = t.target[i] - t.reference[i];
    r.selected = top_k_indices(r.scores, k, rng);
    return r;
}

/// Probability of drawing the candidate at 1-based rank i: s^(-i/n) / sum_j s^(-j/n).
inline std::vector<double> trainloss_rank_probabilities(std::size_t n, double selection_pressure) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::pow(selection_pressure, -static_cast<double>(i + 1) / static_cast<double>(n));
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

/**
 * Candidates are ranked by descending target loss (ties in random order) and
 * k of them drawn sequentially without replacement from the rank
 * distribution, renormalising over the remaining ranks after each draw.
 */
inline SelectionResult select_trainloss(std::span<const double> target_losses, std::size_t k, double selection_pressure,
                                        Rng& rng) {
    const std::size_t n = target_losses.size();
    if (!(selection_pressure > 1.0)) throw InvalidInput("select_trainloss: selection pressure must be > 1");
    if (k > n) throw InvalidInput("select_trainloss: k exceeds candidate count");
    SelectionResult r;
    r.scores.assign(target_losses.begin(), target_losses.end());
    const std::vector<std::size_t> ranked = top_k_indices(target_losses, n, rng);
    std::vector<double> mass = trainloss_rank_probabilities(n, selection_pressure);
    for (std::size_t draw = 0; draw < k; ++draw) {
        double remaining = 0.0;
        for (double m : mass) remaining += m;
        const double u = rng.uniform() * remaining;
        double acc = 0.0;
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (mass[i] == 0.0) continue;
            pick = i;
            acc += mass[i];
            if (u < acc) break;
        }
        r.selected.push_back(ranked[pick]);
        mass[pick] = 0.0;
    }
    return r;
}

/// k distinct indices of [0, n), uniformly without replacement (partial Fisher-Yates).
inline SelectionResult select_uniform(std::size_t n, std::size_t k, Rng& rng) {
    if (k > n) throw InvalidInput("select_uniform: k exceeds candidate count");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return {std::move(idx), {}};
}

/// Un-clipped by default: min over groups of (target - expert_g) - holdout_g.
inline std::vector<double> score_payoff(const LossTable& t, std::span<const double> holdout_means, bool clip = false) {
    if (t.experts.size() != holdout_means.size() || t.experts.empty()) {
        throw InvalidInput("score_payoff: expert count does not match holdout losses");
    }
    ExcessTerms terms;
    terms.clip = clip;
    std::vector<double> scores(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < t.experts.size(); ++g) {
            best = std::min(best, excess_loss(t, g, i, terms) - holdout_means[g]);
        }
        scores[i] = best;
    }
    return scores;
}

inline SelectionResult select_payoff(const LossTable& t, std::span<const double> holdout_means, std::size_t k, Rng& rng,
                                     bool clip = false) {
    SelectionResult r;
    r.scores = score_payoff(t, holdout_means, clip);
    r.selected = top_k_indices(r.scores, k, rng);
    return r;
}

/// Everything a rule may consult; fields a rule does not need can stay null.
struct SelectionContext {
    const LearnerState* target = nullptr;
    const ExpertBank* experts = nullptr;
    const LearnerState* reference = nullptr;
    const ClassWeights* weights = nullptr;
    const HoldoutLossTracker* tracker = nullptr;
    std::size_t k = 0;
    ExcessTerms terms;
    bool payoff_clip = false;
    double selection_pressure = 100.0;
    Rng* rng = nullptr;
};

/// Dispatches on `rule`; `losses` must hold what the rule needs.
inline SelectionResult select(Rule rule, const LossTable& losses, const SelectionContext& ctx) {
    if (!ctx.rng) throw InvalidInput("select: no random stream");
    if (ctx.k > losses.size() && rule != Rule::uniform) throw InvalidInput("select: k exceeds candidate count");
    switch (rule) {
        case Rule::uniform: return select_uniform(losses.size(), ctx.k, *ctx.rng);
        case Rule::trainloss: return select_trainloss(losses.target, ctx.k, ctx.selection_pressure, *ctx.rng);
        case Rule::rholoss: return select_rho(losses, ctx.k, *ctx.rng);
        case Rule::reducr:
            if (!ctx.weights) throw InvalidInput("select: reducr needs class weights");
            return select_reducr(losses, *ctx.weights, ctx.k, ctx.terms, *ctx.rng);
        case Rule::payoff:
            if (!ctx.tracker) throw InvalidInput("select: payoff needs a holdout tracker");
            return select_payoff(losses, ctx.tracker->values(), ctx.k, *ctx.rng, ctx.payoff_clip);
    }
    throw InvalidInput("select: unknown rule");
}

/// Model-level entry point: computes the loss table for `candidates` and selects.
inline SelectionResult select(Rule rule, const WeightedBatch& candidates, const SelectionContext& ctx) {
    if (!ctx.target) throw InvalidInput("select: no target model");
    if (needs_experts(rule) && !ctx.experts) throw InvalidInput(std::string("select: ") + to_string(rule) + " needs experts");
    if (needs_reference(rule) && !ctx.reference) throw InvalidInput("select: rholoss needs a reference model");
    LossTable t;
    if (rule == Rule::uniform) {
        t.target.assign(candidates.size(), 0.0);
    } else {
        t = compute_losses(candidates, *ctx.target, needs_experts(rule) ? ctx.experts : nullptr,
                           needs_reference(rule) ? ctx.reference : nullptr);
    }
    return select(rule, t, ctx);
}

}  // namespace reducr
