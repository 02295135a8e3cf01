// class_weights.hpp
//
// The online-learning side of REDUCR: class weights on the simplex, the
// per-class objective value alpha, the multiplicative-weights update, and the
// per-class holdout loss tracker (full refresh or debiased EWMA).
#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "reducr/data.hpp"
#include "reducr/experts.hpp"
#include "reducr/learner.hpp"
#include "reducr/numerics.hpp"

namespace reducr {

/**
 * Point on the probability simplex, stored as normalised log-weights so that
 * long runs never underflow a class to an unrecoverable exact zero.
 */
class ClassWeights {
public:
    ClassWeights() = default;

    /// Uniform 1/C.
    static ClassWeights uniform(std::size_t num_classes) {
        if (num_classes < 2) throw InvalidInput("class weights: need at least 2 classes");
        ClassWeights w;
        w.log_w_.assign(num_classes, -std::log(static_cast<double>(num_classes)));
        return w;
    }

    static ClassWeights from_values(std::span<const double> values) {
        if (values.empty()) throw InvalidInput("class weights: empty");
        double sum = 0.0;
        for (double v : values) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("class weights: entries must be finite and >= 0");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("class weights: entries must sum to 1");
        ClassWeights w;
        for (double v : values) w.log_w_.push_back(std::log(v));
        return w;
    }

    static ClassWeights from_log(std::vector<double> log_w) {
        ClassWeights w;
        w.log_w_ = std::move(log_w);
        w.normalise();
        return w;
    }

    std::size_t size() const { return log_w_.size(); }
    double operator[](std::size_t c) const { return std::exp(log_w_[c]); }
    const std::vector<double>& log_values() const { return log_w_; }

    std::vector<double> values() const {
        std::vector<double> out(log_w_.size());
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = std::exp(log_w_[c]);
        return out;
    }

private:
    void normalise() {
        double top = -std::numeric_limits<double>::infinity();
        for (double v : log_w_) {
            if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
                throw NumericError("class weights: non-finite log-weight");
            }
            top = std::max(top, v);
        }
        if (!std::isfinite(top)) throw NumericError("class weights: every weight underflowed to zero");
        double sum = 0.0;
        for (double v : log_w_) sum += std::exp(v - top);
        const double log_norm = top + std::log(sum);
        for (double& v : log_w_) v -= log_norm;
    }

    std::vector<double> log_w_;
};

inline ClassWeights init_weights(std::size_t num_classes) { return ClassWeights::uniform(num_classes); }

/**
 * w'_c = w_c exp(-eta alpha_c) / sum_j w_j exp(-eta alpha_j), evaluated as a
 * max-shifted log-sum-exp.
 */
inline ClassWeights update_weights(const ClassWeights& w, std::span<const double> alpha, double eta) {
    if (alpha.size() != w.size()) throw InvalidInput("update_weights: alpha has wrong dimension");
    if (!(eta >= 0.0)) throw InvalidInput("update_weights: eta must be >= 0");
    if (eta == 0.0) return w;
    std::vector<double> next(w.size());
    for (std::size_t c = 0; c < w.size(); ++c) {
        const double shift = eta * alpha[c];
        if (!std::isfinite(shift)) {
            std::ostringstream msg;
            msg << "update_weights: eta*alpha[" << c << "] = " << shift << " (eta=" << eta << ", alpha=" << alpha[c]
                << ")";
            throw NumericError(msg.str());
        }
        next[c] = w.log_values()[c] - shift;
    }
    return ClassWeights::from_log(std::move(next));
}

/// Per-candidate losses under the target model, each expert and the reference model.
struct LossTable {
    std::vector<double> target;
    std::vector<std::vector<double>> experts;  // [group][candidate]
    std::vector<double> reference;

    std::size_t size() const { return target.size(); }
};

/// Which terms of the excess loss / objective are active (all on = full REDUCR).
struct ExcessTerms {
    bool clip = true;
    bool model_loss = true;
    bool expert_loss = true;
    bool holdout_loss = true;
};

/// (model loss) - (expert-g loss) for candidate i, clipped at 0 when requested.
inline double excess_loss(const LossTable& t, std::size_t group, std::size_t i, const ExcessTerms& terms) {
    const double model = terms.model_loss ? t.target[i] : 0.0;
    const double expert = terms.expert_loss ? t.experts[group][i] : 0.0;
    const double e = model - expert;
    return terms.clip ? std::max(0.0, e) : e;
}

/// Per-class (per-group) mean holdout loss of the target model.
class HoldoutLossTracker {
public:
    enum class Mode { full, ewma };

    HoldoutLossTracker() = default;
    HoldoutLossTracker(Mode mode, std::size_t groups, double decay = 0.99)
        : mode_(mode), decay_(decay), values_(groups, 0.0), raw_(groups, 0.0), sum_(groups, 0.0), updates_(groups, 0) {
        if (!(decay >= 0.0 && decay <= 1.0)) throw InvalidInput("holdout tracker: decay must be in [0, 1]");
    }

    Mode mode() const { return mode_; }
    double decay() const { return decay_; }
    std::size_t size() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    double operator[](std::size_t g) const { return values_[g]; }
    std::size_t refreshes() const { return refreshes_; }

    /// Full mode: overwrite with fresh per-group means.
    void set(std::vector<double> means) {
        if (means.size() != values_.size()) throw InvalidInput("holdout tracker: dimension mismatch");
        values_ = std::move(means);
        ++refreshes_;
    }

    /**
     * EWMA mode: fold batch means into raw_g <- a raw_g + (1 - a) mean_g and
     * store raw_g / (1 - a^n_g), n_g counting updates of group g. With a = 1
     * the debiased value is the limit a -> 1, i.e. the running mean. Groups
     * absent from the batch (nullopt) keep their value.
     */
    void fold(const std::vector<std::optional<double>>& batch_means) {
        if (batch_means.size() != values_.size()) throw InvalidInput("holdout tracker: dimension mismatch");
        for (std::size_t g = 0; g < values_.size(); ++g) {
            if (!batch_means[g]) continue;
            const double m = *batch_means[g];
            updates_[g] += 1;
            if (decay_ == 1.0) {
                sum_[g] += m;
                values_[g] = sum_[g] / static_cast<double>(updates_[g]);
                continue;
            }
            raw_[g] = decay_ * raw_[g] + (1.0 - decay_) * m;
            values_[g] = raw_[g] / (1.0 - std::pow(decay_, static_cast<double>(updates_[g])));
        }
        ++refreshes_;
    }

private:
    Mode mode_ = Mode::full;
    double decay_ = 0.99;
    std::vector<double> values_;
    std::vector<double> raw_;
    std::vector<double> sum_;
    std::vector<std::size_t> updates_;
    std::size_t refreshes_ = 0;
};

/// Mean loss over the examples of each group, summed in batch order; nullopt for groups with no examples.
inline std::vector<std::optional<double>> group_mean_losses(const LearnerState& target, const WeightedBatch& batch,
                                                            const SuperclassMap& groups) {
    const std::vector<double> losses = per_example_loss(target, batch);
    std::vector<double> sum(groups.num_groups, 0.0);
    std::vector<std::size_t> count(groups.num_groups, 0);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const auto g = static_cast<std::size_t>(groups.group_of_class[static_cast<std::size_t>(batch.labels[i])]);
        sum[g] += losses[i];
        count[g] += 1;
    }
    std::vector<std::optional<double>> out(groups.num_groups);
    for (std::size_t g = 0; g < out.size(); ++g) {
        if (count[g] > 0) out[g] = sum[g] / static_cast<double>(count[g]);
    }
    return out;
}

/// Per-group mean loss of the current target on the whole holdout split.
inline HoldoutLossTracker refresh_holdout_full(HoldoutLossTracker tracker, const LearnerState& target,
                                               const WeightedBatch& holdout, const SuperclassMap& groups) {
    const auto means = group_mean_losses(target, holdout, groups);
    std::vector<double> values(means.size());
    for (std::size_t g = 0; g < means.size(); ++g) {
        if (!means[g]) throw InvalidInput("holdout tracker: group " + std::to_string(g) + " has no holdout examples");
        values[g] = *means[g];
    }
    tracker.set(std::move(values));
    return tracker;
}

/// Samples m holdout rows uniformly (with replacement) and folds their per-group means into the EWMA.
inline HoldoutLossTracker refresh_holdout_ewma(HoldoutLossTracker tracker, const LearnerState& target,
                                               const WeightedBatch& holdout, std::size_t m, const SuperclassMap& groups,
                                               Rng& rng) {
    if (m < 1) throw InvalidInput("holdout tracker: EWMA batch size must be >= 1");
    if (holdout.size() == 0) throw InvalidInput("holdout tracker: empty holdout split");
    WeightedBatch batch;
    batch.dim = holdout.dim;
    for (std::size_t i = 0; i < m; ++i) {
        const auto r = static_cast<std::size_t>(rng.below(holdout.size()));
        batch.push_back(holdout.row(r), holdout.labels[r]);
    }
    tracker.fold(group_mean_losses(target, batch, groups));
    return tracker;
}

/**
 * alpha_g = sum over selected candidates of excess_loss(g) - holdout_g.
 * The holdout term is the tracker's per-group mean (not a sum), and is
 * dropped when terms.holdout_loss is off.
 */
inline std::vector<double> compute_alpha(const LossTable& table, std::span<const std::size_t> selected,
                                         std::span<const double> holdout_means, const ExcessTerms& terms) {
    const std::size_t G = holdout_means.size();
    if (table.experts.size() != G) {
        throw InvalidInput("compute_alpha: have " + std::to_string(table.experts.size()) + " experts for " +
                           std::to_string(G) + " classes");
    }
    std::vector<double> alpha(G, 0.0);
    for (std::size_t g = 0; g < G; ++g) {
        double sum = 0.0;
        for (std::size_t i : selected) sum += excess_loss(table, g, i, terms);
        alpha[g] = sum - (terms.holdout_loss ? holdout_means[g] : 0.0);
    }
    return alpha;
}

}  // namespace reducr
