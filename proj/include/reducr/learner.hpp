// learner.hpp
//
// Small differentiable classifiers trained with plain SGD. One LearnerState
// type serves as the target model, the per-class expert models, and the
// reference model.
//
// Parameter layout (flat, row-major):
//   softmax:  W[C][d], b[C]
//   mlp:      W1[h][d], b1[h], W2[C][h], b2[C]     (tanh hidden activation)
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "reducr/numerics.hpp"

namespace reducr {

struct Architecture {
    enum class Kind { softmax, mlp };

    Kind kind = Kind::softmax;
    std::size_t input_dim = 0;
    std::size_t hidden = 0;  // mlp only
    std::size_t num_classes = 0;

    static Architecture softmax(std::size_t d, std::size_t c) { return {Kind::softmax, d, 0, c}; }
    static Architecture mlp(std::size_t d, std::size_t h, std::size_t c) { return {Kind::mlp, d, h, c}; }

    std::size_t parameter_count() const {
        if (kind == Kind::softmax) return num_classes * input_dim + num_classes;
        return hidden * input_dim + hidden + num_classes * hidden + num_classes;
    }

    void validate() const {
        if (input_dim < 1) throw InvalidInput("architecture: input dimension must be >= 1");
        if (num_classes < 2) throw InvalidInput("architecture: num_classes must be >= 2");
        if (kind == Kind::mlp && hidden < 1) throw InvalidInput("architecture: mlp hidden width must be >= 1");
    }

    bool operator==(const Architecture&) const = default;
};

inline std::string to_string(Architecture::Kind kind) { return kind == Architecture::Kind::softmax ? "softmax" : "mlp"; }

struct LearnerState {
    Architecture arch;
    std::vector<double> params;
    std::int64_t steps = 0;

    bool operator==(const LearnerState&) const = default;
};

/// Examples with per-example nonnegative weights (default 1).
struct WeightedBatch {
    std::size_t dim = 0;
    std::vector<double> features;  // size() * dim, row-major
    std::vector<int> labels;
    std::vector<double> weights;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }

    void push_back(std::span<const double> x, int label, double weight = 1.0) {
        if (dim == 0 && labels.empty()) dim = x.size();
        if (x.size() != dim) throw InvalidInput("WeightedBatch: feature length mismatch");
        if (weight < 0.0) throw InvalidInput("WeightedBatch: negative weight");
        features.insert(features.end(), x.begin(), x.end());
        labels.push_back(label);
        weights.push_back(weight);
    }

    void validate() const {
        if (features.size() != labels.size() * dim || weights.size() != labels.size()) {
            throw InvalidInput("WeightedBatch: inconsistent field lengths");
        }
        for (double w : weights) {
            if (!(w >= 0.0)) throw InvalidInput("WeightedBatch: weights must be nonnegative");
        }
    }
};

/// Zeros for softmax regression; U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases for the MLP.
inline LearnerState init_learner(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    LearnerState state{arch, std::vector<double>(arch.parameter_count(), 0.0), 0};
    if (arch.kind == Architecture::Kind::mlp) {
        Rng rng(seed);
        const std::size_t d = arch.input_dim, h = arch.hidden, c = arch.num_classes;
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(d));
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(h));
        double* w1 = state.params.data();
        double* w2 = w1 + h * d + h;
        for (std::size_t i = 0; i < h * d; ++i) w1[i] = bound1 * (2.0 * rng.uniform() - 1.0);
        for (std::size_t i = 0; i < c * h; ++i) w2[i] = bound2 * (2.0 * rng.uniform() - 1.0);
    }
    return state;
}

namespace detail {

inline void check_input(const LearnerState& state, const WeightedBatch& batch) {
    if (batch.size() > 0 && batch.dim != state.arch.input_dim) {
        throw InvalidInput("feature dimension " + std::to_string(batch.dim) + " does not match model input " +
                           std::to_string(state.arch.input_dim));
    }
    for (int y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= state.arch.num_classes) {
            throw InvalidInput("label " + std::to_string(y) + " out of range");
        }
    }
}

// Logits for one example; `hidden` receives the tanh activations for the MLP.
inline void forward(const LearnerState& state, std::span<const double> x, std::span<double> logits,
                    std::span<double> hidden) {
    const Architecture& a = state.arch;
    const double* p = state.params.data();
    if (a.kind == Architecture::Kind::softmax) {
        const double* w = p;
        const double* b = p + a.num_classes * a.input_dim;
        for (std::size_t c = 0; c < a.num_classes; ++c) {
            double z = b[c];
            const double* wc = w + c * a.input_dim;
            for (std::size_t j = 0; j < a.input_dim; ++j) z += wc[j] * x[j];
            logits[c] = z;
        }
        return;
    }
    const double* w1 = p;
    const double* b1 = w1 + a.hidden * a.input_dim;
    const double* w2 = b1 + a.hidden;
    const double* b2 = w2 + a.num_classes * a.hidden;
    for (std::size_t u = 0; u < a.hidden; ++u) {
        double s = b1[u];
        const double* wu = w1 + u * a.input_dim;
        for (std::size_t j = 0; j < a.input_dim; ++j) s += wu[j] * x[j];
        hidden[u] = std::tanh(s);
    }
    for (std::size_t c = 0; c < a.num_classes; ++c) {
        double z = b2[c];
        const double* wc = w2 + c * a.hidden;
        for (std::size_t u = 0; u < a.hidden; ++u) z += wc[u] * hidden[u];
        logits[c] = z;
    }
}

}  // namespace detail

inline std::vector<double> logits(const LearnerState& state, std::span<const double> x) {
    if (x.size() != state.arch.input_dim) throw InvalidInput("logits: feature dimension mismatch");
    std::vector<double> out(state.arch.num_classes), hidden(state.arch.hidden);
    detail::forward(state, x, out, hidden);
    return out;
}

/// Unweighted cross-entropy of each example.
inline std::vector<double> per_example_loss(const LearnerState& state, const WeightedBatch& batch) {
    detail::check_input(state, batch);
    std::vector<double> out(batch.size());
    std::vector<double> z(state.arch.num_classes), hidden(state.arch.hidden);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        detail::forward(state, batch.row(i), z, hidden);
        out[i] = cross_entropy(log_softmax(z), static_cast<std::size_t>(batch.labels[i]));
    }
    return out;
}

/// Weighted mean cross-entropy: (1/n) sum_i w_i * loss_i.
inline double weighted_mean_loss(const LearnerState& state, const WeightedBatch& batch) {
    if (batch.size() == 0) return 0.0;
    const std::vector<double> losses = per_example_loss(state, batch);
    double sum = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) sum += batch.weights[i] * losses[i];
    return sum / static_cast<double>(losses.size());
}

/// Analytic gradient of weighted_mean_loss, in the flat parameter layout.
inline std::vector<double> gradient(const LearnerState& state, const WeightedBatch& batch) {
    detail::check_input(state, batch);
    batch.validate();
    const Architecture& a = state.arch;
    std::vector<double> grad(state.params.size(), 0.0);
    if (batch.size() == 0) return grad;

    const double inv_n = 1.0 / static_cast<double>(batch.size());
    std::vector<double> z(a.num_classes), hidden(a.hidden), delta(a.num_classes), dhidden(a.hidden);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double w = batch.weights[i] * inv_n;
        if (w == 0.0) continue;
        const auto x = batch.row(i);
        detail::forward(state, x, z, hidden);
        const std::vector<double> lp = log_softmax(z);
        for (std::size_t c = 0; c < a.num_classes; ++c) {
            delta[c] = w * (std::exp(lp[c]) - (static_cast<int>(c) == batch.labels[i] ? 1.0 : 0.0));
        }
        if (a.kind == Architecture::Kind::softmax) {
            double* gw = grad.data();
            double* gb = gw + a.num_classes * a.input_dim;
            for (std::size_t c = 0; c < a.num_classes; ++c) {
                double* gwc = gw + c * a.input_dim;
                for (std::size_t j = 0; j < a.input_dim; ++j) gwc[j] += delta[c] * x[j];
                gb[c] += delta[c];
            }
            continue;
        }
        const double* w2 = state.params.data() + a.hidden * a.input_dim + a.hidden;
        double* gw1 = grad.data();
        double* gb1 = gw1 + a.hidden * a.input_dim;
        double* gw2 = gb1 + a.hidden;
        double* gb2 = gw2 + a.num_classes * a.hidden;
        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        for (std::size_t c = 0; c < a.num_classes; ++c) {
            double* gw2c = gw2 + c * a.hidden;
            const double* w2c = w2 + c * a.hidden;
            for (std::size_t u = 0; u < a.hidden; ++u) {
                gw2c[u] += delta[c] * hidden[u];
                dhidden[u] += delta[c] * w2c[u];
            }
            gb2[c] += delta[c];
        }
        for (std::size_t u = 0; u < a.hidden; ++u) {
            const double da = dhidden[u] * (1.0 - hidden[u] * hidden[u]);
            double* gw1u = gw1 + u * a.input_dim;
            for (std::size_t j = 0; j < a.input_dim; ++j) gw1u[j] += da * x[j];
            gb1[u] += da;
        }
    }
    return grad;
}

/// params' = params - learning_rate * gradient; step count incremented.
inline LearnerState sgd_step(const LearnerState& state, const WeightedBatch& batch, double learning_rate) {
    if (!(learning_rate > 0.0)) throw InvalidInput("sgd_step: learning rate must be > 0");
    const std::vector<double> g = gradient(state, batch);
    LearnerState next = state;
    for (std::size_t i = 0; i < g.size(); ++i) next.params[i] = state.params[i] - learning_rate * g[i];
    next.steps += 1;
    for (double v : next.params) {
        if (!std::isfinite(v)) throw NumericError("sgd_step: parameters became non-finite");
    }
    return next;
}

/// Per-class metrics over a split. Classes absent from the split have no value.
struct Evaluation {
    std::vector<std::size_t> counts;
    std::vector<std::optional<double>> accuracy;
    std::vector<std::optional<double>> mean_loss;
    double average_accuracy = 0.0;  // overall fraction correct

    /// Minimum over classes that are present.
    double worst_class_accuracy() const {
        double worst = 1.0;
        bool any = false;
        for (const auto& a : accuracy) {
            if (a) {
                worst = any ? std::min(worst, *a) : *a;
                any = true;
            }
        }
        return any ? worst : 0.0;
    }
};

inline Evaluation evaluate(const LearnerState& state, const WeightedBatch& split) {
    if (split.size() == 0) throw InvalidInput("evaluate: empty split");
    detail::check_input(state, split);
    const std::size_t C = state.arch.num_classes;
    std::vector<std::size_t> counts(C, 0), correct(C, 0);
    std::vector<double> loss_sum(C, 0.0);
    std::vector<double> z(C), hidden(state.arch.hidden);
    for (std::size_t i = 0; i < split.size(); ++i) {
        detail::forward(state, split.row(i), z, hidden);
        const auto y = static_cast<std::size_t>(split.labels[i]);
        const auto pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
        counts[y] += 1;
        if (pred == y) correct[y] += 1;
        loss_sum[y] += cross_entropy(log_softmax(z), y);
    }
    Evaluation ev;
    ev.counts = counts;
    ev.accuracy.resize(C);
    ev.mean_loss.resize(C);
    std::size_t total_correct = 0;
    for (std::size_t c = 0; c < C; ++c) {
        total_correct += correct[c];
        if (counts[c] == 0) continue;
        ev.accuracy[c] = static_cast<double>(correct[c]) / static_cast<double>(counts[c]);
        ev.mean_loss[c] = loss_sum[c] / static_cast<double>(counts[c]);
    }
    ev.average_accuracy = static_cast<double>(total_correct) / static_cast<double>(split.size());
    return ev;
}

// Checkpoint text layout, version 1:
//
//   reducr-learner 1
//   architecture <softmax|mlp> <input_dim> <hidden> <num_classes>
//   steps <n>
//   parameters <count>
//   <one hexadecimal float per line>
//
// Hex floats make the round trip bit-exact.
inline void save_learner(std::ostream& out, const LearnerState& state) {
    out << "reducr-learner 1\n";
    out << "architecture " << to_string(state.arch.kind) << ' ' << state.arch.input_dim << ' '
        << state.arch.hidden << ' ' << state.arch.num_classes << '\n';
    out << "steps " << state.steps << '\n';
    out << "parameters " << state.params.size() << '\n';
    out << std::hexfloat;
    for (double v : state.params) out << v << '\n';
    out << std::defaultfloat;
}

inline LearnerState load_learner(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::istringstream {
        if (!std::getline(in, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
        ++line_no;
        return std::istringstream(line);
    };
    {
        auto ss = next_line();
        std::string magic;
        int version = 0;
        ss >> magic >> version;
        if (magic != "reducr-learner") throw ParseError(line_no, "not a learner checkpoint");
        if (version != 1) throw ParseError(line_no, "unsupported checkpoint version " + std::to_string(version));
    }
    LearnerState state;
    {
        auto ss = next_line();
        std::string key, kind;
        ss >> key >> kind >> state.arch.input_dim >> state.arch.hidden >> state.arch.num_classes;
        if (key != "architecture" || !ss) throw ParseError(line_no, "expected architecture line");
        if (kind == "softmax") state.arch.kind = Architecture::Kind::softmax;
        else if (kind == "mlp") state.arch.kind = Architecture::Kind::mlp;
        else throw ParseError(line_no, "unknown architecture '" + kind + "'");
    }
    {
        auto ss = next_line();
        std::string key;
        ss >> key >> state.steps;
        if (key != "steps" || !ss) throw ParseError(line_no, "expected steps line");
    }
    std::size_t count = 0;
    {
        auto ss = next_line();
        std::string key;
        ss >> key >> count;
        if (key != "parameters" || !ss) throw ParseError(line_no, "expected parameters line");
    }
    if (count != state.arch.parameter_count()) throw ParseError(line_no, "parameter count does not match architecture");
    state.params.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        next_line();
        char* end = nullptr;
        state.params[i] = std::strtod(line.c_str(), &end);
        if (end == line.c_str() || !std::isfinite(state.params[i])) throw ParseError(line_no, "bad parameter value");
    }
    return state;
}

inline void save_learner(const std::string& path, const LearnerState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    save_learner(out, state);
    if (!out) throw IoError("failed writing checkpoint " + path);
}

inline LearnerState load_learner(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path);
    return load_learner(in);
}

}  // namespace reducr
