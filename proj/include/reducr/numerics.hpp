// numerics.hpp
//
// Deterministic numeric primitives shared by every other module: error types,
// the portable random stream, log-softmax / cross-entropy, and top-k selection
// with uniform random tie-breaking.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace reducr {

/// Precondition violated by caller-supplied data or arguments.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite or degenerate result.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure (unreadable input, unwritable sink).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/**
 * SplitMix64 stream (Steele, Lea & Flood 2014).
 *
 *   state += 0x9E3779B97F4A7C15
 *   z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
 *   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
 *   return z ^ (z >> 31)
 *
 * All derived draws (uniform reals, bounded integers, normals, shuffles) are
 * implemented here rather than through <random> distributions, whose output
 * is implementation-defined. Identical seeds give identical sequences on every
 * conforming platform.
 */
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    /// Independent stream for a (seed, stream id) pair.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        Rng mixer(seed ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
        return Rng(mixer.next());
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next(); }

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n); unbiased by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw InvalidInput("Rng::below: empty range");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite value");
    }
}

/// Stable log-softmax (max-subtraction).
inline std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.empty()) throw InvalidInput("log_softmax: empty input");
    require_finite(logits, "log_softmax");
    const double top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - top);
    const double log_norm = top + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
    return out;
}

inline double cross_entropy(std::span<const double> log_probs, std::size_t label) {
    if (label >= log_probs.size()) {
        throw InvalidInput("cross_entropy: label " + std::to_string(label) + " out of range for " +
                           std::to_string(log_probs.size()) + " classes");
    }
    // -(-0.0) would print as -0; keep the result a clean nonnegative zero.
    return std::max(0.0, -log_probs[label]);
}

/**
 * Indices of the k largest scores. Candidates are visited in a random order
 * drawn from `rng` and then stably sorted by score, so exactly-equal scores are
 * resolved uniformly at random. Returned in descending-score order.
 */
inline std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k, Rng& rng) {
    if (k > scores.size()) {
        throw InvalidInput("top_k_indices: k=" + std::to_string(k) + " exceeds " +
                           std::to_string(scores.size()) + " candidates");
    }
    require_finite(scores, "top_k_indices");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(k);
    return order;
}

/// 64-bit FNV-1a, used for dataset fingerprints.
class Fnv1a {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001B3ULL;
        }
    }
    template <class T>
    void value(const T& v) { bytes(&v, sizeof(T)); }
    std::uint64_t digest() const { return hash_; }

private:
    std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

/// Mean and sample (n-1) standard deviation; std is 0 for a single value.
struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> values) {
    MeanStd out;
    out.n = values.size();
    if (values.empty()) return out;
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

}  // namespace reducr
