// config.hpp
//
// ExperimentConfig and its flat key-value text form:
//
//   # comment
//   spec_version = 1
//   rule = reducr
//   eta = 1e-4
//
// Every key maps to one field; unknown keys, duplicate keys and a missing or
// unsupported spec_version are errors.
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "reducr/data.hpp"
#include "reducr/experts.hpp"
#include "reducr/learner.hpp"
#include "reducr/numerics.hpp"
#include "reducr/selection.hpp"

namespace reducr {

inline constexpr int kConfigVersion = 1;

enum class CheckpointPolicy { best_average, best_worst_class, final };

inline const char* to_string(CheckpointPolicy p) {
    switch (p) {
        case CheckpointPolicy::best_average: return "best-average";
        case CheckpointPolicy::best_worst_class: return "best-worst-class";
        case CheckpointPolicy::final: return "final";
    }
    return "?";
}

inline CheckpointPolicy parse_checkpoint_policy(std::string_view s) {
    for (auto p : {CheckpointPolicy::best_average, CheckpointPolicy::best_worst_class, CheckpointPolicy::final}) {
        if (s == to_string(p)) return p;
    }
    throw InvalidInput("unknown checkpoint policy '" + std::string(s) + "'");
}

struct ExperimentConfig {
    Rule rule = Rule::reducr;

    // dataset
    std::string data = "synthetic";  // "synthetic" or a CSV path
    std::size_t num_classes = 4;
    std::size_t dim = 10;
    std::size_t n_train = 8000;
    std::size_t n_holdout = 2000;
    std::size_t n_test = 2000;
    double separation = 2.0;
    double label_noise = 0.0;
    bool noisy_holdout = false;
    std::uint64_t data_seed = 0;
    double train_fraction = 0.6;
    double holdout_fraction = 0.2;
    bool standardize = false;

    // selection
    std::size_t large_batch = 320;
    std::size_t k = 0;  // 0: derive from select_fraction
    double select_fraction = 0.10;
    std::size_t steps = 3000;
    std::size_t total_points = 0;  // T; when nonzero it overrides steps with ceil(T / k)
    double eta = 1e-4;
    double gamma = 9.0;
    double selection_pressure = 100.0;
    bool clip = true;
    bool payoff_clip = false;
    bool drop_model_loss = false;
    bool drop_expert_term = false;
    bool drop_holdout_term = false;

    // holdout loss tracker
    HoldoutLossTracker::Mode tracker = HoldoutLossTracker::Mode::full;
    double ewma_decay = 0.99;
    std::size_t ewma_batch = 320;
    std::size_t tracker_refresh = 0;  // 0: once per epoch of ceil(|train| / |B_t|) steps

    // imbalance / superclasses
    std::vector<int> imbalance_classes;
    double imbalance_p = 0.1;
    bool imbalance_experts = true;
    std::string superclasses;  // "" or e.g. "0,1|2,3"

    // evaluation
    std::size_t eval_every = 25;
    CheckpointPolicy checkpoint = CheckpointPolicy::best_worst_class;

    // target model
    Architecture::Kind arch = Architecture::Kind::softmax;
    std::size_t hidden = 16;
    double learning_rate = 0.1;

    // experts
    std::size_t expert_steps = 3000;
    std::size_t expert_batch = 64;
    double expert_learning_rate = 0.1;
    double expert_validation_fraction = 0.2;
    std::size_t expert_eval_every = 50;

    std::uint64_t seed = 0;         // run seed: target init, batch sampling, selection
    std::uint64_t expert_seed = 0;  // expert and reference training

    std::size_t step_budget() const {
        if (total_points == 0) return steps;
        const std::size_t k_eff = selected_per_step();
        return (total_points + k_eff - 1) / k_eff;
    }

    std::size_t selected_per_step() const {
        if (k > 0) return k;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(select_fraction * static_cast<double>(large_batch))));
    }

    Architecture architecture(std::size_t input_dim, std::size_t classes) const {
        return arch == Architecture::Kind::softmax ? Architecture::softmax(input_dim, classes)
                                                   : Architecture::mlp(input_dim, hidden, classes);
    }

    std::optional<ImbalanceSpec> imbalance() const {
        if (imbalance_classes.empty()) return std::nullopt;
        return ImbalanceSpec{imbalance_classes, imbalance_p};
    }

    SuperclassMap groups() const {
        if (superclasses.empty()) return SuperclassMap::identity(num_classes);
        return SuperclassMap::parse(num_classes, superclasses);
    }

    ExcessTerms terms() const { return {clip, !drop_model_loss, !drop_expert_term, !drop_holdout_term}; }

    SyntheticSpec synthetic() const {
        return {num_classes, dim, n_train, n_holdout, n_test, separation, label_noise, noisy_holdout, data_seed};
    }

    ExpertTrainingOptions expert_options(std::size_t input_dim, std::size_t classes) const {
        ExpertTrainingOptions o;
        o.arch = architecture(input_dim, classes);
        o.steps = expert_steps;
        o.batch_size = expert_batch;
        o.learning_rate = expert_learning_rate;
        o.validation_fraction = expert_validation_fraction;
        o.eval_every = expert_eval_every;
        if (imbalance_experts) o.imbalance = imbalance();
        return o;
    }

    /// Throws InvalidInput naming the offending key.
    void validate() const {
        auto fail = [](const std::string& key, const std::string& why) { throw InvalidInput(key + ": " + why); };
        if (num_classes < 2) fail("num_classes", "must be >= 2");
        if (dim < 1) fail("dim", "must be >= 1");
        if (large_batch < 1) fail("large_batch", "must be >= 1");
        if (k > large_batch) fail("k", "must not exceed large_batch");
        if (!(select_fraction > 0.0 && select_fraction <= 1.0)) fail("select_fraction", "must be in (0, 1]");
        if (!(eta >= 0.0)) fail("eta", "must be >= 0");
        if (!(gamma > 0.0)) fail("gamma", "must be > 0");
        if (!(selection_pressure > 1.0)) fail("selection_pressure", "must be > 1");
        if (!(ewma_decay >= 0.0 && ewma_decay <= 1.0)) fail("ewma_decay", "must be in [0, 1]");
        if (ewma_batch < 1) fail("ewma_batch", "must be >= 1");
        if (eval_every < 1) fail("eval_every", "must be >= 1");
        if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
        if (!(expert_learning_rate > 0.0)) fail("expert_learning_rate", "must be > 0");
        if (expert_batch < 1) fail("expert_batch", "must be >= 1");
        if (arch == Architecture::Kind::mlp && hidden < 1) fail("hidden", "must be >= 1");
        if (!(label_noise >= 0.0 && label_noise < 1.0)) fail("label_noise", "must be in [0, 1)");
        if (!(separation > 0.0)) fail("separation", "must be > 0");
        if (data == "synthetic") {
            if (dim < 2) fail("dim", "synthetic data needs dim >= 2");
            if (n_train < 1) fail("n_train", "must be >= 1");
            if (n_holdout < num_classes) fail("n_holdout", "every class needs a holdout example");
        }
        try {
            if (auto spec = imbalance()) spec->validate(num_classes);
        } catch (const InvalidInput& e) {
            fail("imbalance_classes", e.what());
        }
        try {
            groups();
        } catch (const InvalidInput& e) {
            fail("superclasses", e.what());
        }
    }
};

namespace detail {

inline std::string trim_copy(std::string_view s) { return std::string(trim(s)); }

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw InvalidInput(key + ": expected a boolean, got '" + v + "'");
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw InvalidInput(key + ": expected a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return u;
    } catch (const std::exception&) {
        throw InvalidInput(key + ": expected a nonnegative integer, got '" + v + "'");
    }
}

/// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

/// One config key: name, help text, and string setter/getter.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    using C = ExperimentConfig;
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        auto size_key = [&](std::string name, std::string help, std::size_t C::*field) {
            k.push_back({name, help, [name, field](C& c, const std::string& v) { c.*field = detail::parse_uint(name, v); },
                         [field](const C& c) { return std::to_string(c.*field); }});
        };
        auto u64_key = [&](std::string name, std::string help, std::uint64_t C::*field) {
            k.push_back({name, help, [name, field](C& c, const std::string& v) { c.*field = detail::parse_uint(name, v); },
                         [field](const C& c) { return std::to_string(c.*field); }});
        };
        auto real_key = [&](std::string name, std::string help, double C::*field) {
            k.push_back({name, help, [name, field](C& c, const std::string& v) { c.*field = detail::parse_real(name, v); },
                         [field](const C& c) { return detail::format_real(c.*field); }});
        };
        auto bool_key = [&](std::string name, std::string help, bool C::*field) {
            k.push_back({name, help, [name, field](C& c, const std::string& v) { c.*field = detail::parse_bool(name, v); },
                         [field](const C& c) { return std::string(c.*field ? "true" : "false"); }});
        };
        auto string_key = [&](std::string name, std::string help, std::string C::*field) {
            k.push_back({name, help, [field](C& c, const std::string& v) { c.*field = v; },
                         [field](const C& c) { return c.*field; }});
        };

        k.push_back({"rule", "selection rule: uniform|trainloss|rholoss|reducr|payoff",
                     [](C& c, const std::string& v) { c.rule = parse_rule(v); },
                     [](const C& c) { return std::string(to_string(c.rule)); }});
        string_key("data", "dataset source: 'synthetic' or a CSV path", &C::data);
        size_key("num_classes", "number of classes C", &C::num_classes);
        size_key("dim", "feature dimension d (synthetic)", &C::dim);
        size_key("n_train", "synthetic train split size", &C::n_train);
        size_key("n_holdout", "synthetic holdout split size", &C::n_holdout);
        size_key("n_test", "synthetic test split size", &C::n_test);
        real_key("separation", "distance scale of synthetic class means", &C::separation);
        real_key("label_noise", "train label flip rate in [0,1)", &C::label_noise);
        bool_key("noisy_holdout", "also flip holdout labels", &C::noisy_holdout);
        u64_key("data_seed", "seed of the synthetic generator / CSV split shuffle", &C::data_seed);
        real_key("train_fraction", "CSV: fraction of rows in the train split", &C::train_fraction);
        real_key("holdout_fraction", "CSV: fraction of rows in the holdout split", &C::holdout_fraction);
        bool_key("standardize", "z-score features with train statistics", &C::standardize);
        size_key("large_batch", "candidate batch size |B_t|", &C::large_batch);
        size_key("k", "points selected per step (0: select_fraction * large_batch)", &C::k);
        real_key("select_fraction", "k / |B_t| when k = 0", &C::select_fraction);
        size_key("steps", "number of selection steps T/k", &C::steps);
        size_key("total_points", "total selected points T (0: use steps)", &C::total_points);
        real_key("eta", "class-weight learning rate", &C::eta);
        real_key("gamma", "expert up-weighting factor", &C::gamma);
        real_key("selection_pressure", "trainloss selection pressure s_e", &C::selection_pressure);
        bool_key("clip", "clip excess losses at zero (reducr)", &C::clip);
        bool_key("payoff_clip", "clip excess losses at zero (payoff)", &C::payoff_clip);
        bool_key("drop_model_loss", "ablation: remove the model-loss term", &C::drop_model_loss);
        bool_key("drop_expert_term", "ablation: remove the class-irreducible loss term", &C::drop_expert_term);
        bool_key("drop_holdout_term", "ablation: remove the class-holdout loss term", &C::drop_holdout_term);
        k.push_back({"tracker", "holdout loss tracker: full|ewma",
                     [](C& c, const std::string& v) {
                         if (v == "full") c.tracker = HoldoutLossTracker::Mode::full;
                         else if (v == "ewma") c.tracker = HoldoutLossTracker::Mode::ewma;
                         else throw InvalidInput("tracker: expected full|ewma, got '" + v + "'");
                     },
                     [](const C& c) { return std::string(c.tracker == HoldoutLossTracker::Mode::full ? "full" : "ewma"); }});
        real_key("ewma_decay", "EWMA decay a in [0,1]", &C::ewma_decay);
        size_key("ewma_batch", "holdout rows sampled per EWMA update", &C::ewma_batch);
        size_key("tracker_refresh", "full-mode refresh period in steps (0: one epoch)", &C::tracker_refresh);
        k.push_back({"imbalance_classes", "comma-separated imbalanced classes (empty: balanced)",
                     [](C& c, const std::string& v) {
                         c.imbalance_classes.clear();
                         if (v.empty()) return;
                         for (auto cell : detail::split_commas(v)) {
                             c.imbalance_classes.push_back(static_cast<int>(detail::parse_uint("imbalance_classes", detail::trim_copy(cell))));
                         }
                     },
                     [](const C& c) {
                         std::string out;
                         for (std::size_t i = 0; i < c.imbalance_classes.size(); ++i) {
                             out += (i ? "," : "") + std::to_string(c.imbalance_classes[i]);
                         }
                         return out;
                     }});
        real_key("imbalance_p", "sampling probability of each imbalanced class", &C::imbalance_p);
        bool_key("imbalance_experts", "train experts with the imbalanced sampler", &C::imbalance_experts);
        string_key("superclasses", "class groups, e.g. 0,1|2,3 (empty: one group per class)", &C::superclasses);
        size_key("eval_every", "holdout evaluation cadence in steps", &C::eval_every);
        k.push_back({"checkpoint", "checkpoint policy: best-average|best-worst-class|final",
                     [](C& c, const std::string& v) { c.checkpoint = parse_checkpoint_policy(v); },
                     [](const C& c) { return std::string(to_string(c.checkpoint)); }});
        k.push_back({"arch", "learner architecture: softmax|mlp",
                     [](C& c, const std::string& v) {
                         if (v == "softmax") c.arch = Architecture::Kind::softmax;
                         else if (v == "mlp") c.arch = Architecture::Kind::mlp;
                         else throw InvalidInput("arch: expected softmax|mlp, got '" + v + "'");
                     },
                     [](const C& c) { return to_string(c.arch); }});
        size_key("hidden", "mlp hidden width", &C::hidden);
        real_key("learning_rate", "target-model SGD learning rate", &C::learning_rate);
        size_key("expert_steps", "SGD steps per expert / reference model", &C::expert_steps);
        size_key("expert_batch", "expert training batch size", &C::expert_batch);
        real_key("expert_learning_rate", "expert SGD learning rate", &C::expert_learning_rate);
        real_key("expert_validation_fraction", "holdout fraction for expert checkpoint selection",
                 &C::expert_validation_fraction);
        size_key("expert_eval_every", "expert validation cadence in steps", &C::expert_eval_every);
        u64_key("seed", "run seed", &C::seed);
        u64_key("expert_seed", "expert / reference training seed", &C::expert_seed);
        return k;
    }();
    return keys;
}

inline const ConfigKey& find_config_key(const std::string& name) {
    for (const auto& key : config_keys()) {
        if (key.name == name) return key;
    }
    throw InvalidInput("unknown config key '" + name + "'");
}

inline void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
    find_config_key(key).set(config, value);
}

/// Parses the key-value text form on top of `base`.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
    std::string line;
    std::size_t line_no = 0;
    std::optional<int> version;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string body = detail::trim_copy(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
        const std::string key = detail::trim_copy(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim_copy(std::string_view(body).substr(eq + 1));
        if (seen.count(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
        seen[key] = line_no;
        try {
            if (key == "spec_version") {
                version = static_cast<int>(detail::parse_uint(key, value));
                continue;
            }
            set_config_value(base, key, value);
        } catch (const InvalidInput& e) {
            throw ParseError(line_no, e.what());
        }
    }
    if (!version) throw ParseError(line_no, "missing spec_version");
    if (*version != kConfigVersion) throw ParseError(seen["spec_version"], "unsupported spec_version " + std::to_string(*version));
    return base;
}

inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {}) {
    std::istringstream in(text);
    return parse_config(in, std::move(base));
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    return parse_config(in, std::move(base));
}

inline std::string to_text(const ExperimentConfig& config) {
    std::string out = "spec_version = " + std::to_string(kConfigVersion) + "\n";
    for (const auto& key : config_keys()) out += key.name + " = " + key.get(config) + "\n";
    return out;
}

/// Config whose weights, experts and tracker run over the groups of `map`; singleton groups reset to per-class.
inline ExperimentConfig apply_superclass_map(ExperimentConfig config, const SuperclassMap& map) {
    map.validate(config.num_classes);
    config.superclasses = map.is_identity() ? std::string() : map.to_text();
    return config;
}

/// "0..9", "1,4,7" or a mix such as "0..2,8"; ranges are inclusive.
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (auto cell : detail::split_commas(text)) {
        const std::string item = detail::trim_copy(cell);
        const auto dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(detail::parse_uint("seeds", item));
            continue;
        }
        const std::uint64_t lo = detail::parse_uint("seeds", item.substr(0, dots));
        const std::uint64_t hi = detail::parse_uint("seeds", item.substr(dots + 2));
        if (hi < lo) throw InvalidInput("seeds: empty range '" + item + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    }
    if (out.empty()) throw InvalidInput("seeds: no seeds given");
    return out;
}

inline std::vector<Rule> parse_rule_list(const std::string& text) {
    std::vector<Rule> out;
    for (auto cell : detail::split_commas(text)) out.push_back(parse_rule(detail::trim_copy(cell)));
    if (out.empty()) throw InvalidInput("rules: no rules given");
    return out;
}

}  // namespace reducr
