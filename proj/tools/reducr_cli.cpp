// reducr: command-line front end.
//
//   reducr generate-data  --out pool.csv [--config FILE] [--<key> VALUE ...] [--force]
//   reducr train-experts  --data pool.csv --out DIR [--config FILE] [--<key> VALUE ...] [--force]
//   reducr run            --out run.jsonl [--experts DIR] [--config FILE] [--<key> VALUE ...] [--force]
//   reducr sweep          --rules a,b --seeds 0..9 --out DIR [--experts DIR] [--parallel N] [--force] ...
//   reducr report         --summary FILE... [--json] | --plots FILE... --out DIR
//
// Exit codes: 0 success, 1 usage error, 2 runtime error. Errors are printed
// on stderr as a single line "error:<usage|runtime>: <message>".
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reducr/reducr.hpp"

namespace fs = std::filesystem;
using namespace reducr;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

const std::vector<std::string> kSyntheticKeys = {"num_classes", "dim",         "n_train",   "n_holdout",
                                                  "n_test",      "separation",  "label_noise", "noisy_holdout",
                                                  "data_seed",   "standardize"};

std::vector<std::string> dataset_keys() {
    auto keys = kSyntheticKeys;
    keys.insert(keys.end(), {"data", "train_fraction", "holdout_fraction"});
    return keys;
}

std::vector<std::string> expert_keys() {
    auto keys = dataset_keys();
    keys.insert(keys.end(), {"gamma", "superclasses", "imbalance_classes", "imbalance_p", "imbalance_experts", "arch",
                             "hidden", "expert_steps", "expert_batch", "expert_learning_rate",
                             "expert_validation_fraction", "expert_eval_every", "expert_seed"});
    return keys;
}

std::vector<std::string> all_keys() {
    std::vector<std::string> keys;
    for (const auto& k : config_keys()) keys.push_back(k.name);
    return keys;
}

/// The --config option and one --<key> option per consumed config key.
struct ConfigOptions {
    CLI::App* app = nullptr;
    std::string config_path;
    std::map<std::string, std::string> values;
    std::vector<std::string> keys;

    void attach(CLI::App* sub, std::vector<std::string> consumed) {
        app = sub;
        keys = std::move(consumed);
        sub->add_option("--config", config_path, "key = value config file (flags override it)");
        for (const auto& name : keys) {
            const ConfigKey& key = find_config_key(name);
            sub->add_option("--" + name, values[name], key.help)->group("Config keys");
        }
    }

    ExperimentConfig build() const {
        ExperimentConfig config;
        try {
            if (!config_path.empty()) config = load_config(config_path);
            for (const auto& name : keys) {
                if (app->count("--" + name) > 0) set_config_value(config, name, values.at(name));
            }
            config.validate();
        } catch (const IoError& e) {
            throw UsageError(e.what());
        } catch (const ParseError& e) {
            throw UsageError(config_path + ":" + std::to_string(e.line()) + ": " + e.what());
        } catch (const InvalidInput& e) {
            throw UsageError(e.what());
        }
        return config;
    }
};

void check_target(const fs::path& path, bool force) {
    if (fs::exists(path) && !force) {
        throw UsageError(path.string() + " already exists (pass --force to overwrite)");
    }
}

struct ModelInputs {
    std::optional<LoadedExperts> loaded;
    bool use_reference = false;

    const ExpertBank* experts() const { return loaded ? &loaded->bank : nullptr; }
    const LearnerState* reference() const { return use_reference && loaded ? &*loaded->reference : nullptr; }
};

ModelInputs load_models(const std::string& dir, const std::vector<Rule>& rules, const DataPool& pool) {
    bool experts_needed = false;
    bool reference_needed = false;
    for (Rule r : rules) {
        experts_needed = experts_needed || needs_experts(r);
        reference_needed = reference_needed || needs_reference(r);
    }
    ModelInputs m;
    if (dir.empty()) {
        for (Rule r : rules) {
            if (needs_experts(r) || needs_reference(r)) {
                throw UsageError(std::string("rule ") + to_string(r) + " needs --experts DIR (see train-experts)");
            }
        }
        return m;
    }
    if (!experts_needed && !reference_needed) return m;
    m.loaded = load_expert_bank(dir);
    const auto& manifest = m.loaded->manifest;
    if (manifest.contains("fingerprint") && manifest["fingerprint"].get<std::string>() != fingerprint_hex(pool.fingerprint())) {
        throw UsageError("experts in " + dir + " were trained on a different dataset (fingerprint " +
                         manifest["fingerprint"].get<std::string>() + ", dataset " + fingerprint_hex(pool.fingerprint()) +
                         ")");
    }
    if (reference_needed) {
        if (!m.loaded->reference) throw UsageError("experts dir " + dir + " has no reference model");
        m.use_reference = true;
    }
    return m;
}

std::string run_file_name(Rule rule, std::uint64_t seed) {
    return std::string(to_string(rule)) + "_seed" + std::to_string(seed) + ".jsonl";
}

int cmd_generate(const ConfigOptions& opts, const std::string& out, bool force) {
    ExperimentConfig config = opts.build();
    check_target(out, force);
    check_target(manifest_path_for(out), force);
    DataPool pool = generate_synthetic(config.synthetic());
    if (config.standardize) standardize(pool);
    write_pool(out, pool);
    std::cout << "wrote " << out << " (" << pool.indices(Split::train).size() << " train, "
              << pool.indices(Split::holdout).size() << " holdout, " << pool.indices(Split::test).size()
              << " test; fingerprint " << fingerprint_hex(pool.fingerprint()) << ")\n";
    return 0;
}

int cmd_train_experts(const ConfigOptions& opts, const std::string& out, bool force) {
    ExperimentConfig config = opts.build();
    check_target(fs::path(out) / "manifest.json", force);
    const DataPool pool = load_dataset(config);
    const TrainedModels models = train_models(config, pool);
    const nlohmann::json extra = {{"fingerprint", fingerprint_hex(pool.fingerprint())},
                                  {"reference_seed", reference_seed(config.expert_seed)},
                                  {"config", to_text(config)}};
    save_expert_bank(out, models.experts, models.reference, extra);
    for (const auto& w : models.experts.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "wrote " << models.experts.size() << " experts + reference to " << out << " (gamma "
              << models.experts.gamma << ")\n";
    return 0;
}

int cmd_run(const ConfigOptions& opts, const std::string& experts_dir, const std::string& out, bool force) {
    ExperimentConfig config = opts.build();
    check_target(out, force);
    const DataPool pool = load_dataset(config);
    const ModelInputs models = load_models(experts_dir, {config.rule}, pool);
    const RunResult result = run_experiment(config, pool, models.experts(), models.reference());
    write_run_file(out, result.to_run_file());
    const TestMetrics& t = result.final_test();
    std::cout << to_string(config.rule) << " seed " << config.seed << ": worst-class " << t.worst << ", average "
              << t.average << " (" << to_string(result.policy) << " checkpoint at step " << t.step << ")\n";
    return 0;
}

int cmd_sweep(const ConfigOptions& opts, const std::string& experts_dir, const std::string& rules_text,
              const std::string& seeds_text, std::size_t parallel, const std::string& out, bool force) {
    ExperimentConfig config = opts.build();
    std::vector<Rule> rules;
    std::vector<std::uint64_t> seeds;
    try {
        rules = rules_text.empty() ? std::vector<Rule>{config.rule} : parse_rule_list(rules_text);
        seeds = seeds_text.empty() ? std::vector<std::uint64_t>{config.seed} : parse_seed_list(seeds_text);
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    }
    if (parallel < 1) throw UsageError("parallel: must be >= 1");
    for (Rule r : rules) {
        for (auto s : seeds) check_target(fs::path(out) / run_file_name(r, s), force);
    }
    check_target(fs::path(out) / "summary.txt", force);
    check_target(fs::path(out) / "summary.json", force);
    const DataPool pool = load_dataset(config);
    const ModelInputs models = load_models(experts_dir, rules, pool);
    fs::create_directories(out);

    const SweepResult result =
        sweep(config, seeds, rules, pool, models.experts(), models.reference(), parallel, [&](const SweepRun& run) {
            if (!run.result) return;
            write_run_file((fs::path(out) / run_file_name(run.rule, run.seed)).string(), run.result->to_run_file());
        });
    const std::string table = format_summary(result.summary);
    {
        std::ofstream txt(fs::path(out) / "summary.txt", std::ios::binary | std::ios::trunc);
        txt << table;
        std::ofstream js(fs::path(out) / "summary.json", std::ios::binary | std::ios::trunc);
        js << summary_json(result.summary).dump(2) << '\n';
        if (!txt || !js) throw IoError("cannot write summary in " + out);
    }
    std::cout << table;
    for (const auto& w : result.warnings) std::cerr << "error:runtime: " << w << '\n';
    return result.warnings.empty() ? 0 : 2;
}

int cmd_report(const std::vector<std::string>& summary_files, const std::vector<std::string>& plot_files,
               const std::string& out, bool as_json) {
    if (summary_files.empty() == plot_files.empty()) throw UsageError("report: give exactly one of --summary or --plots");
    if (!summary_files.empty()) {
        const auto rows = summarize(summary_files);
        if (as_json) {
            std::cout << summary_json(rows).dump(2) << '\n';
        } else {
            std::cout << format_summary(rows);
        }
        return 0;
    }
    if (out.empty()) throw UsageError("report --plots: --out DIR is required");
    for (const auto& path : emit_plots(plot_files, out)) std::cout << "wrote " << path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online batch selection simulator (uniform, trainloss, rholoss, reducr, payoff)"};
    app.require_subcommand(1);
    bool force = false;
    std::string out;
    std::string experts_dir;

    auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset as CSV plus a split manifest");
    ConfigOptions gen_opts;
    gen_opts.attach(gen, kSyntheticKeys);
    gen->add_option("--out", out, "output CSV path")->required();
    gen->add_flag("--force", force, "overwrite existing outputs");

    auto* train = app.add_subcommand("train-experts", "train per-class (or per-group) experts and the reference model");
    ConfigOptions train_opts;
    train_opts.attach(train, expert_keys());
    train->add_option("--out", out, "output directory")->required();
    train->add_flag("--force", force, "overwrite existing outputs");

    auto* run = app.add_subcommand("run", "run one online selection experiment");
    ConfigOptions run_opts;
    run_opts.attach(run, all_keys());
    run->add_option("--experts", experts_dir, "directory written by train-experts");
    run->add_option("--out", out, "output record file")->required();
    run->add_flag("--force", force, "overwrite existing outputs");

    auto* sw = app.add_subcommand("sweep", "run every (rule, seed) pair and summarise");
    ConfigOptions sweep_opts;
    sweep_opts.attach(sw, all_keys());
    std::string rules_text;
    std::string seeds_text;
    std::size_t parallel = 1;
    sw->add_option("--rules", rules_text, "comma-separated rules (default: the config rule)");
    sw->add_option("--seeds", seeds_text, "seed list, e.g. 0..9 or 1,2,5 (default: the config seed)");
    sw->add_option("--parallel", parallel, "maximum concurrent runs");
    sw->add_option("--experts", experts_dir, "directory written by train-experts");
    sw->add_option("--out", out, "output directory")->required();
    sw->add_flag("--force", force, "overwrite existing outputs");

    auto* report = app.add_subcommand("report", "summarise record files or draw figures");
    std::vector<std::string> summary_files;
    std::vector<std::string> plot_files;
    bool as_json = false;
    report->add_option("--summary", summary_files, "record files to summarise");
    report->add_option("--plots", plot_files, "record files to plot");
    report->add_option("--out", out, "figure directory (with --plots)");
    report->add_flag("--json", as_json, "print the summary as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error:usage: " << e.what() << '\n';
        return 1;
    }

    try {
        if (*gen) return cmd_generate(gen_opts, out, force);
        if (*train) return cmd_train_experts(train_opts, out, force);
        if (*run) return cmd_run(run_opts, experts_dir, out, force);
        if (*sw) return cmd_sweep(sweep_opts, experts_dir, rules_text, seeds_text, parallel, out, force);
        if (*report) return cmd_report(summary_files, plot_files, out, as_json);
    } catch (const UsageError& e) {
        std::cerr << "error:usage: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error:runtime: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
