// reporting.hpp
//
// Metric records and run files (newline-delimited JSON), sweep summary tables,
// and SVG figures.
//
// Run file layout, schema 1. One JSON object per line:
//
//   {"kind":"header","schema":1,"rule":...,"seed":...,"num_classes":...,
//    "num_groups":...,"fingerprint":"<16 hex>","config":"<key-value text>"}
//   {"kind":"step","step":1,...}            one per executed step
//   {"kind":"final","policy":...,"test":{...},"checkpoints":{...}}
//
// Step record fields:
//   step                 int     1-based step index
//   rule                 string
//   seed                 int
//   selected_histogram   [int]   selected points per class at this step
//   weights              [real]  class weights after the update (reducr only)
//   alpha                [real]  per-group objective values (reducr only)
//   holdout              object  present on evaluation steps:
//     accuracy [real|null], loss [real|null], worst real, average real
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reducr/learner.hpp"
#include "reducr/numerics.hpp"

namespace reducr {

inline constexpr int kRecordSchema = 1;

struct HoldoutMetrics {
    std::vector<std::optional<double>> accuracy;
    std::vector<std::optional<double>> loss;
    double worst = 0.0;
    double average = 0.0;

    static HoldoutMetrics from(const Evaluation& ev) {
        return {ev.accuracy, ev.mean_loss, ev.worst_class_accuracy(), ev.average_accuracy};
    }

    bool operator==(const HoldoutMetrics&) const = default;
};

struct MetricsRecord {
    std::size_t step = 0;
    std::string rule;
    std::uint64_t seed = 0;
    std::vector<std::size_t> selected_histogram;
    std::vector<double> weights;
    std::vector<double> alpha;
    std::optional<HoldoutMetrics> holdout;

    bool operator==(const MetricsRecord&) const = default;
};

struct RunHeader {
    std::string rule;
    std::uint64_t seed = 0;
    std::size_t num_classes = 0;
    std::size_t num_groups = 0;
    std::string fingerprint;
    std::string config;

    bool operator==(const RunHeader&) const = default;
};

struct TestMetrics {
    std::size_t step = 0;  // step at which the checkpoint was taken
    std::vector<std::optional<double>> accuracy;
    double worst = 0.0;
    double average = 0.0;

    bool operator==(const TestMetrics&) const = default;
};

struct RunFinal {
    std::string policy;
    TestMetrics test;  // for `policy`
    std::map<std::string, TestMetrics> checkpoints;

    bool operator==(const RunFinal&) const = default;
};

struct RunFile {
    RunHeader header;
    std::vector<MetricsRecord> records;
    RunFinal final;
};

namespace detail {

inline nlohmann::json optional_array(const std::vector<std::optional<double>>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& x : v) out.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
    return out;
}

inline std::vector<std::optional<double>> read_optional_array(const nlohmann::json& j) {
    std::vector<std::optional<double>> out;
    for (const auto& x : j) out.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
    return out;
}

inline nlohmann::json to_json(const TestMetrics& t) {
    return {{"step", t.step}, {"accuracy", optional_array(t.accuracy)}, {"worst", t.worst}, {"average", t.average}};
}

inline TestMetrics test_from_json(const nlohmann::json& j) {
    return {j.at("step").get<std::size_t>(), read_optional_array(j.at("accuracy")), j.at("worst").get<double>(),
            j.at("average").get<double>()};
}

}  // namespace detail

inline nlohmann::json to_json(const MetricsRecord& r) {
    nlohmann::json j = {{"kind", "step"},        {"step", r.step}, {"rule", r.rule},
                        {"seed", r.seed},        {"selected_histogram", r.selected_histogram}};
    if (!r.weights.empty()) j["weights"] = r.weights;
    if (!r.alpha.empty()) j["alpha"] = r.alpha;
    if (r.holdout) {
        j["holdout"] = {{"accuracy", detail::optional_array(r.holdout->accuracy)},
                        {"loss", detail::optional_array(r.holdout->loss)},
                        {"worst", r.holdout->worst},
                        {"average", r.holdout->average}};
    }
    return j;
}

inline MetricsRecord record_from_json(const nlohmann::json& j) {
    MetricsRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.rule = j.at("rule").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.selected_histogram = j.at("selected_histogram").get<std::vector<std::size_t>>();
    if (j.contains("weights")) r.weights = j.at("weights").get<std::vector<double>>();
    if (j.contains("alpha")) r.alpha = j.at("alpha").get<std::vector<double>>();
    if (j.contains("holdout")) {
        const auto& h = j.at("holdout");
        r.holdout = HoldoutMetrics{detail::read_optional_array(h.at("accuracy")), detail::read_optional_array(h.at("loss")),
                                   h.at("worst").get<double>(), h.at("average").get<double>()};
    }
    return r;
}

namespace detail {

inline std::ofstream open_sink(const std::string& path, bool append) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty() && !std::filesystem::is_directory(parent)) {
        throw IoError("cannot write " + path + ": directory does not exist");
    }
    std::ofstream out(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    if (!out) throw IoError("cannot write " + path);
    return out;
}

}  // namespace detail

/// Writes one line per record; returns the row count. The sink is opened before anything is serialised.
inline std::size_t write_records(std::span<const MetricsRecord> records, const std::string& path, bool append = false) {
    std::ofstream out = detail::open_sink(path, append);
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw IoError("failed writing " + path);
    return records.size();
}

/// Step records in a file, skipping header/final lines.
inline std::vector<MetricsRecord> read_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        if (j.value("kind", "step") == "step") out.push_back(record_from_json(j));
    }
    return out;
}

inline void write_run_file(const std::string& path, const RunFile& run) {
    std::ofstream out = detail::open_sink(path, false);
    const nlohmann::json header = {{"kind", "header"},
                                   {"schema", kRecordSchema},
                                   {"rule", run.header.rule},
                                   {"seed", run.header.seed},
                                   {"num_classes", run.header.num_classes},
                                   {"num_groups", run.header.num_groups},
                                   {"fingerprint", run.header.fingerprint},
                                   {"config", run.header.config}};
    out << header.dump() << '\n';
    for (const auto& r : run.records) out << to_json(r).dump() << '\n';
    nlohmann::json checkpoints = nlohmann::json::object();
    for (const auto& [name, t] : run.final.checkpoints) checkpoints[name] = detail::to_json(t);
    const nlohmann::json final = {{"kind", "final"},
                                  {"policy", run.final.policy},
                                  {"test", detail::to_json(run.final.test)},
                                  {"checkpoints", checkpoints}};
    out << final.dump() << '\n';
    out.flush();
    if (!out) throw IoError("failed writing " + path);
}

inline RunFile read_run_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    RunFile run;
    bool have_header = false, have_final = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "header") {
                if (j.at("schema").get<int>() != kRecordSchema) throw ParseError(line_no, "unsupported record schema");
                run.header = {j.at("rule").get<std::string>(),        j.at("seed").get<std::uint64_t>(),
                              j.at("num_classes").get<std::size_t>(), j.at("num_groups").get<std::size_t>(),
                              j.at("fingerprint").get<std::string>(), j.at("config").get<std::string>()};
                have_header = true;
            } else if (kind == "step") {
                run.records.push_back(record_from_json(j));
            } else if (kind == "final") {
                run.final.policy = j.at("policy").get<std::string>();
                run.final.test = detail::test_from_json(j.at("test"));
                for (auto it = j.at("checkpoints").begin(); it != j.at("checkpoints").end(); ++it) {
                    run.final.checkpoints[it.key()] = detail::test_from_json(it.value());
                }
                have_final = true;
            } else {
                throw ParseError(line_no, "unknown record kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string(path) + ": " + e.what());
        }
    }
    if (!have_header) throw InvalidInput(path + ": missing header record");
    if (!have_final) throw InvalidInput(path + ": missing final record");
    return run;
}

// ---------------------------------------------------------------------------
// Summaries

/// Per-rule aggregate of final-checkpoint test metrics; std is the sample (n-1) std.
struct SummaryRow {
    std::string rule;
    std::size_t runs = 0;
    MeanStd worst;
    MeanStd average;
};

/// Worst-class value of a run: min over its per-class test accuracies.
inline double worst_of(const TestMetrics& t) {
    double worst = 1.0;
    bool any = false;
    for (const auto& a : t.accuracy) {
        if (a) {
            worst = any ? std::min(worst, *a) : *a;
            any = true;
        }
    }
    return any ? worst : 0.0;
}

/// Rows sorted by rule name.
inline std::vector<SummaryRow> aggregate(const std::vector<std::pair<std::string, TestMetrics>>& runs) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_rule;
    for (const auto& [rule, t] : runs) {
        by_rule[rule].first.push_back(worst_of(t));
        by_rule[rule].second.push_back(t.average);
    }
    std::vector<SummaryRow> rows;
    for (auto& [rule, vals] : by_rule) {
        // Order-independent: aggregate sorted values.
        std::sort(vals.first.begin(), vals.first.end());
        std::sort(vals.second.begin(), vals.second.end());
        rows.push_back({rule, vals.first.size(), mean_std(vals.first), mean_std(vals.second)});
    }
    return rows;
}

inline std::vector<SummaryRow> summarize(const std::vector<std::string>& files) {
    if (files.empty()) throw InvalidInput("summarize: no record files");
    std::vector<std::pair<std::string, TestMetrics>> runs;
    std::optional<RunHeader> first;
    for (const auto& path : files) {
        RunFile run = read_run_file(path);
        if (first) {
            if (run.header.num_classes != first->num_classes || run.header.fingerprint != first->fingerprint) {
                throw InvalidInput("summarize: " + path + " has a different dataset fingerprint or class count");
            }
        } else {
            first = run.header;
        }
        runs.emplace_back(run.header.rule, run.final.test);
    }
    return aggregate(runs);
}

inline std::string format_summary(const std::vector<SummaryRow>& rows) {
    std::ostringstream out;
    out << "rule        runs  worst-class acc (%)   average acc (%)\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-10s  %4zu  %7.2f +- %-7.2f   %7.2f +- %-7.2f\n", r.rule.c_str(), r.runs,
                      100.0 * r.worst.mean, 100.0 * r.worst.std, 100.0 * r.average.mean, 100.0 * r.average.std);
        out << buf;
    }
    return out.str();
}

inline nlohmann::json summary_json(const std::vector<SummaryRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        out.push_back({{"rule", r.rule},
                       {"runs", r.runs},
                       {"worst_mean", r.worst.mean},
                       {"worst_std", r.worst.std},
                       {"average_mean", r.average.mean},
                       {"average_std", r.average.std}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Figures

namespace detail {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lo;  // optional band
    std::vector<double> hi;
};

inline std::string join_numbers(const std::vector<double>& v) {
    std::ostringstream ss;
    ss.precision(10);
    for (std::size_t i = 0; i < v.size(); ++i) ss << (i ? " " : "") << v[i];
    return ss.str();
}

inline const char* palette(std::size_t i) {
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colours[i % 10];
}

// Line chart with optional bands. Each series' source data is embedded as
// data-x / data-y (and data-lo / data-hi) attributes on its <polyline>.
inline std::string render_chart(const std::string& title, const std::string& y_label, const std::vector<Series>& series,
                                double y_min, double y_max) {
    const double W = 640, H = 400, left = 60, right = 150, top = 40, bottom = 50;
    double x_min = 0, x_max = 1;
    bool first = true;
    for (const auto& s : series) {
        for (double x : s.x) {
            x_min = first ? x : std::min(x_min, x);
            x_max = first ? x : std::max(x_max, x);
            first = false;
        }
    }
    if (x_max <= x_min) x_max = x_min + 1;
    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * (W - left - right); };
    auto py = [&](double y) { return top + (1.0 - (y - y_min) / (y_max - y_min)) * (H - top - bottom); };

    std::ostringstream svg;
    svg.precision(6);
    svg << std::fixed;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
        << ' ' << H << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
        << title << "</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double yv = y_min + (y_max - y_min) * t / 4.0;
        svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
            << "font-size=\"10\">" << std::setprecision(2) << yv << "</text>\n";
        const double xv = x_min + (x_max - x_min) * t / 4.0;
        svg << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\" "
            << "font-family=\"sans-serif\" font-size=\"10\">" << std::setprecision(0) << xv << "</text>\n";
    }
    svg << std::setprecision(6);
    svg << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";
    svg << "<text x=\"16\" y=\"" << (top + H - bottom) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"12\" transform=\"rotate(-90 16 " << (top + H - bottom) / 2 << ")\">" << y_label << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& ser = series[s];
        if (!ser.lo.empty()) {
            svg << "<polygon class=\"band\" fill=\"" << palette(s) << "\" fill-opacity=\"0.2\" stroke=\"none\" "
                << "data-label=\"" << ser.label << "\" data-x=\"" << join_numbers(ser.x) << "\" data-lo=\""
                << join_numbers(ser.lo) << "\" data-hi=\"" << join_numbers(ser.hi) << "\" points=\"";
            for (std::size_t i = 0; i < ser.x.size(); ++i) svg << px(ser.x[i]) << ',' << py(ser.hi[i]) << ' ';
            for (std::size_t i = ser.x.size(); i-- > 0;) svg << px(ser.x[i]) << ',' << py(ser.lo[i]) << ' ';
            svg << "\"/>\n";
        }
        svg << "<polyline class=\"series\" fill=\"none\" stroke=\"" << palette(s) << "\" stroke-width=\"1.5\" "
            << "data-label=\"" << ser.label << "\" data-x=\"" << join_numbers(ser.x) << "\" data-y=\""
            << join_numbers(ser.y) << "\" points=\"";
        for (std::size_t i = 0; i < ser.x.size(); ++i) svg << px(ser.x[i]) << ',' << py(ser.y[i]) << ' ';
        svg << "\"/>\n";
        const double ly = top + 16.0 * static_cast<double>(s);
        svg << "<line x1=\"" << W - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 30 << "\" y2=\"" << ly
            << "\" stroke=\"" << palette(s) << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << W - right + 35 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
            << ser.label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

}  // namespace detail

/**
 * Writes `worst_class_accuracy.svg` (holdout worst-class accuracy against
 * step, one curve per rule: mean over runs with a +-1 sample-std band) and a
 * `weights_<rule>_seed<seed>.svg` per run that carries class weights.
 * Returns the written paths.
 */
inline std::vector<std::string> emit_plots(const std::vector<std::string>& files, const std::string& out_dir) {
    if (files.empty()) throw InvalidInput("emit_plots: no record files");
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;

    // rule -> step -> worst-class values across runs
    std::map<std::string, std::map<std::size_t, std::vector<double>>> curves;
    for (const auto& path : files) {
        const RunFile run = read_run_file(path);
        for (const auto& r : run.records) {
            if (r.holdout) curves[run.header.rule][r.step].push_back(r.holdout->worst);
        }
        if (run.records.empty() || run.records.front().weights.empty()) continue;
        const std::size_t G = run.records.front().weights.size();
        std::vector<detail::Series> series(G);
        for (std::size_t g = 0; g < G; ++g) series[g].label = "class " + std::to_string(g);
        double w_max = 0.0;
        for (const auto& r : run.records) {
            for (std::size_t g = 0; g < G; ++g) {
                series[g].x.push_back(static_cast<double>(r.step));
                series[g].y.push_back(r.weights[g]);
                w_max = std::max(w_max, r.weights[g]);
            }
        }
        const auto name = std::filesystem::path(out_dir) /
                          ("weights_" + run.header.rule + "_seed" + std::to_string(run.header.seed) + ".svg");
        detail::write_text(name, detail::render_chart("class weights (" + run.header.rule + ", seed " +
                                                          std::to_string(run.header.seed) + ")",
                                                      "weight", series, 0.0, std::max(w_max * 1.05, 1e-9)));
        written.push_back(name.string());
    }

    std::vector<detail::Series> series;
    for (const auto& [rule, by_step] : curves) {
        detail::Series s;
        s.label = rule;
        for (const auto& [step, vals] : by_step) {
            const MeanStd ms = mean_std(vals);
            s.x.push_back(static_cast<double>(step));
            s.y.push_back(ms.mean);
            s.lo.push_back(ms.mean - ms.std);
            s.hi.push_back(ms.mean + ms.std);
        }
        series.push_back(std::move(s));
    }
    const auto acc = std::filesystem::path(out_dir) / "worst_class_accuracy.svg";
    detail::write_text(acc, detail::render_chart("worst-class holdout accuracy", "accuracy", series, 0.0, 1.0));
    written.insert(written.begin(), acc.string());
    return written;
}

}  // namespace reducr
