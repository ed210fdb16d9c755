#pragma once

// Three-model comparison with transfer applied to every architecture, and the
// plot-ready report files: report.json, table1.csv, table2.csv, fig6.csv.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "loadtl/transfer.hpp"

namespace loadtl {

/// Source/target profiles sharing daily and weekly structure at different scales.
struct SyntheticPairConfig {
    std::uint64_t source_seed = 101;
    std::size_t source_days = 90;
    SyntheticProfile source{200.0, 300.0, 0.35, 8.0, 3.0};
    std::uint64_t target_seed = 202;
    std::size_t target_days = 70;  // 1680 hours
    SyntheticProfile target{60.0, 120.0, 0.45, 4.0, 1.5};
};

struct SyntheticPair {
    std::vector<LoadRecord> source;
    std::vector<LoadRecord> target;
};

inline SyntheticPair make_synthetic_pair(const SyntheticPairConfig& spec = {}) {
    return {generate_synthetic_building(spec.source_seed, spec.source_days, spec.source),
            generate_synthetic_building(spec.target_seed, spec.target_days, spec.target)};
}

struct ComparisonConfig {
    TransferPlan plan;  // plan.dims.arch is overridden per model
    std::vector<Architecture> architectures{Architecture::transformer, Architecture::lstm, Architecture::rnn};
    std::size_t series_horizon = 168;
};

struct ForecastSeries {
    std::uint64_t seed = 0;  // run that produced the predictions
    std::vector<std::size_t> hour;
    std::vector<std::string> timestamp;
    std::vector<double> actual;
    std::map<std::string, std::vector<double>> predicted;  // by architecture name
};

struct ExperimentReport {
    ComparisonConfig config;
    std::vector<std::uint64_t> seeds;
    std::vector<TransferOutcome> models;  // in config.architectures order
    ForecastSeries series;
    std::map<std::string, Metrics> series_metrics;  // recomputable from `series`
    std::size_t train_samples = 0;
    std::size_t eval_samples = 0;

    const TransferOutcome& model(Architecture a) const {
        for (const auto& m : models)
            if (m.arch == a) return m;
        throw ValidationError("report has no results for " + to_string(a));
    }
};

inline ExperimentReport run_comparison(const std::vector<LoadRecord>& target, const std::vector<LoadRecord>& source,
                                       const ComparisonConfig& config, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ValidationError("run_comparison: at least one seed is required");
    if (config.architectures.empty()) throw ValidationError("run_comparison: no architectures requested");
    const TargetSplit split = prepare_target(target, config.plan.budget, config.plan.dims.window, config.plan.horizon);
    if (split.eval.size() < config.series_horizon)
        throw ValidationError("evaluation split has " + std::to_string(split.eval.size()) +
                              " samples, fewer than the series horizon " + std::to_string(config.series_horizon));

    ExperimentReport report;
    report.config = config;
    report.seeds = seeds;
    report.train_samples = split.train.size();
    report.eval_samples = split.eval.size();

    const std::vector<WindowSample> shown(split.eval.begin(),
                                          split.eval.begin() + static_cast<std::ptrdiff_t>(config.series_horizon));
    report.series.seed = seeds.front();
    for (std::size_t i = 0; i < shown.size(); ++i) {
        report.series.hour.push_back(i);
        report.series.timestamp.push_back(format_timestamp(shown[i].target_time));
        report.series.actual.push_back(shown[i].target);
    }

    for (Architecture arch : config.architectures) {
        TransferPlan plan = config.plan;
        plan.dims.arch = arch;
        std::vector<PairedRun> runs;
        for (auto seed : seeds) runs.push_back(run_paired(plan, source, split, seed));
        auto preds = forecast_sequence(runs.front().transfer.params, shown);
        report.series_metrics[to_string(arch)] = compute_metrics(preds, report.series.actual);
        report.series.predicted[to_string(arch)] = std::move(preds);
        report.models.push_back(summarize(arch, std::move(runs)));
    }
    return report;
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
    return {{"mse", m.mse}, {"rmse", m.rmse}, {"mape", m.mape}, {"mape_clamped", m.mape_clamped}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
    return {j.at("mse").get<double>(), j.at("rmse").get<double>(), j.at("mape").get<double>(),
            j.at("mape_clamped").get<std::size_t>()};
}

inline nlohmann::json history_to_json(const LossHistory& h) { return {{"train", h.train}, {"eval", h.eval}}; }

inline nlohmann::json report_to_json(const ExperimentReport& r) {
    nlohmann::json models = nlohmann::json::object();
    for (const auto& o : r.models) {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& run : o.runs)
            runs.push_back({{"seed", run.seed},
                            {"scratch", metrics_to_json(run.scratch.metrics)},
                            {"transfer", metrics_to_json(run.transfer.metrics)},
                            {"pretrain_loss", history_to_json(run.pretrain_history)},
                            {"scratch_loss", history_to_json(run.scratch.history)},
                            {"transfer_loss", history_to_json(run.transfer.history)}});
        models[to_string(o.arch)] = {
            {"metrics", metrics_to_json(o.median_transfer)},
            {"scratch_metrics", metrics_to_json(o.median_scratch)},
            {"improvement_pct",
             {{"mse", o.improvement_pct.mse}, {"rmse", o.improvement_pct.rmse}, {"mape", o.improvement_pct.mape}}},
            {"median_per_seed_mse_improvement_pct", o.median_per_seed_mse_improvement},
            {"transfer_wins", o.transfer_wins},
            {"runs", std::move(runs)}};
    }
    nlohmann::json series = {{"seed", r.series.seed},
                             {"hour", r.series.hour},
                             {"timestamp", r.series.timestamp},
                             {"actual", r.series.actual}};
    for (const auto& [name, p] : r.series.predicted) series[name] = p;
    nlohmann::json series_metrics = nlohmann::json::object();
    for (const auto& [name, m] : r.series_metrics) series_metrics[name] = metrics_to_json(m);
    nlohmann::json archs = nlohmann::json::array();
    for (auto a : r.config.architectures) archs.push_back(to_string(a));
    return {{"format_version", 1},
            {"config",
             {{"plan", plan_to_json(r.config.plan)},
              {"architectures", archs},
              {"series_horizon", r.config.series_horizon}}},
            {"seeds", r.seeds},
            {"train_samples", r.train_samples},
            {"eval_samples", r.eval_samples},
            {"models", std::move(models)},
            {"series", std::move(series)},
            {"series_metrics", std::move(series_metrics)}};
}

inline std::string format_number(double v) { return detail::format_double(v); }

inline std::string table1_csv(const ExperimentReport& r) {
    std::ostringstream out;
    out << "model,metric,before_transfer,after_transfer,improvement_pct\n";
    for (const auto& o : r.models) {
        const std::pair<const char*, std::pair<double, double>> rows[] = {
            {"MSE", {o.median_scratch.mse, o.median_transfer.mse}},
            {"RMSE", {o.median_scratch.rmse, o.median_transfer.rmse}},
            {"MAPE", {o.median_scratch.mape, o.median_transfer.mape}}};
        for (const auto& [metric, v] : rows)
            out << to_string(o.arch) << ',' << metric << ',' << format_number(v.first) << ','
                << format_number(v.second) << ',' << format_number(improvement(v.first, v.second)) << '\n';
    }
    return out.str();
}

inline std::string table2_csv(const ExperimentReport& r) {
    std::ostringstream out;
    out << "metric";
    for (const auto& o : r.models) out << ',' << to_string(o.arch);
    out << '\n';
    const char* names[] = {"MSE", "RMSE", "MAPE"};
    for (int k = 0; k < 3; ++k) {
        out << names[k];
        for (const auto& o : r.models) {
            const Metrics& m = o.median_transfer;
            out << ',' << format_number(k == 0 ? m.mse : k == 1 ? m.rmse : m.mape);
        }
        out << '\n';
    }
    return out.str();
}

inline std::string fig6_csv(const ExperimentReport& r) {
    std::ostringstream out;
    out << "hour,actual";
    for (const auto& o : r.models) out << ',' << to_string(o.arch);
    out << '\n';
    for (std::size_t i = 0; i < r.series.hour.size(); ++i) {
        out << r.series.hour[i] << ',' << format_number(r.series.actual[i]);
        for (const auto& o : r.models) out << ',' << format_number(r.series.predicted.at(to_string(o.arch))[i]);
        out << '\n';
    }
    return out.str();
}

inline std::string report_json_text(const ExperimentReport& r) { return report_to_json(r).dump(1) + "\n"; }

/// Writes report.json, table1.csv, table2.csv and fig6.csv into `dir` (created if needed).
inline std::vector<std::filesystem::path> emit_report(const ExperimentReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory '" + dir.string() + "': " + ec.message());
    const std::pair<const char*, std::string> files[] = {{"report.json", report_json_text(r)},
                                                          {"table1.csv", table1_csv(r)},
                                                          {"table2.csv", table2_csv(r)},
                                                          {"fig6.csv", fig6_csv(r)}};
    std::vector<std::filesystem::path> written;
    for (const auto& [name, text] : files) {
        write_file_atomic(dir / name, text);
        written.push_back(dir / name);
    }
    return written;
}

}  // namespace loadtl
