#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error,
// 2 data/validation error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "loadtl/report.hpp"

namespace loadtl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

inline std::vector<LoadRecord> read_records(const std::string& path, std::ostream& err) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open data file '" + path + "'");
    try {
        auto parsed = parse_dataset(in);
        for (const auto& w : parsed.warnings) err << "warning: " << path << ": " << w << '\n';
        return std::move(parsed.records);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline void write_text(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-")
        out << text;
    else
        write_file_atomic(path, text);
}

struct CommonFlags {
    std::uint64_t seed = 0;
    std::size_t epochs = 15;
    std::size_t window = 6;
    std::size_t budget = 336;
    std::string kernel = "cosine";
};

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Building load forecasting with RNN, LSTM and Transformer models and building-to-building transfer"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonFlags common;
    auto* seed_opt = app.add_option("--seed", common.seed, "Random seed")->capture_default_str();
    auto* epochs_opt = app.add_option("--epochs", common.epochs, "Training epochs")->capture_default_str();
    auto* window_opt = app.add_option("--window", common.window, "Input window length in hours")->capture_default_str();
    auto* budget_opt = app.add_option("--budget", common.budget, "Target training samples")->capture_default_str();
    auto* kernel_opt = app.add_option("--kernel", common.kernel, "Attention kernel")
                           ->check(CLI::IsMember({"cosine", "scaled_dot"}))
                           ->capture_default_str();

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "Generate a synthetic hourly building CSV");
    std::size_t days = 70;
    SyntheticProfile profile;
    std::string preset, synth_out = "-", start = "2016-01-01";
    synth->add_option("--days", days, "Number of days")->capture_default_str();
    auto* base_opt = synth->add_option("--base-kw", profile.base_kw, "Base load (kW)")->capture_default_str();
    auto* amp_opt = synth->add_option("--daily-amp", profile.daily_amp, "Daily amplitude (kW)")->capture_default_str();
    auto* wk_opt = synth->add_option("--weekend-factor", profile.weekend_factor, "Weekend scale")->capture_default_str();
    auto* noise_opt = synth->add_option("--noise-sd", profile.noise_sd, "Load noise sd (kW)")->capture_default_str();
    auto* temp_opt = synth->add_option("--temp-coupling", profile.temp_coupling, "kW per degree from 15C")->capture_default_str();
    auto* days_opt = synth->get_option("--days");
    synth->add_option("--preset", preset, "Start from the bundled pair's source or target profile")
        ->check(CLI::IsMember({"source", "target"}));
    synth->add_option("--start", start, "First day (YYYY-MM-DD)")->capture_default_str();
    synth->add_option("-o,--out", synth_out, "Output CSV ('-' for stdout)")->capture_default_str();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Train a model on a source building");
    std::string data, arch_name = "transformer", ckpt_out, label;
    double lr = 1e-3;
    std::size_t batch_size = 32, hidden = 32, d_model = 32, blocks = 2;
    pre->add_option("--data", data, "Source building CSV")->required();
    pre->add_option("--arch", arch_name, "rnn | lstm | transformer")
        ->check(CLI::IsMember({"rnn", "lstm", "transformer"}))
        ->capture_default_str();
    pre->add_option("-o,--out", ckpt_out, "Checkpoint path")->required();
    pre->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    pre->add_option("--batch-size", batch_size, "Mini-batch size")->capture_default_str();
    pre->add_option("--hidden", hidden, "RNN/LSTM hidden size")->capture_default_str();
    pre->add_option("--d-model", d_model, "Transformer model width (also attention width)")->capture_default_str();
    pre->add_option("--blocks", blocks, "Transformer blocks")->capture_default_str();
    pre->add_option("--label", label, "Source label stored in the checkpoint (default: data path)");

    // finetune
    auto* ft = app.add_subcommand("finetune", "Warm-start a checkpoint on a target building");
    std::string ckpt_in, metrics_out = "-", freeze = "none", ft_arch;
    ft->add_option("--checkpoint", ckpt_in, "Pretrained checkpoint")->required();
    ft->add_option("--data", data, "Target building CSV")->required();
    ft->add_option("--arch", ft_arch, "Expected architecture (default: the checkpoint's)")
        ->check(CLI::IsMember({"rnn", "lstm", "transformer"}));
    ft->add_option("-o,--out", ckpt_out, "Fine-tuned checkpoint path")->required();
    ft->add_option("--metrics-out", metrics_out, "Metrics JSON ('-' for stdout)")->capture_default_str();
    ft->add_option("--freeze", freeze, "none | freeze_all_but_head | freeze_embedding")
        ->check(CLI::IsMember({"none", "freeze_all_but_head", "freeze_embedding"}))
        ->capture_default_str();
    ft->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    ft->add_option("--batch-size", batch_size, "Mini-batch size")->capture_default_str();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a building CSV");
    std::size_t from = 0;
    std::string eval_out = "-";
    ev->add_option("--checkpoint", ckpt_in, "Checkpoint")->required();
    ev->add_option("--data", data, "Building CSV")->required();
    ev->add_option("--from", from, "Skip this many leading windows")->capture_default_str();
    ev->add_option("-o,--out", eval_out, "Metrics JSON ('-' for stdout)")->capture_default_str();

    // compare
    auto* cmp = app.add_subcommand("compare", "Pretrain, fine-tune and compare all models; write report files");
    std::string source_path, target_path, report_dir, plan_path;
    std::size_t n_seeds = 5, horizon = 168;
    std::vector<std::string> archs{"transformer", "lstm", "rnn"};
    cmp->add_option("--source", source_path, "Source building CSV")->required();
    cmp->add_option("--target", target_path, "Target building CSV")->required();
    cmp->add_option("-o,--out", report_dir, "Report directory")->required();
    cmp->add_option("--seeds", n_seeds, "Number of seeds (seed, seed+1, ...)")->capture_default_str();
    cmp->add_option("--horizon", horizon, "Hours in the forecast-vs-actual series")->capture_default_str();
    cmp->add_option("--plan", plan_path, "Transfer plan JSON (flags given explicitly override it)");
    cmp->add_option("--archs", archs, "Architectures to compare")
        ->check(CLI::IsMember({"rnn", "lstm", "transformer"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    const AttentionKernel kernel = parse_attention_kernel(common.kernel);
    auto base_config = [&] {
        TrainConfig c;
        c.epochs = common.epochs;
        c.seed = common.seed;
        c.learning_rate = lr;
        c.batch_size = batch_size;
        return c;
    };

    try {
        if (synth->parsed()) {
            SyntheticPairConfig pair;
            std::uint64_t seed = common.seed;
            if (!preset.empty()) {
                const bool src = preset == "source";
                const SyntheticProfile p = src ? pair.source : pair.target;
                if (!base_opt->count()) profile.base_kw = p.base_kw;
                if (!amp_opt->count()) profile.daily_amp = p.daily_amp;
                if (!wk_opt->count()) profile.weekend_factor = p.weekend_factor;
                if (!noise_opt->count()) profile.noise_sd = p.noise_sd;
                if (!temp_opt->count()) profile.temp_coupling = p.temp_coupling;
                if (!days_opt->count()) days = src ? pair.source_days : pair.target_days;
                if (!seed_opt->count()) seed = src ? pair.source_seed : pair.target_seed;
            }
            const HourStamp first = parse_timestamp(start + "T00:00");
            std::ostringstream csv;
            write_dataset(csv, generate_synthetic_building(seed, days, profile, first));
            write_text(synth_out, csv.str(), out);
            return kOk;
        }

        if (pre->parsed()) {
            const auto records = read_records(data, err);
            ModelDims dims;
            dims.arch = parse_architecture(arch_name);
            dims.window = common.window;
            dims.kernel = kernel;
            dims.hidden = hidden;
            dims.d_model = d_model;
            dims.d_attn = d_model;
            dims.blocks = blocks;
            auto result = pretrain(records, dims, base_config(), label.empty() ? data : label);
            save_checkpoint(result.checkpoint, ckpt_out);
            out << nlohmann::json{{"checkpoint", ckpt_out},
                                  {"architecture", arch_name},
                                  {"train_loss", result.history.train}}
                       .dump(1)
                << '\n';
            return kOk;
        }

        if (ft->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_in);
            const Architecture arch = ft_arch.empty() ? ckpt.params.arch() : parse_architecture(ft_arch);
            const auto records = read_records(data, err);
            const TargetSplit split = prepare_target(records, common.budget, ckpt.params.dims.window);
            auto run = finetune(ckpt, arch, split, base_config(), parse_freeze_policy(freeze));
            save_checkpoint(Checkpoint{kCheckpointFormatVersion, run.params, split.stats,
                                       Provenance{common.seed, common.epochs, data}},
                            ckpt_out);
            const nlohmann::json report{{"checkpoint", ckpt_out},
                                        {"architecture", to_string(arch)},
                                        {"train_samples", split.train.size()},
                                        {"eval_samples", split.eval.size()},
                                        {"metrics", metrics_to_json(run.metrics)},
                                        {"history", history_to_json(run.history)}};
            write_text(metrics_out, report.dump(1) + "\n", out);
            return kOk;
        }

        if (ev->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_in);
            const auto records = read_records(data, err);
            const FeatureTable table = apply(ckpt.normalizer, engineer_features(impute_missing(records)));
            auto windows = make_windows(table, ckpt.params.dims.window, 1);
            if (from >= windows.size())
                throw ValidationError("--from " + std::to_string(from) + " leaves no windows out of " +
                                      std::to_string(windows.size()));
            windows.erase(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(from));
            const nlohmann::json report{{"architecture", to_string(ckpt.params.arch())},
                                        {"samples", windows.size()},
                                        {"metrics", metrics_to_json(evaluate(ckpt.params, windows))}};
            write_text(eval_out, report.dump(1) + "\n", out);
            return kOk;
        }

        if (cmp->parsed()) {
            ComparisonConfig config;
            if (!plan_path.empty()) {
                try {
                    config.plan = plan_from_json(nlohmann::json::parse(read_file(plan_path)));
                } catch (const nlohmann::json::exception& e) {
                    throw ParseError(plan_path + ": " + e.what());
                }
            }
            TransferPlan& plan = config.plan;
            plan.source = source_path;
            plan.target = target_path;
            if (budget_opt->count() || plan_path.empty()) plan.budget = common.budget;
            if (window_opt->count() || plan_path.empty()) plan.dims.window = common.window;
            if (kernel_opt->count() || plan_path.empty()) plan.dims.kernel = kernel;
            if (epochs_opt->count() || plan_path.empty())
                plan.pretrain.epochs = plan.finetune.epochs = plan.scratch.epochs = common.epochs;
            config.series_horizon = horizon;
            config.architectures.clear();
            for (const auto& a : archs) config.architectures.push_back(parse_architecture(a));
            if (n_seeds == 0) throw ValidationError("--seeds must be at least 1");
            std::vector<std::uint64_t> seeds;
            for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(common.seed + i);

            const auto source = read_records(source_path, err);
            const auto target = read_records(target_path, err);
            const auto report = run_comparison(target, source, config, seeds);
            for (const auto& p : emit_report(report, report_dir)) out << "wrote " << p.string() << '\n';
            out << table2_csv(report);
            return kOk;
        }
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    }
    err << app.help();
    return kUsage;
}

}  // namespace loadtl::cli
