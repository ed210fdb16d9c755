#pragma once

// Building-to-building transfer: pretrain on a data-rich source building,
// warm-start on a data-scarce target, and compare against training the target
// from scratch under the same split.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loadtl/metrics.hpp"
#include "loadtl/training.hpp"

namespace loadtl {

inline constexpr std::uint64_t kInitStream = 0x494e4954ULL;

/// Features + normalizer + windows for one building. The normalizer is fitted
/// on the rows covering the first `fit_samples` windows (all rows if unset).
struct PreparedBuilding {
    NormalizerStats stats;
    std::vector<WindowSample> samples;
};

inline PreparedBuilding prepare_building(const std::vector<LoadRecord>& records, std::size_t window,
                                         std::size_t horizon, std::optional<std::size_t> fit_samples = {}) {
    const FeatureTable raw = engineer_features(impute_missing(records));
    const auto raw_windows = make_windows(raw, window, horizon);
    if (raw_windows.empty())
        throw ValidationError("series of " + std::to_string(raw.rows()) + " hours is too short for window " +
                              std::to_string(window) + " + horizon " + std::to_string(horizon));
    RowRange fit{0, raw.rows()};
    if (fit_samples) {
        if (*fit_samples < 1 || *fit_samples >= raw_windows.size())
            throw ValidationError("budget " + std::to_string(*fit_samples) + " leaves no evaluation data out of " +
                                  std::to_string(raw_windows.size()) + " samples");
        fit.end = raw_windows[*fit_samples - 1].target_row + 1;
    }
    PreparedBuilding out;
    out.stats = fit_normalizer(raw, fit);
    out.samples = make_windows(apply(out.stats, raw), window, horizon);
    return out;
}

/// Target building split chronologically into a budgeted train set and the rest.
struct TargetSplit {
    NormalizerStats stats;
    std::vector<WindowSample> train;
    std::vector<WindowSample> eval;
};

inline TargetSplit prepare_target(const std::vector<LoadRecord>& records, std::size_t budget, std::size_t window = 6,
                                  std::size_t horizon = 1) {
    PreparedBuilding b = prepare_building(records, window, horizon, budget);
    auto split = split_budget(b.samples, budget);
    return {std::move(b.stats), std::move(split.train), std::move(split.eval)};
}

enum class FreezePolicy { none, freeze_all_but_head, freeze_embedding };

inline std::string to_string(FreezePolicy p) {
    switch (p) {
        case FreezePolicy::none: return "none";
        case FreezePolicy::freeze_all_but_head: return "freeze_all_but_head";
        case FreezePolicy::freeze_embedding: return "freeze_embedding";
    }
    return "?";
}

inline FreezePolicy parse_freeze_policy(const std::string& s) {
    if (s == "none") return FreezePolicy::none;
    if (s == "freeze_all_but_head") return FreezePolicy::freeze_all_but_head;
    if (s == "freeze_embedding") return FreezePolicy::freeze_embedding;
    throw ValidationError("unknown freeze policy '" + s + "'");
}

inline FreezeSet freeze_groups(FreezePolicy policy, const ModelParams& params) {
    FreezeSet groups;
    params.for_each([&](const std::string& n, const Matrix&) { groups.insert(tensor_group(n)); });
    switch (policy) {
        case FreezePolicy::none: return {};
        case FreezePolicy::freeze_all_but_head: groups.erase("head"); return groups;
        case FreezePolicy::freeze_embedding:
            if (!groups.count("embed"))
                throw ValidationError("freeze_embedding needs an embedding layer; " + to_string(params.arch()) +
                                      " has none");
            return {"embed"};
    }
    return {};
}

struct PretrainResult {
    Checkpoint checkpoint;
    LossHistory history;
};

/// Trains on every window of the source series; the checkpoint carries the
/// source's own normalizer.
inline PretrainResult pretrain(const std::vector<LoadRecord>& source, ModelDims dims, const TrainConfig& config,
                               const std::string& label = "source", std::size_t horizon = 1) {
    const PreparedBuilding b = prepare_building(source, dims.window, horizon);
    dims.features = kFeatureCount;
    Rng rng(derive_seed(config.seed, kInitStream));
    auto trained = train(init_params(dims, rng), b.samples, {}, config);
    Checkpoint ckpt{kCheckpointFormatVersion, std::move(trained.params), b.stats,
                    Provenance{config.seed, config.epochs, label}};
    return {std::move(ckpt), std::move(trained.history)};
}

struct RunResult {
    ModelParams params;
    Metrics metrics;  // on the target evaluation split
    LossHistory history;
};

inline Metrics evaluate(const ModelParams& params, const std::vector<WindowSample>& samples) {
    return compute_metrics(forecast_sequence(params, samples), targets_of(samples));
}

inline RunResult finetune(const Checkpoint& checkpoint, Architecture arch, const TargetSplit& target,
                          TrainConfig config, FreezePolicy freeze = FreezePolicy::none) {
    ModelParams start = params_for(checkpoint, arch);
    if (!target.train.empty()) check_window(start.dims, target.train.front().inputs);
    const FreezeSet groups = freeze_groups(freeze, start);
    config.freeze.insert(groups.begin(), groups.end());
    auto trained = train(std::move(start), target.train, target.eval, config);
    Metrics m = evaluate(trained.params, target.eval);
    return {std::move(trained.params), m, std::move(trained.history)};
}

inline RunResult train_scratch(const TargetSplit& target, ModelDims dims, const TrainConfig& config) {
    dims.features = kFeatureCount;
    Rng rng(derive_seed(config.seed, kInitStream));
    auto trained = train(init_params(dims, rng), target.train, target.eval, config);
    Metrics m = evaluate(trained.params, target.eval);
    return {std::move(trained.params), m, std::move(trained.history)};
}

struct TransferPlan {
    std::string source = "source";  // dataset reference (path or label)
    std::string target = "target";
    std::size_t budget = 336;
    std::size_t horizon = 1;
    ModelDims dims;
    TrainConfig pretrain;
    TrainConfig finetune;
    TrainConfig scratch;
    FreezePolicy freeze = FreezePolicy::none;
};

struct PairedRun {
    std::uint64_t seed = 0;
    RunResult scratch;
    RunResult transfer;
    LossHistory pretrain_history;
    NormalizerStats source_stats;
};

struct MetricImprovement {
    double mse = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
};

struct TransferOutcome {
    Architecture arch = Architecture::transformer;
    std::vector<PairedRun> runs;
    Metrics median_scratch;
    Metrics median_transfer;
    MetricImprovement improvement_pct;            // improvement of the median metrics
    double median_per_seed_mse_improvement = 0.0;  // median over seeds of improvement(scratch, transfer)
    std::size_t transfer_wins = 0;                // seeds where transfer eval MSE < scratch eval MSE
};

inline TransferOutcome summarize(Architecture arch, std::vector<PairedRun> runs) {
    TransferOutcome o;
    o.arch = arch;
    std::vector<Metrics> s, t;
    std::vector<double> per_seed;
    for (const auto& r : runs) {
        s.push_back(r.scratch.metrics);
        t.push_back(r.transfer.metrics);
        per_seed.push_back(improvement(r.scratch.metrics.mse, r.transfer.metrics.mse));
        if (r.transfer.metrics.mse < r.scratch.metrics.mse) ++o.transfer_wins;
    }
    o.median_scratch = median_metrics(s);
    o.median_transfer = median_metrics(t);
    o.improvement_pct = {improvement(o.median_scratch.mse, o.median_transfer.mse),
                         improvement(o.median_scratch.rmse, o.median_transfer.rmse),
                         improvement(o.median_scratch.mape, o.median_transfer.mape)};
    o.median_per_seed_mse_improvement = lower_median(per_seed);
    o.runs = std::move(runs);
    return o;
}

/// One paired (scratch, transfer) run for `seed`; both consume the same split.
inline PairedRun run_paired(const TransferPlan& plan, const std::vector<LoadRecord>& source,
                            const TargetSplit& target, std::uint64_t seed) {
    auto with_seed = [seed](TrainConfig c) {
        c.seed = seed;
        return c;
    };
    PairedRun run;
    run.seed = seed;
    auto pre = pretrain(source, plan.dims, with_seed(plan.pretrain), plan.source, plan.horizon);
    run.pretrain_history = std::move(pre.history);
    run.source_stats = pre.checkpoint.normalizer;
    run.transfer = finetune(pre.checkpoint, plan.dims.arch, target, with_seed(plan.finetune), plan.freeze);
    run.scratch = train_scratch(target, plan.dims, with_seed(plan.scratch));
    return run;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
            {"shuffle", c.shuffle},     {"clip_norm", c.clip_norm},         {"freeze", c.freeze}};
}

/// Missing keys keep the values already in `base`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
    base.epochs = j.value("epochs", base.epochs);
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.shuffle = j.value("shuffle", base.shuffle);
    base.clip_norm = j.value("clip_norm", base.clip_norm);
    if (j.contains("freeze")) base.freeze = j.at("freeze").get<FreezeSet>();
    return base;
}

inline nlohmann::json plan_to_json(const TransferPlan& p) {
    auto dims = dims_to_json(p.dims);
    dims["architecture"] = to_string(p.dims.arch);
    return {{"source", p.source},
            {"target", p.target},
            {"budget", p.budget},
            {"horizon", p.horizon},
            {"freeze", to_string(p.freeze)},
            {"dims", std::move(dims)},
            {"pretrain", train_config_to_json(p.pretrain)},
            {"finetune", train_config_to_json(p.finetune)},
            {"scratch", train_config_to_json(p.scratch)}};
}

/// Reads a plan document; every key is optional and overrides `base`.
/// Unknown keys are ignored.
inline TransferPlan plan_from_json(const nlohmann::json& j, TransferPlan base = {}) {
    try {
        base.source = j.value("source", base.source);
        base.target = j.value("target", base.target);
        base.budget = j.value("budget", base.budget);
        base.horizon = j.value("horizon", base.horizon);
        if (j.contains("freeze")) base.freeze = parse_freeze_policy(j.at("freeze").get<std::string>());
        if (j.contains("dims")) {
            const auto& d = j.at("dims");
            if (d.contains("architecture")) base.dims.arch = parse_architecture(d.at("architecture").get<std::string>());
            base.dims.window = d.value("window", base.dims.window);
            base.dims.hidden = d.value("hidden", base.dims.hidden);
            base.dims.d_model = d.value("d_model", base.dims.d_model);
            base.dims.d_attn = d.value("d_attn", base.dims.d_attn);
            base.dims.blocks = d.value("blocks", base.dims.blocks);
            base.dims.mlp_hidden = d.value("mlp_hidden", base.dims.mlp_hidden);
            if (d.contains("kernel")) base.dims.kernel = parse_attention_kernel(d.at("kernel").get<std::string>());
            base.dims.residual = d.value("residual", base.dims.residual);
            base.dims.layer_norm = d.value("layer_norm", base.dims.layer_norm);
        }
        // Scratch mirrors fine-tuning unless the plan says otherwise.
        if (j.contains("pretrain")) base.pretrain = train_config_from_json(j.at("pretrain"), base.pretrain);
        if (j.contains("finetune")) {
            base.finetune = train_config_from_json(j.at("finetune"), base.finetune);
            if (!j.contains("scratch")) base.scratch = base.finetune;
        }
        if (j.contains("scratch")) base.scratch = train_config_from_json(j.at("scratch"), base.scratch);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed transfer plan: ") + e.what());
    }
    if (base.budget < 1) throw ValidationError("transfer plan: budget must be >= 1");
    validate(base.dims);
    return base;
}

inline TransferOutcome run_transfer_experiment(const TransferPlan& plan, const std::vector<LoadRecord>& source,
                                               const std::vector<LoadRecord>& target,
                                               const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ValidationError("run_transfer_experiment: at least one seed is required");
    const TargetSplit split = prepare_target(target, plan.budget, plan.dims.window, plan.horizon);
    std::vector<PairedRun> runs;
    for (auto seed : seeds) runs.push_back(run_paired(plan, source, split, seed));
    return summarize(plan.dims.arch, std::move(runs));
}

}  // namespace loadtl
