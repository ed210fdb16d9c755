#pragma once

// Loss, reverse-mode gradients, Adam, the fixed-epoch training loop and
// checkpoint persistence.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "loadtl/dataio.hpp"
#include "loadtl/models.hpp"

namespace loadtl {

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.empty() || pred.size() != target.size())
        throw DimensionError("mse_loss: " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(target.size()) + " targets");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

inline std::vector<double> targets_of(std::span<const WindowSample> samples) {
    std::vector<double> t;
    t.reserve(samples.size());
    for (const auto& s : samples) t.push_back(s.target);
    return t;
}

/// Mean squared error of `params` over `samples`.
inline double batch_loss(const ModelParams& params, std::span<const WindowSample> samples) {
    std::vector<double> pred;
    pred.reserve(samples.size());
    for (const auto& s : samples) pred.push_back(predict(params, s.inputs));
    return mse_loss(pred, targets_of(samples));
}

inline std::vector<double> flatten(const ModelParams& p) {
    std::vector<double> out;
    out.reserve(p.parameter_count());
    p.for_each([&](const std::string&, const Matrix& m) { out.insert(out.end(), m.values().begin(), m.values().end()); });
    return out;
}

inline void unflatten(ModelParams& p, std::span<const double> flat) {
    if (flat.size() != p.parameter_count())
        throw DimensionError("unflatten: " + std::to_string(flat.size()) + " values for " +
                             std::to_string(p.parameter_count()) + " parameters");
    std::size_t off = 0;
    p.for_each([&](const std::string&, Matrix& m) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + m.size()), m.values().begin());
        off += m.size();
    });
}

struct Gradient {
    ModelParams grads;  // same tensors and shapes as the parameters
    double loss = 0.0;
};

/// Exact gradient of the batch MSE w.r.t. every parameter tensor.
inline Gradient backward(const ModelParams& params, std::span<const WindowSample> batch) {
    if (batch.empty()) throw ValidationError("backward: empty batch");
    Tape tape;
    std::vector<std::pair<std::string, Var>> leaves;
    std::vector<Var> preds;
    preds.reserve(batch.size());
    std::visit(
        [&](const auto& w) {
            const auto bound = bind(tape, w, &leaves);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const Var y = record_forward(tape, params.dims, bound, batch[i].inputs);
                if (!std::isfinite(tape.value(y)[0]))
                    throw NumericError("non-finite prediction for sample " + std::to_string(i));
                preds.push_back(y);
            }
        },
        params.weights);
    const Var loss = scaled_squared_error(preds, targets_of(batch), 1.0 / static_cast<double>(batch.size()));
    if (!std::isfinite(tape.value(loss)[0])) throw NumericError("non-finite batch loss");
    tape.backward(loss);

    Gradient g{zero_params(params.dims), tape.value(loss)[0]};
    std::size_t i = 0;
    g.grads.for_each([&](const std::string&, Matrix& m) { m = tape.grad(leaves[i++].second); });
    return g;
}

using FreezeSet = std::set<std::string>;

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const ModelParams& p) {
        AdamState s;
        p.for_each([&](const std::string&, const Matrix& w) {
            s.m.emplace_back(w.rows(), w.cols());
            s.v.emplace_back(w.rows(), w.cols());
        });
        return s;
    }
};

/// Bias-corrected Adam. Tensors whose group is in `frozen` are left untouched,
/// moments included.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
                      const FreezeSet& frozen = {}) {
    if (!(lr > 0)) throw ValidationError("adam_step: learning rate must be positive");
    std::vector<Matrix*> ps;
    std::vector<const Matrix*> gs;
    std::vector<bool> skip;
    params.for_each([&](const std::string& name, Matrix& m) {
        ps.push_back(&m);
        skip.push_back(frozen.count(tensor_group(name)) > 0);
    });
    grads.for_each([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
    if (gs.size() != ps.size() || state.m.size() != ps.size())
        throw DimensionError("adam_step: parameter, gradient and state tensor counts differ");
    ++state.t;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < ps.size(); ++k) {
        if (skip[k]) continue;
        require_same_shape(*ps[k], *gs[k], "adam_step");
        Matrix& m = state.m[k];
        Matrix& v = state.v[k];
        for (std::size_t i = 0; i < ps[k]->size(); ++i) {
            const double g = (*gs[k])[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            (*ps[k])[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

/// Rescales `grads` so their global L2 norm over unfrozen groups is at most max_norm.
inline double clip_global_norm(ModelParams& grads, double max_norm, const FreezeSet& frozen = {}) {
    double sq = 0.0;
    grads.for_each([&](const std::string& name, const Matrix& m) {
        if (frozen.count(tensor_group(name))) return;
        for (double v : m.values()) sq += v * v;
    });
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        grads.for_each([&](const std::string&, Matrix& m) {
            for (double& v : m.values()) v *= s;
        });
    }
    return norm;
}

struct TrainConfig {
    std::size_t epochs = 15;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    bool shuffle = true;
    FreezeSet freeze;
    double clip_norm = 5.0;
};

inline void validate(const TrainConfig& c) {
    if (c.epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (!(c.learning_rate > 0)) throw ValidationError("train: learning_rate must be positive");
    if (c.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
}

struct LossHistory {
    std::vector<double> train;
    std::vector<double> eval;  // empty when no evaluation set was given
};

struct TrainResult {
    ModelParams params;
    LossHistory history;
};

inline TrainResult train(ModelParams params, std::span<const WindowSample> train_samples,
                         std::span<const WindowSample> eval_samples, const TrainConfig& config) {
    validate(config);
    if (train_samples.empty()) throw ValidationError("train: empty training set");
    {
        std::set<std::string> groups;
        params.for_each([&](const std::string& n, const Matrix&) { groups.insert(tensor_group(n)); });
        for (const auto& f : config.freeze)
            if (!groups.count(f))
                throw ValidationError("train: cannot freeze unknown parameter group '" + f + "' for " +
                                      to_string(params.arch()));
    }
    Rng order_rng(derive_seed(config.seed, 0x5348554646ULL));
    AdamState adam = AdamState::for_params(params);
    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result{std::move(params), {}};
    std::vector<WindowSample> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) order_rng.shuffle(order);
        double sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_samples[order[i]]);
            Gradient g = backward(result.params, batch);
            sum += g.loss * static_cast<double>(batch.size());
            clip_global_norm(g.grads, config.clip_norm, config.freeze);
            adam_step(result.params, g.grads, adam, config.learning_rate, config.freeze);
        }
        result.history.train.push_back(sum / static_cast<double>(order.size()));
        if (!eval_samples.empty()) result.history.eval.push_back(batch_loss(result.params, eval_samples));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

struct Provenance {
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    std::string source;
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Checkpoint {
    int format_version = kCheckpointFormatVersion;
    ModelParams params;
    NormalizerStats normalizer;
    Provenance provenance;
};

inline nlohmann::json dims_to_json(const ModelDims& d) {
    return {{"features", d.features}, {"window", d.window},       {"hidden", d.hidden},
            {"d_model", d.d_model},   {"d_attn", d.d_attn},       {"blocks", d.blocks},
            {"mlp_hidden", d.mlp_hidden}, {"kernel", to_string(d.kernel)}, {"residual", d.residual},
            {"layer_norm", d.layer_norm}};
}

inline ModelDims dims_from_json(Architecture arch, const nlohmann::json& j) {
    ModelDims d;
    d.arch = arch;
    d.features = j.at("features").get<std::size_t>();
    d.window = j.at("window").get<std::size_t>();
    d.hidden = j.at("hidden").get<std::size_t>();
    d.d_model = j.at("d_model").get<std::size_t>();
    d.d_attn = j.at("d_attn").get<std::size_t>();
    d.blocks = j.at("blocks").get<std::size_t>();
    d.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    d.kernel = parse_attention_kernel(j.at("kernel").get<std::string>());
    d.residual = j.at("residual").get<bool>();
    d.layer_norm = j.at("layer_norm").get<bool>();
    return d;
}

inline nlohmann::json normalizer_to_json(const NormalizerStats& s) {
    return {{"min", s.min}, {"max", s.max}, {"target_min", s.target_min}, {"target_max", s.target_max}};
}

inline NormalizerStats normalizer_from_json(const nlohmann::json& j) {
    NormalizerStats s;
    s.min = j.at("min").get<std::vector<double>>();
    s.max = j.at("max").get<std::vector<double>>();
    s.target_min = j.at("target_min").get<double>();
    s.target_max = j.at("target_max").get<double>();
    if (s.min.size() != s.max.size()) throw CheckpointError("normalizer min/max lengths differ");
    return s;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    nlohmann::json tensors = nlohmann::json::object();
    c.params.for_each([&](const std::string& name, const Matrix& m) {
        tensors[name] = {{"shape", {m.rows(), m.cols()}},
                         {"values", std::vector<double>(m.values().begin(), m.values().end())}};
    });
    return {{"format_version", c.format_version},
            {"architecture", to_string(c.params.arch())},
            {"dims", dims_to_json(c.params.dims)},
            {"tensors", std::move(tensors)},
            {"normalizer", normalizer_to_json(c.normalizer)},
            {"provenance",
             {{"seed", c.provenance.seed}, {"epochs", c.provenance.epochs}, {"source", c.provenance.source}}}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        Checkpoint c;
        c.format_version = j.at("format_version").get<int>();
        if (c.format_version != kCheckpointFormatVersion)
            throw CheckpointError("unsupported checkpoint format_version " + std::to_string(c.format_version) +
                                  " (this build reads version " + std::to_string(kCheckpointFormatVersion) + ")");
        const Architecture arch = parse_architecture(j.at("architecture").get<std::string>());
        c.params = zero_params(dims_from_json(arch, j.at("dims")));
        const auto& tensors = j.at("tensors");
        c.params.for_each([&](const std::string& name, Matrix& m) {
            if (!tensors.contains(name)) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
            const auto& t = tensors.at(name);
            const auto shape = t.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
                throw CheckpointError("tensor '" + name + "' has shape " + t.at("shape").dump() + ", expected [" +
                                      std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "]");
            auto values = t.at("values").get<std::vector<double>>();
            if (values.size() != m.size())
                throw CheckpointError("tensor '" + name + "' has " + std::to_string(values.size()) + " values, expected " +
                                      std::to_string(m.size()));
            m = Matrix(m.rows(), m.cols(), std::move(values));
        });
        c.normalizer = normalizer_from_json(j.at("normalizer"));
        const auto& prov = j.at("provenance");
        c.provenance.seed = prov.at("seed").get<std::uint64_t>();
        c.provenance.epochs = prov.at("epochs").get<std::size_t>();
        c.provenance.source = prov.at("source").get<std::string>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what());
    } catch (const ValidationError& e) {
        throw CheckpointError(std::string("invalid checkpoint: ") + e.what());
    }
}

inline std::string serialize_checkpoint(const Checkpoint& c) { return checkpoint_to_json(c).dump(1) + "\n"; }

inline Checkpoint parse_checkpoint(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what());
    }
    return checkpoint_from_json(j);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out << contents;
        if (!out) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

/// Checkpoint parameters, provided they were trained for `expected`.
inline ModelParams params_for(const Checkpoint& c, Architecture expected) {
    if (c.params.arch() != expected)
        throw CheckpointError("architecture mismatch: checkpoint holds " + to_string(c.params.arch()) +
                              ", requested " + to_string(expected));
    return c.params;
}

}  // namespace loadtl
