#pragma once

// RNN, LSTM and encoder-only Transformer forecasters.
//
// Each architecture's weights are a struct template over the tensor type, and
// every forward pass is a template over that type: instantiated with Matrix it
// is plain inference, instantiated with Var it records onto an autodiff Tape.
// Both paths run the same code and the same kernels.
//
// Conventions: RNN/LSTM states are column vectors (n x 1) and gate matrices
// multiply from the left; the Transformer keeps one row per time step.

#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "loadtl/autodiff.hpp"

namespace loadtl {

enum class Architecture { rnn, lstm, transformer };

inline std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::rnn: return "rnn";
        case Architecture::lstm: return "lstm";
        case Architecture::transformer: return "transformer";
    }
    return "?";
}

inline Architecture parse_architecture(const std::string& s) {
    if (s == "rnn") return Architecture::rnn;
    if (s == "lstm") return Architecture::lstm;
    if (s == "transformer") return Architecture::transformer;
    throw ValidationError("unknown architecture '" + s + "' (expected rnn|lstm|transformer)");
}

struct ModelDims {
    Architecture arch = Architecture::transformer;
    std::size_t features = 12;
    std::size_t window = 6;
    std::size_t hidden = 32;  // rnn / lstm
    std::size_t d_model = 32;
    std::size_t d_attn = 32;
    std::size_t blocks = 2;
    std::size_t mlp_hidden = 64;
    AttentionKernel kernel = AttentionKernel::cosine;
    bool residual = true;
    bool layer_norm = true;

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

inline void validate(const ModelDims& d) {
    auto need = [](std::size_t v, const char* name) {
        if (v == 0) throw ValidationError(std::string("model dimension '") + name + "' must be positive");
    };
    need(d.features, "features");
    need(d.window, "window");
    if (d.arch == Architecture::transformer) {
        need(d.d_model, "d_model");
        need(d.d_attn, "d_attn");
        need(d.blocks, "blocks");
        need(d.mlp_hidden, "mlp_hidden");
    } else {
        need(d.hidden, "hidden");
    }
}

template <class T>
struct RnnWeights {
    T U;    // hidden x F
    T W;    // hidden x hidden
    T b_h;  // hidden x 1
    T V;    // 1 x hidden
    T b_o;  // 1 x 1

    template <class Self, class F>
    static void visit(Self& s, F&& f) {
        f("cell.U", s.U);
        f("cell.W", s.W);
        f("cell.b_h", s.b_h);
        f("head.V", s.V);
        f("head.b_o", s.b_o);
    }
};

template <class T>
struct LstmWeights {
    T w_i, w_f, w_o, w_c;  // hidden x (hidden + F), acting on [h_prev; x]
    T b_i, b_f, b_o, b_c;  // hidden x 1
    T head_w;              // 1 x hidden
    T head_b;              // 1 x 1

    template <class Self, class F>
    static void visit(Self& s, F&& f) {
        f("cell.w_i", s.w_i);
        f("cell.w_f", s.w_f);
        f("cell.w_o", s.w_o);
        f("cell.w_c", s.w_c);
        f("cell.b_i", s.b_i);
        f("cell.b_f", s.b_f);
        f("cell.b_o", s.b_o);
        f("cell.b_c", s.b_c);
        f("head.w", s.head_w);
        f("head.b", s.head_b);
    }
};

template <class T>
struct BlockWeights {
    T wq, wk, wv;  // d_model x d_attn
    T wo;          // d_attn x d_model
    T ln1_gain, ln1_offset;
    T mlp_w1, mlp_b1;  // d_model x mlp_hidden, 1 x mlp_hidden
    T mlp_w2, mlp_b2;  // mlp_hidden x d_model, 1 x d_model
    T ln2_gain, ln2_offset;
};

template <class T>
struct TransformerWeights {
    T embed_w;    // F x d_model
    T embed_b;    // 1 x d_model
    T pos_table;  // window x d_model
    std::vector<BlockWeights<T>> blocks;
    T head_w;  // d_model x 1
    T head_b;  // 1 x 1

    template <class Self, class F>
    static void visit(Self& s, F&& f) {
        f("embed.w", s.embed_w);
        f("embed.b", s.embed_b);
        f("embed.pos_table", s.pos_table);
        for (std::size_t b = 0; b < s.blocks.size(); ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            auto& blk = s.blocks[b];
            f(p + "wq", blk.wq);
            f(p + "wk", blk.wk);
            f(p + "wv", blk.wv);
            f(p + "wo", blk.wo);
            f(p + "ln1_gain", blk.ln1_gain);
            f(p + "ln1_offset", blk.ln1_offset);
            f(p + "mlp_w1", blk.mlp_w1);
            f(p + "mlp_b1", blk.mlp_b1);
            f(p + "mlp_w2", blk.mlp_w2);
            f(p + "mlp_b2", blk.mlp_b2);
            f(p + "ln2_gain", blk.ln2_gain);
            f(p + "ln2_offset", blk.ln2_offset);
        }
        f("head.w", s.head_w);
        f("head.b", s.head_b);
    }
};

using RnnParams = RnnWeights<Matrix>;
using LstmParams = LstmWeights<Matrix>;
using TransformerParams = TransformerWeights<Matrix>;

/// Visit (name, tensor) pairs in a fixed order.
template <class W, class F>
void for_each_tensor(W& w, F&& f) {
    std::remove_const_t<W>::visit(w, f);
}

/// Group of a tensor name is the text before the first '.'.
inline std::string tensor_group(const std::string& name) { return name.substr(0, name.find('.')); }

/// Trainable weights of one architecture plus the dims they were built for.
struct ModelParams {
    ModelDims dims;
    std::variant<RnnParams, LstmParams, TransformerParams> weights;

    Architecture arch() const { return dims.arch; }

    template <class F>
    void for_each(F&& f) {
        std::visit([&](auto& w) { for_each_tensor(w, f); }, weights);
    }
    template <class F>
    void for_each(F&& f) const {
        std::visit([&](const auto& w) { for_each_tensor(w, f); }, weights);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
        return n;
    }

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        if (!(a.dims == b.dims)) return false;
        std::vector<const Matrix*> ta, tb;
        a.for_each([&](const std::string&, const Matrix& m) { ta.push_back(&m); });
        b.for_each([&](const std::string&, const Matrix& m) { tb.push_back(&m); });
        if (ta.size() != tb.size()) return false;
        for (std::size_t i = 0; i < ta.size(); ++i)
            if (!(*ta[i] == *tb[i])) return false;
        return true;
    }
};

/// Zero-filled weights with the shapes `dims` prescribes (LayerNorm gains are 1).
inline ModelParams zero_params(const ModelDims& dims) {
    validate(dims);
    ModelParams p{dims, RnnParams{}};
    const std::size_t F = dims.features;
    switch (dims.arch) {
        case Architecture::rnn: {
            const std::size_t H = dims.hidden;
            p.weights = RnnParams{Matrix(H, F), Matrix(H, H), Matrix(H, 1), Matrix(1, H), Matrix(1, 1)};
            break;
        }
        case Architecture::lstm: {
            const std::size_t H = dims.hidden;
            const Matrix g(H, H + F), b(H, 1);
            p.weights = LstmParams{g, g, g, g, b, b, b, b, Matrix(1, H), Matrix(1, 1)};
            break;
        }
        case Architecture::transformer: {
            const std::size_t D = dims.d_model, A = dims.d_attn, M = dims.mlp_hidden;
            TransformerParams t{Matrix(F, D), Matrix(1, D), Matrix(dims.window, D), {}, Matrix(D, 1), Matrix(1, 1)};
            for (std::size_t b = 0; b < dims.blocks; ++b)
                t.blocks.push_back({Matrix(D, A), Matrix(D, A), Matrix(D, A), Matrix(A, D), Matrix(1, D, 1.0),
                                    Matrix(1, D), Matrix(D, M), Matrix(1, M), Matrix(M, D), Matrix(1, D),
                                    Matrix(1, D, 1.0), Matrix(1, D)});
            p.weights = std::move(t);
            break;
        }
    }
    return p;
}

inline bool is_bias_like(const std::string& name) {
    const auto leaf = name.substr(name.find('.') + 1);
    return leaf.rfind("b", 0) == 0 || leaf.find("_b") != std::string::npos ||
           leaf.find("gain") != std::string::npos || leaf.find("offset") != std::string::npos;
}

/// Glorot-uniform weights in +-sqrt(6/(rows+cols)); biases and LayerNorm
/// offsets zero, LayerNorm gains one, LSTM forget-gate bias one.
inline ModelParams init_params(const ModelDims& dims, Rng& rng) {
    ModelParams p = zero_params(dims);
    p.for_each([&](const std::string& name, Matrix& m) {
        if (is_bias_like(name)) return;
        const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (double& v : m.values()) v = rng.uniform(-limit, limit);
    });
    if (auto* l = std::get_if<LstmParams>(&p.weights))
        for (double& v : l->b_f.values()) v = 1.0;
    return p;
}

/// x_t as a column vector: row k of the window, transposed.
inline Matrix step_input(const Matrix& window, std::size_t k) { return transpose(slice_row(window, k)); }

inline Var transpose(Var a) {
    Tape& t = *a.tape;
    Matrix v = transpose(t.value(a));
    return t.push(std::move(v), [a = a.id](Tape& t, std::size_t self) { t.accumulate(a, transpose(t.grad_of(self))); });
}

inline Var step_input(Var window, std::size_t k) { return transpose(slice_row(window, k)); }

/// h_t = tanh(U x_t + W h_{t-1} + b_h), o_t = V h_t + b_o.
template <class T>
std::pair<T, T> rnn_step(const T& x, const T& h_prev, const RnnWeights<T>& p) {
    T h = activate(Activation::tanh, add(add(matmul(p.U, x), matmul(p.W, h_prev)), p.b_h));
    T o = add(matmul(p.V, h), p.b_o);
    return {h, o};
}

template <class T>
struct LstmState {
    T h;
    T c;
};

template <class T>
struct LstmGates {
    T i, f, o, candidate;
};

/// Gates over [h_{t-1}; x_t]; c_t = f*c_{t-1} + i*tanh(candidate), h_t = o*tanh(c_t).
template <class T>
LstmState<T> lstm_step(const T& x, const LstmState<T>& s, const LstmWeights<T>& p, LstmGates<T>* gates = nullptr) {
    const T z = concat_rows(s.h, x);
    T i = activate(Activation::sigmoid, add(matmul(p.w_i, z), p.b_i));
    T f = activate(Activation::sigmoid, add(matmul(p.w_f, z), p.b_f));
    T o = activate(Activation::sigmoid, add(matmul(p.w_o, z), p.b_o));
    T g = activate(Activation::tanh, add(matmul(p.w_c, z), p.b_c));
    T c = add(hadamard(f, s.c), hadamard(i, g));
    T h = hadamard(o, activate(Activation::tanh, c));
    if (gates) *gates = {i, f, o, g};
    return {h, c};
}

template <class T>
struct AttentionInputs {
    T Q;  // n_q x d
    T K;  // n_k x d
    T V;  // n_k x d_v
};

template <class T>
struct AttentionResult {
    T context;  // n_q x d_v
    T weights;  // n_q x n_k, rows sum to one
};

inline void check_attention_shapes(const Matrix& Q, const Matrix& K, const Matrix& V) {
    if (Q.cols() != K.cols() || K.rows() != V.rows())
        throw DimensionError("attention: Q " + Q.shape_string() + ", K " + K.shape_string() + ", V " +
                             V.shape_string());
}

/// Score every query row against every key row, softmax each row, weight the values.
template <class T>
AttentionResult<T> attention(const AttentionInputs<T>& in, AttentionKernel kernel) {
    if constexpr (std::is_same_v<T, Matrix>) check_attention_shapes(in.Q, in.K, in.V);
    T w = softmax_rows(attention_scores(in.Q, in.K, kernel));
    return {matmul(w, in.V), w};
}

/// Scalar prediction from a window x F input.
template <class T>
T rnn_forward(const T& window, const RnnWeights<T>& p, std::size_t steps, const T& h0) {
    T h = h0;
    T o{};
    for (std::size_t k = 0; k < steps; ++k) std::tie(h, o) = rnn_step(step_input(window, k), h, p);
    return o;
}

template <class T>
T lstm_forward(const T& window, const LstmWeights<T>& p, std::size_t steps, const LstmState<T>& s0) {
    LstmState<T> s = s0;
    for (std::size_t k = 0; k < steps; ++k) s = lstm_step(step_input(window, k), s, p);
    return add(matmul(p.head_w, s.h), p.head_b);
}

template <class T>
T transformer_forward(const T& window, const TransformerWeights<T>& p, const ModelDims& dims) {
    T h = add(add_row_broadcast(matmul(window, p.embed_w), p.embed_b), p.pos_table);
    for (const auto& b : p.blocks) {
        const AttentionInputs<T> in{matmul(h, b.wq), matmul(h, b.wk), matmul(h, b.wv)};
        const T attended = matmul(attention(in, dims.kernel).context, b.wo);
        T h1 = dims.residual ? add(h, attended) : attended;
        if (dims.layer_norm) h1 = layer_norm_rows(h1, b.ln1_gain, b.ln1_offset);
        const T hidden = activate(Activation::relu, add_row_broadcast(matmul(h1, b.mlp_w1), b.mlp_b1));
        const T mlp = add_row_broadcast(matmul(hidden, b.mlp_w2), b.mlp_b2);
        h = dims.residual ? add(h1, mlp) : mlp;
        if (dims.layer_norm) h = layer_norm_rows(h, b.ln2_gain, b.ln2_offset);
    }
    return add(matmul(slice_row(h, dims.window - 1), p.head_w), p.head_b);
}

inline void check_window(const ModelDims& dims, const Matrix& window) {
    if (window.rows() != dims.window || window.cols() != dims.features)
        throw DimensionError("model expects a " + std::to_string(dims.window) + "x" +
                             std::to_string(dims.features) + " window, got " + window.shape_string());
}

/// Tensors of `p` re-expressed as tape leaves (same structure, same order).
template <template <class> class W>
W<Var> bind(Tape& tape, const W<Matrix>& p, std::vector<std::pair<std::string, Var>>* leaves = nullptr) {
    W<Var> out{};
    if constexpr (std::is_same_v<W<Matrix>, TransformerParams>) out.blocks.resize(p.blocks.size());
    std::vector<Var*> slots;
    for_each_tensor(out, [&](const std::string&, Var& v) { slots.push_back(&v); });
    std::size_t i = 0;
    for_each_tensor(p, [&](const std::string& name, const Matrix& m) {
        *slots[i] = tape.leaf(m);
        if (leaves) leaves->emplace_back(name, *slots[i]);
        ++i;
    });
    return out;
}

/// One-step-ahead prediction for a single window.
inline double predict(const ModelParams& params, const Matrix& window) {
    const ModelDims& d = params.dims;
    check_window(d, window);
    return std::visit(
        [&](const auto& w) -> double {
            using W = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<W, RnnParams>)
                return rnn_forward(window, w, d.window, Matrix(d.hidden, 1))[0];
            else if constexpr (std::is_same_v<W, LstmParams>)
                return lstm_forward(window, w, d.window, LstmState<Matrix>{Matrix(d.hidden, 1), Matrix(d.hidden, 1)})[0];
            else
                return transformer_forward(window, w, d)[0];
        },
        params.weights);
}

/// Records the forward pass for `window` onto `tape` using already-bound weights.
template <class BoundWeights>
Var record_forward(Tape& tape, const ModelDims& d, const BoundWeights& w, const Matrix& window) {
    check_window(d, window);
    const Var x = tape.leaf(window);
    if constexpr (std::is_same_v<BoundWeights, RnnWeights<Var>>)
        return rnn_forward(x, w, d.window, tape.leaf(Matrix(d.hidden, 1)));
    else if constexpr (std::is_same_v<BoundWeights, LstmWeights<Var>>)
        return lstm_forward(x, w, d.window,
                            LstmState<Var>{tape.leaf(Matrix(d.hidden, 1)), tape.leaf(Matrix(d.hidden, 1))});
    else
        return transformer_forward(x, w, d);
}

/// Teacher-forced: each window is predicted independently from its own inputs.
template <class Sample>
std::vector<double> forecast_sequence(const ModelParams& params, const std::vector<Sample>& windows) {
    std::vector<double> out;
    out.reserve(windows.size());
    for (const auto& s : windows) out.push_back(predict(params, s.inputs));
    return out;
}

inline std::vector<double> forecast_sequence(const ModelParams& params, const std::vector<Matrix>& windows) {
    std::vector<double> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(predict(params, w));
    return out;
}

}  // namespace loadtl
