#pragma once

// Minimal reverse-mode differentiation over Matrix values.
//
// A Tape records every operation applied to Var handles. Values are computed
// with the same eager kernels the inference path uses; backward() walks the
// tape in reverse and accumulates gradients into each node.

#include <functional>
#include <utility>
#include <vector>

#include "loadtl/kernels.hpp"

namespace loadtl {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Var leaf(Matrix value) { return push(std::move(value), {}); }

    Var push(Matrix value, BackwardFn backward) {
        nodes_.push_back({std::move(value), Matrix{}, std::move(backward)});
        return Var{this, nodes_.size() - 1};
    }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }

    /// Gradient of the last backward() root w.r.t. v (zeros when v did not contribute).
    Matrix grad(Var v) const {
        const Node& n = nodes_[v.id];
        return n.grad.empty() && !n.value.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
    }

    void accumulate(std::size_t id, const Matrix& g) {
        Node& n = nodes_[id];
        if (n.grad.empty()) {
            n.grad = g;
            return;
        }
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    /// Seeds d(root)/d(root) = 1; root must be 1x1.
    void backward(Var root) {
        if (value(root).rows() != 1 || value(root).cols() != 1)
            throw DimensionError("backward: root must be 1x1, got " + value(root).shape_string());
        for (auto& n : nodes_) n.grad = Matrix{};
        nodes_[root.id].grad = Matrix(1, 1, 1.0);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            if (nodes_[i].grad.empty() || !nodes_[i].backward) continue;
            nodes_[i].backward(*this, i);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    Matrix v = matmul(t.value(a), t.value(b));
    return t.push(std::move(v), [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        Matrix ga = matmul(g, transpose(t.value(b)));
        Matrix gb = matmul(transpose(t.value(a)), g);
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    Matrix v = t.value(a) + t.value(b);
    return t.push(std::move(v), [a = a.id, b = b.id](Tape& t, std::size_t self) {
        Matrix g = t.grad_of(self);
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

inline Var add_row_broadcast(Var a, Var bias) {
    Tape& t = *a.tape;
    Matrix v = add_row_broadcast(t.value(a), t.value(bias));
    return t.push(std::move(v), [a = a.id, b = bias.id](Tape& t, std::size_t self) {
        Matrix g = t.grad_of(self);
        Matrix gb(1, g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
        t.accumulate(a, g);
        t.accumulate(b, gb);
    });
}

inline Var hadamard(Var a, Var b) {
    Tape& t = *a.tape;
    Matrix v = hadamard(t.value(a), t.value(b));
    return t.push(std::move(v), [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        Matrix ga = hadamard(g, t.value(b));
        Matrix gb = hadamard(g, t.value(a));
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

inline Var activate(Activation kind, Var x) {
    Tape& t = *x.tape;
    Matrix v = activate(kind, t.value(x));
    return t.push(std::move(v), [kind, x = x.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& y = t.value(self);
        const Matrix& in = t.value(x);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
            switch (kind) {
                case Activation::sigmoid: gx[i] = g[i] * y[i] * (1.0 - y[i]); break;
                case Activation::tanh: gx[i] = g[i] * (1.0 - y[i] * y[i]); break;
                case Activation::relu: gx[i] = in[i] > 0 ? g[i] : 0.0; break;
            }
        }
        t.accumulate(x, gx);
    });
}

inline Var concat_rows(Var a, Var b) {
    Tape& t = *a.tape;
    Matrix v = concat_rows(t.value(a), t.value(b));
    return t.push(std::move(v), [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& va = t.value(a);
        const Matrix& vb = t.value(b);
        Matrix ga(va.rows(), va.cols());
        Matrix gb(vb.rows(), vb.cols());
        std::copy(g.values().begin(), g.values().begin() + va.size(), ga.values().begin());
        std::copy(g.values().begin() + va.size(), g.values().end(), gb.values().begin());
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

inline Var slice_row(Var a, std::size_t r) {
    Tape& t = *a.tape;
    Matrix v = slice_row(t.value(a), r);
    return t.push(std::move(v), [a = a.id, r](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& va = t.value(a);
        Matrix ga(va.rows(), va.cols());
        std::copy(g.values().begin(), g.values().end(), ga.row_span(r).begin());
        t.accumulate(a, ga);
    });
}

inline Var softmax_rows(Var x) {
    Tape& t = *x.tape;
    Matrix v = softmax_rows(t.value(x));
    return t.push(std::move(v), [x = x.id](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& s = t.value(self);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            const double inner = dot(g.row_span(r), s.row_span(r));
            for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) = s(r, c) * (g(r, c) - inner);
        }
        t.accumulate(x, gx);
    });
}

inline Var attention_scores(Var q, Var k, AttentionKernel kernel) {
    Tape& t = *q.tape;
    Matrix v = attention_scores(t.value(q), t.value(k), kernel);
    return t.push(std::move(v), [q = q.id, k = k.id, kernel](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& Q = t.value(q);
        const Matrix& K = t.value(k);
        Matrix gq(Q.rows(), Q.cols());
        Matrix gk(K.rows(), K.cols());
        const std::size_t d = Q.cols();
        if (kernel == AttentionKernel::scaled_dot) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(d));
            for (std::size_t i = 0; i < Q.rows(); ++i)
                for (std::size_t j = 0; j < K.rows(); ++j)
                    for (std::size_t c = 0; c < d; ++c) {
                        gq(i, c) += g(i, j) * scale * K(j, c);
                        gk(j, c) += g(i, j) * scale * Q(i, c);
                    }
        } else {
            // d/dq [q.k / (|q||k|)] = k/(|q||k|) - (q.k) q / (|q|^3 |k|), symmetric in k.
            std::vector<double> kn(K.rows());
            for (std::size_t j = 0; j < K.rows(); ++j) kn[j] = row_norm(K.row_span(j));
            for (std::size_t i = 0; i < Q.rows(); ++i) {
                const double qn = row_norm(Q.row_span(i));
                if (qn == 0.0) continue;
                for (std::size_t j = 0; j < K.rows(); ++j) {
                    if (kn[j] == 0.0) continue;
                    const double qk = dot(Q.row_span(i), K.row_span(j));
                    const double denom = qn * kn[j];
                    for (std::size_t c = 0; c < d; ++c) {
                        gq(i, c) += g(i, j) * (K(j, c) / denom - qk * Q(i, c) / (qn * qn * denom));
                        gk(j, c) += g(i, j) * (Q(i, c) / denom - qk * K(j, c) / (kn[j] * kn[j] * denom));
                    }
                }
            }
        }
        t.accumulate(q, gq);
        t.accumulate(k, gk);
    });
}

inline Var layer_norm_rows(Var x, Var gain, Var offset) {
    Tape& t = *x.tape;
    LayerNormCache cache;
    Matrix v = layer_norm_rows(t.value(x), t.value(gain), t.value(offset), &cache);
    return t.push(std::move(v), [x = x.id, gn = gain.id, of = offset.id,
                                 cache = std::move(cache)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& gain = t.value(gn);
        const std::size_t n = g.cols();
        const double inv_n = 1.0 / static_cast<double>(n);
        Matrix gx(g.rows(), n);
        Matrix ggain(1, n);
        Matrix goff(1, n);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                const double dxhat = g(r, c) * gain(0, c);
                mean_d += dxhat;
                mean_dx += dxhat * cache.normalized(r, c);
                ggain(0, c) += g(r, c) * cache.normalized(r, c);
                goff(0, c) += g(r, c);
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t c = 0; c < n; ++c) {
                const double dxhat = g(r, c) * gain(0, c);
                gx(r, c) = cache.inv_sigma[r] * (dxhat - mean_d - cache.normalized(r, c) * mean_dx);
            }
        }
        t.accumulate(x, gx);
        t.accumulate(gn, ggain);
        t.accumulate(of, goff);
    });
}

/// Sum over i of (pred_i - target_i)^2 for a list of 1x1 predictions, scaled by `scale`.
inline Var scaled_squared_error(const std::vector<Var>& preds, const std::vector<double>& targets,
                                double scale) {
    if (preds.empty() || preds.size() != targets.size())
        throw DimensionError("scaled_squared_error: " + std::to_string(preds.size()) +
                             " predictions vs " + std::to_string(targets.size()) + " targets");
    Tape& t = *preds.front().tape;
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = t.value(preds[i])[0] - targets[i];
        sum += r * r;
    }
    std::vector<std::size_t> ids;
    ids.reserve(preds.size());
    for (Var p : preds) ids.push_back(p.id);
    return t.push(Matrix(1, 1, sum * scale),
                  [ids = std::move(ids), targets, scale](Tape& t, std::size_t self) {
                      const double g = t.grad_of(self)[0];
                      for (std::size_t i = 0; i < ids.size(); ++i) {
                          const double r = t.value(ids[i])[0] - targets[i];
                          t.accumulate(ids[i], Matrix(1, 1, 2.0 * scale * r * g));
                      }
                  });
}

}  // namespace loadtl
