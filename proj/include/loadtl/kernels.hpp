#pragma once

// Eager matrix kernels shared by inference and by the autodiff tape.

#include <cmath>
#include <string>

#include "loadtl/numcore.hpp"

namespace loadtl {

inline constexpr double kLayerNormEps = 1e-5;

enum class AttentionKernel { cosine, scaled_dot };

inline std::string to_string(AttentionKernel k) {
    return k == AttentionKernel::cosine ? "cosine" : "scaled_dot";
}

inline AttentionKernel parse_attention_kernel(const std::string& s) {
    if (s == "cosine") return AttentionKernel::cosine;
    if (s == "scaled_dot") return AttentionKernel::scaled_dot;
    throw ValidationError("unknown attention kernel '" + s + "' (expected cosine|scaled_dot)");
}

inline Matrix add(const Matrix& a, const Matrix& b) { return a + b; }

/// Adds a 1xn row to every row of a.
inline Matrix add_row_broadcast(const Matrix& a, const Matrix& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw DimensionError("add_row_broadcast: bias " + bias.shape_string() + " for input " +
                             a.shape_string());
    Matrix out = a;
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) += bias(0, c);
    return out;
}

/// Vertical stack [a; b].
inline Matrix concat_rows(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw DimensionError("concat_rows: " + a.shape_string() + " and " + b.shape_string());
    Matrix out(a.rows() + b.rows(), a.cols());
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(), out.values().begin() + a.size());
    return out;
}

inline Matrix slice_row(const Matrix& a, std::size_t r) {
    if (r >= a.rows())
        throw DimensionError("slice_row: row " + std::to_string(r) + " of " + a.shape_string());
    return Matrix::row(a.row_span(r));
}

inline double row_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// S(i,j) = q_i.k_j / (|q_i| |k_j|); a zero-norm row scores 0 against everything.
inline Matrix cosine_scores(const Matrix& q, const Matrix& k) {
    if (q.cols() != k.cols())
        throw DimensionError("cosine_scores: query " + q.shape_string() + " vs key " +
                             k.shape_string());
    Matrix s(q.rows(), k.rows());
    std::vector<double> kn(k.rows());
    for (std::size_t j = 0; j < k.rows(); ++j) kn[j] = row_norm(k.row_span(j));
    for (std::size_t i = 0; i < q.rows(); ++i) {
        const double qn = row_norm(q.row_span(i));
        for (std::size_t j = 0; j < k.rows(); ++j) {
            if (qn == 0.0 || kn[j] == 0.0) continue;
            s(i, j) = dot(q.row_span(i), k.row_span(j)) / (qn * kn[j]);
        }
    }
    return s;
}

/// S(i,j) = q_i.k_j / sqrt(d).
inline Matrix scaled_dot_scores(const Matrix& q, const Matrix& k) {
    if (q.cols() != k.cols())
        throw DimensionError("scaled_dot_scores: query " + q.shape_string() + " vs key " +
                             k.shape_string());
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Matrix s(q.rows(), k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i)
        for (std::size_t j = 0; j < k.rows(); ++j) s(i, j) = dot(q.row_span(i), k.row_span(j)) * scale;
    return s;
}

inline Matrix attention_scores(const Matrix& q, const Matrix& k, AttentionKernel kernel) {
    return kernel == AttentionKernel::cosine ? cosine_scores(q, k) : scaled_dot_scores(q, k);
}

/// Per-row statistics kept for the backward pass.
struct LayerNormCache {
    Matrix normalized;             // (x - mean) / sigma
    std::vector<double> inv_sigma;  // 1 / sqrt(var + eps) per row
};

inline Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& offset,
                              LayerNormCache* cache = nullptr) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || !gain.same_shape(offset))
        throw DimensionError("layer_norm_rows: gain " + gain.shape_string() + " offset " +
                             offset.shape_string() + " for input " + x.shape_string());
    const std::size_t n = x.cols();
    Matrix xhat(x.rows(), n);
    std::vector<double> inv(x.rows());
    Matrix out(x.rows(), n);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) mean += x(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= static_cast<double>(n);
        inv[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (x(r, c) - mean) * inv[r];
            out(r, c) = gain(0, c) * xhat(r, c) + offset(0, c);
        }
    }
    if (cache) *cache = {std::move(xhat), std::move(inv)};
    return out;
}

}  // namespace loadtl
