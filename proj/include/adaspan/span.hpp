#pragma once

#include "adaspan/config.hpp"
#include "adaspan/ops.hpp"
#include "adaspan/tensor.hpp"

namespace adaspan {

// Per-head soft masking of attention by distance. The mask
//
//     m_z(x) = min[max[(R + z - x) / R, 0], 1]
//
// is 1 on the plateau x <= z, falls linearly over a ramp of width R, and is
// exactly 0 from x = z + R on. It is differentiable in the span value z
// (dm/dz = 1/R on the open ramp, 0 on both plateaus), which is what makes
// the span length learnable.

struct MaskConfig {
    int ramp = 32;        // R
    int span_limit = 64;  // S
    double lambda = 2e-6;
    int heads = 2;  // M, heads per layer (normalizes the penalty)

    static MaskConfig from_model(const ModelConfig& m) {
        return MaskConfig{m.ramp, m.span_limit, m.lambda, m.heads};
    }
    static MaskConfig defaults(int span_limit) {
        return MaskConfig{32, span_limit, default_lambda(span_limit), 8};
    }
};

namespace maskmath {

// Raw mask formula; callers guarantee z in [0, S].
template <typename T>
inline T value(T x, T z, T ramp) {
    const T v = (ramp + z - x) / ramp;
    return std::min(T(1), std::max(T(0), v));
}

template <typename T>
inline T dvalue_dz(T x, T z, T ramp) {
    const T v = (ramp + z - x) / ramp;
    return (v > T(0) && v < T(1)) ? T(1) / ramp : T(0);
}

}  // namespace maskmath

inline double soft_mask(double x, double z, const MaskConfig& cfg) {
    if (x < 0.0) throw std::invalid_argument("soft_mask: distance must be >= 0");
    if (z < 0.0 || z > static_cast<double>(cfg.span_limit))
        throw std::invalid_argument("soft_mask: span value " + std::to_string(z) + " outside [0," +
                                    std::to_string(cfg.span_limit) + "] (missing clamp upstream?)");
    return maskmath::value(x, z, static_cast<double>(cfg.ramp));
}

inline double soft_mask_dz(double x, double z, const MaskConfig& cfg) {
    if (z < 0.0 || z > static_cast<double>(cfg.span_limit))
        throw std::invalid_argument("soft_mask: span value outside [0,S]");
    return maskmath::dvalue_dz(x, z, static_cast<double>(cfg.ramp));
}

// Smallest attention window outside which the mask is exactly zero; attention
// truncated to this window equals attention over the full span limit.
inline int effective_span(double z, const MaskConfig& cfg) {
    if (z < 0.0 || z > static_cast<double>(cfg.span_limit))
        throw std::invalid_argument("effective_span: span value outside [0,S]");
    const int64_t w = static_cast<int64_t>(std::ceil(z)) + cfg.ramp;
    return static_cast<int>(std::min<int64_t>(cfg.span_limit, w));
}

// ---------------------------------------------------------------------------
// SpanParam: the learnable state of one head's span
// ---------------------------------------------------------------------------

// Static spans are reparameterized as z = S * z' with z' in [0,1], held in
// range by the optimizer's projection step. Dynamic spans compute
// z_t = S * sigmoid(v^T x_t + b) from the current input.
template <typename T>
struct SpanParam {
    SpanKind kind = SpanKind::Adaptive;
    Tensor<T> z_prime;  // [1],   static spans
    Tensor<T> v;        // [d,1], dynamic spans
    Tensor<T> b;        // [1],   dynamic spans

    static SpanParam fixed() {
        SpanParam p;
        p.kind = SpanKind::Fixed;
        return p;
    }
    static SpanParam adaptive() {
        SpanParam p;
        p.kind = SpanKind::Adaptive;
        p.z_prime = Tensor<T>::scalar(T(0), true);  // z' starts at 0
        return p;
    }
    static SpanParam dynamic(int d_h) {
        SpanParam p;
        p.kind = SpanKind::Dynamic;
        p.v = Tensor<T>({d_h, 1}, true);            // v starts at 0
        p.b = Tensor<T>::scalar(T(-4), true);       // keeps initial spans small
        return p;
    }
};

// z_t = S * sigmoid(v^T x_t + b), one value per row of x. Differentiable in
// v, b and x.
template <typename T>
Tensor<T> dynamic_span(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, const Tensor<T>& b, int span_limit) {
    auto logits = add(tape, matmul(tape, x, v), b);            // [n,1]
    auto z = scale(tape, sigmoid(tape, logits), T(span_limit));  // (0,S)
    return z.reshaped({x.dim(0)});
}

// ---------------------------------------------------------------------------
// masked softmax
// ---------------------------------------------------------------------------

// a_r = m_r exp(s_r - c) / sum_q m_q exp(s_q - c), rows along the last dim.
// Entries with m_r = 0 are skipped outright: they get exactly 0 weight and
// propagate no gradient into their scores. If a row's denominator falls to
// <= eps the weight is spread uniformly over the positions with the largest
// mask value (zero rows stay all-zero), with no gradient through that row.
template <typename T>
Tensor<T> masked_softmax(Tape<T>& tape, const Tensor<T>& scores, const Tensor<T>& mask) {
    if (scores.shape() != mask.shape())
        throw std::invalid_argument("masked_softmax: scores and mask shapes differ " + shape_str(scores.shape()) +
                                    " vs " + shape_str(mask.shape()));
    const int64_t d = scores.dim(scores.rank() - 1);
    const int64_t rows = scores.numel() / d;
    constexpr T kEps = T(1e-8);
    const bool rec = tape.active() && (scores.requires_grad() || mask.requires_grad());
    Tensor<T> out(scores.shape(), rec);
    // rows that hit the uniform fallback are excluded from backward
    auto fallback = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(rows), uint8_t{0});

    const T* sd = scores.data();
    const T* md = mask.data();
    T* od = out.data();
#pragma omp parallel for schedule(static) if (rows * d > (1 << 14))
    for (int64_t r = 0; r < rows; ++r) {
        const T* srow = sd + r * d;
        const T* mrow = md + r * d;
        T* orow = od + r * d;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j < d; ++j)
            if (mrow[j] > T(0)) mx = std::max(mx, srow[j]);
        if (mx == -std::numeric_limits<T>::infinity()) {  // fully masked row
            std::fill(orow, orow + d, T(0));
            (*fallback)[static_cast<size_t>(r)] = 1;
            continue;
        }
        T denom = T(0);
        for (int64_t j = 0; j < d; ++j) {
            if (mrow[j] > T(0)) {
                orow[j] = mrow[j] * std::exp(srow[j] - mx);
                denom += orow[j];
            } else {
                orow[j] = T(0);
            }
        }
        if (denom <= kEps) {
            T mbest = T(0);
            for (int64_t j = 0; j < d; ++j) mbest = std::max(mbest, mrow[j]);
            int64_t count = 0;
            for (int64_t j = 0; j < d; ++j)
                if (mrow[j] == mbest) ++count;
            for (int64_t j = 0; j < d; ++j) orow[j] = (mrow[j] == mbest) ? T(1) / T(count) : T(0);
            (*fallback)[static_cast<size_t>(r)] = 1;
            continue;
        }
        for (int64_t j = 0; j < d; ++j) orow[j] /= denom;
    }

    if (rec) {
        tape.record(out, [scores = scores, mask = mask, out, fallback, rows, d]() mutable {
            const T* og = out.grad();
            const T* od2 = out.data();
            const T* md2 = mask.data();
#pragma omp parallel for schedule(static) if (rows * d > (1 << 14))
            for (int64_t r = 0; r < rows; ++r) {
                if ((*fallback)[static_cast<size_t>(r)]) continue;
                const T* y = od2 + r * d;
                const T* gy = og + r * d;
                const T* mrow = md2 + r * d;
                T dot = T(0);
                for (int64_t j = 0; j < d; ++j) dot += gy[j] * y[j];
                if (scores.requires_grad()) {
                    T* gs = scores.grad() + r * d;
                    for (int64_t j = 0; j < d; ++j) gs[j] += y[j] * (gy[j] - dot);
                }
                if (mask.requires_grad()) {
                    // d a_q / d m_q = a_q / m_q at fixed softmax partition
                    T* gm = mask.grad() + r * d;
                    for (int64_t j = 0; j < d; ++j)
                        if (mrow[j] > T(0)) gm[j] += (y[j] / mrow[j]) * (gy[j] - dot);
                }
            }
        });
    }
    return out;
}

// Spec-level convenience over one span: the attention weights of a single
// query row.
template <typename T>
Tensor<T> masked_attention_weights(Tape<T>& tape, const Tensor<T>& scores, const Tensor<T>& mask_values) {
    return masked_softmax(tape, scores, mask_values);
}

// ---------------------------------------------------------------------------
// banded mask construction
// ---------------------------------------------------------------------------

// Mask matrix for a block of n queries over a band of width w, where band
// slot j means distance j+1 and query t sits at global context row
// n_cache + t. Slots reaching before the sequence start are hard zeros.
// Static variant: one learnable z for all rows; gradient flows into z via
// the ramp cells.
template <typename T>
Tensor<T> span_mask_band(Tape<T>& tape, const Tensor<T>& z, int64_t n, int64_t w, int64_t n_cache,
                         const MaskConfig& cfg) {
    if (z.numel() != 1) throw std::invalid_argument("span_mask_band: z must be scalar");
    const T zv = z.vec()[0];
    if (zv < T(0) || zv > T(cfg.span_limit))
        throw std::invalid_argument("span_mask_band: span value outside [0,S] (missing clamp upstream?)");
    const T ramp = T(cfg.ramp);
    const bool rec = tape.active() && z.requires_grad();
    Tensor<T> out({n, w}, rec);
    T* od = out.data();
    for (int64_t t = 0; t < n; ++t) {
        const int64_t valid = std::min(w, n_cache + t);  // slots with r >= 0
        T* row = od + t * w;
        for (int64_t j = 0; j < valid; ++j) row[j] = maskmath::value(T(j + 1), zv, ramp);
        for (int64_t j = valid; j < w; ++j) row[j] = T(0);
    }
    if (rec) {
        tape.record(out, [z = z, out, n, w, n_cache, zv, ramp]() mutable {
            const T* og = out.grad();
            T acc = T(0);
            for (int64_t t = 0; t < n; ++t) {
                const int64_t valid = std::min(w, n_cache + t);
                const T* grow = og + t * w;
                for (int64_t j = 0; j < valid; ++j) acc += grow[j] * maskmath::dvalue_dz(T(j + 1), zv, ramp);
            }
            z.grad()[0] += acc;
        });
    }
    return out;
}

// Dynamic variant: z is a vector with one span per query row.
template <typename T>
Tensor<T> span_mask_band_dynamic(Tape<T>& tape, const Tensor<T>& z, int64_t n, int64_t w, int64_t n_cache,
                                 const MaskConfig& cfg) {
    if (z.numel() != n) throw std::invalid_argument("span_mask_band_dynamic: need one span per row");
    const T ramp = T(cfg.ramp);
    const bool rec = tape.active() && z.requires_grad();
    Tensor<T> out({n, w}, rec);
    T* od = out.data();
    const T* zd = z.data();
    for (int64_t t = 0; t < n; ++t) {
        const int64_t valid = std::min(w, n_cache + t);
        T* row = od + t * w;
        for (int64_t j = 0; j < valid; ++j) row[j] = maskmath::value(T(j + 1), zd[t], ramp);
        for (int64_t j = valid; j < w; ++j) row[j] = T(0);
    }
    if (rec) {
        tape.record(out, [z = z, out, n, w, n_cache, ramp]() mutable {
            const T* og = out.grad();
            const T* zd2 = z.data();
            T* zg = z.grad();
            for (int64_t t = 0; t < n; ++t) {
                const int64_t valid = std::min(w, n_cache + t);
                const T* grow = og + t * w;
                T acc = T(0);
                for (int64_t j = 0; j < valid; ++j) acc += grow[j] * maskmath::dvalue_dz(T(j + 1), zd2[t], ramp);
                zg[t] += acc;
            }
        });
    }
    return out;
}

// Plain causal validity mask for fixed-span heads: 1 on every attendable
// slot, 0 before the sequence start. Carries no gradient.
template <typename T>
Tensor<T> fixed_mask_band(int64_t n, int64_t w, int64_t n_cache) {
    Tensor<T> out({n, w});
    T* od = out.data();
    for (int64_t t = 0; t < n; ++t) {
        const int64_t valid = std::min(w, n_cache + t);
        T* row = od + t * w;
        for (int64_t j = 0; j < valid; ++j) row[j] = T(1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// span penalty
// ---------------------------------------------------------------------------

// L1 pressure on spans: (lambda / M) * sum_i z_i over every head of the
// model. For static heads z_i = S * z'_i, so d/dz'_i is exactly lambda*S/M;
// dynamic heads contribute the time-mean of z_t over the block.
template <typename T>
Tensor<T> span_penalty(Tape<T>& tape, const std::vector<Tensor<T>>& span_values, const MaskConfig& cfg) {
    if (span_values.empty()) return Tensor<T>::scalar(T(0));
    Tensor<T> total;
    for (const auto& zt : span_values) {
        Tensor<T> z = zt.numel() == 1 ? zt : mean(tape, zt);
        total = total.defined() ? add(tape, total, z) : z;
    }
    return scale(tape, total, T(cfg.lambda / cfg.heads));
}

}  // namespace adaspan
