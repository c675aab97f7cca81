#pragma once

#include "adaspan/span.hpp"

namespace adaspan {

// Multi-head self-attention over the past with relative position embeddings
// and per-head span masking.
//
// Banded layout: a block of n queries attends through an [n, w] band where
// slot j of row t means distance d = j+1, i.e. context row r = n_cache+t-1-j
// of H = [cache; block]. w is the head's effective span, so everything the
// mask could make nonzero lies inside the band and the compute cost scales
// with the learned span instead of the span limit.

// s[t,j] = q_t . k_{r}, the content half of the similarity.
template <typename T>
Tensor<T> band_scores(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, int64_t n_cache, int64_t w) {
    detail::check_2d(q.shape(), "band_scores");
    detail::check_2d(k.shape(), "band_scores");
    const int64_t n = q.dim(0), dk = q.dim(1), ctx = k.dim(0);
    if (k.dim(1) != dk) throw std::invalid_argument("band_scores: q/k width mismatch");
    if (ctx != n_cache + n) throw std::invalid_argument("band_scores: context rows must equal cache + block");
    const bool rec = tape.active() && (q.requires_grad() || k.requires_grad());
    Tensor<T> out({n, w}, rec);
    const T* qd = q.data();
    const T* kd = k.data();
    T* od = out.data();
#pragma omp parallel for schedule(static) if (n * w * dk > (1 << 16))
    for (int64_t t = 0; t < n; ++t) {
        const int64_t valid = std::min(w, n_cache + t);
        const T* qrow = qd + t * dk;
        T* orow = od + t * w;
        for (int64_t j = 0; j < valid; ++j) orow[j] = detail::dot8(qrow, kd + (n_cache + t - 1 - j) * dk, dk);
        for (int64_t j = valid; j < w; ++j) orow[j] = T(0);
    }
    if (rec) {
        tape.record(out, [q = q, k = k, out, n, w, dk, n_cache]() mutable {
            const T* og = out.grad();
            const T* qd2 = q.data();
            const T* kd2 = k.data();
            for (int64_t t = 0; t < n; ++t) {
                const int64_t valid = std::min(w, n_cache + t);
                const T* grow = og + t * w;
                for (int64_t j = 0; j < valid; ++j) {
                    const T g = grow[j];
                    if (g == T(0)) continue;
                    const int64_t r = n_cache + t - 1 - j;
                    if (q.requires_grad()) {
                        T* qg = q.grad() + t * dk;
                        const T* krow = kd2 + r * dk;
                        for (int64_t c = 0; c < dk; ++c) qg[c] += g * krow[c];
                    }
                    if (k.requires_grad()) {
                        T* kg = k.grad() + r * dk;
                        const T* qrow = qd2 + t * dk;
                        for (int64_t c = 0; c < dk; ++c) kg[c] += g * qrow[c];
                    }
                }
            }
        });
    }
    return out;
}

// y_t = sum_j weights[t,j] * v_{r}, the banded weighted average.
template <typename T>
Tensor<T> band_mix(Tape<T>& tape, const Tensor<T>& weights, const Tensor<T>& v, int64_t n_cache) {
    detail::check_2d(weights.shape(), "band_mix");
    detail::check_2d(v.shape(), "band_mix");
    const int64_t n = weights.dim(0), w = weights.dim(1), dk = v.dim(1), ctx = v.dim(0);
    if (ctx != n_cache + n) throw std::invalid_argument("band_mix: context rows must equal cache + block");
    const bool rec = tape.active() && (weights.requires_grad() || v.requires_grad());
    Tensor<T> out({n, dk}, rec);
    const T* wd = weights.data();
    const T* vd = v.data();
    T* od = out.data();
#pragma omp parallel for schedule(static) if (n * w * dk > (1 << 16))
    for (int64_t t = 0; t < n; ++t) {
        const int64_t valid = std::min(w, n_cache + t);
        const T* wrow = wd + t * w;
        T* orow = od + t * dk;
        std::fill(orow, orow + dk, T(0));
        for (int64_t j = 0; j < valid; ++j) {
            const T a = wrow[j];
            if (a == T(0)) continue;
            const T* vrow = vd + (n_cache + t - 1 - j) * dk;
            for (int64_t c = 0; c < dk; ++c) orow[c] += a * vrow[c];
        }
    }
    if (rec) {
        tape.record(out, [weights = weights, v = v, out, n, w, dk, n_cache]() mutable {
            const T* og = out.grad();
            const T* wd2 = weights.data();
            const T* vd2 = v.data();
            for (int64_t t = 0; t < n; ++t) {
                const int64_t valid = std::min(w, n_cache + t);
                const T* grow = og + t * dk;
                for (int64_t j = 0; j < valid; ++j) {
                    const int64_t r = n_cache + t - 1 - j;
                    if (weights.requires_grad())
                        weights.grad()[t * w + j] += detail::dot8(grow, vd2 + r * dk, dk);
                    if (v.requires_grad()) {
                        const T a = wd2[t * w + j];
                        if (a == T(0)) continue;
                        T* vg = v.grad() + r * dk;
                        for (int64_t c = 0; c < dk; ++c) vg[c] += a * grow[c];
                    }
                }
            }
        });
    }
    return out;
}

// Similarities of a block of queries against the banded past:
// s[t,j] = q_t . (k_r + p_{d}) with d = j+1, realized as the content band
// plus q P^T against the first w rows of the shared position table.
template <typename T>
Tensor<T> similarity_scores(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& pos_table,
                            int64_t n_cache, int64_t w) {
    if (w > pos_table.dim(0))
        throw std::invalid_argument("similarity_scores: queried distance exceeds the span limit");
    auto content = band_scores(tape, q, k, n_cache, w);
    auto pos_sub = slice_rows(tape, pos_table, 0, w);
    auto pos = matmul_nt(tape, q, pos_sub);
    return add(tape, content, pos);
}

template <typename T>
struct AttentionHead {
    Tensor<T> wq, wk, wv;  // [d_h, d_k]
    SpanParam<T> span;
};

// Gradient-detached hidden states of up to the layer's max effective span
// previous tokens.
template <typename T>
struct AttentionLayerState {
    Tensor<T> cache;  // [c, d_h] or undefined when empty
    int64_t rows() const { return cache.defined() ? cache.dim(0) : 0; }
    void reset() { cache = Tensor<T>(); }
};

template <typename T>
struct AttentionOutput {
    Tensor<T> y;                          // [n, d_h]
    std::vector<Tensor<T>> span_terms;    // per head: z scalar or z_t trace, for the penalty
    std::vector<double> head_spans;       // per head mean z (data values)
    std::vector<std::vector<T>> z_trace;  // dynamic only: per head z_t over the block
    int max_effective_span = 0;
};

// One attention sublayer: pre-norm, M heads over a shared position table,
// concat + output projection. The residual add is the caller's.
template <typename T>
class AttentionLayer {
public:
    AttentionLayer() = default;

    AttentionLayer(const ModelConfig& cfg, Rng& rng) : d_h_(cfg.d_h), d_k_(cfg.d_k()), mask_cfg_(MaskConfig::from_model(cfg)) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_h));
        ln_gamma_ = Tensor<T>::full({cfg.d_h}, T(1), true);
        ln_beta_ = Tensor<T>({cfg.d_h}, true);
        heads_.resize(static_cast<size_t>(cfg.heads));
        for (auto& h : heads_) {
            h.wq = Tensor<T>({cfg.d_h, cfg.d_k()}, true);
            h.wk = Tensor<T>({cfg.d_h, cfg.d_k()}, true);
            h.wv = Tensor<T>({cfg.d_h, cfg.d_k()}, true);
            fill_uniform(h.wq, -bound, bound, rng);
            fill_uniform(h.wk, -bound, bound, rng);
            fill_uniform(h.wv, -bound, bound, rng);
            switch (cfg.span_kind) {
                case SpanKind::Fixed: h.span = SpanParam<T>::fixed(); break;
                case SpanKind::Adaptive: h.span = SpanParam<T>::adaptive(); break;
                case SpanKind::Dynamic: h.span = SpanParam<T>::dynamic(cfg.d_h); break;
            }
        }
        wo_ = Tensor<T>({cfg.d_h, cfg.d_h}, true);
        fill_uniform(wo_, -bound, bound, rng);
    }

    // x: [n, d_h] raw residual-stream input. Updates state.cache (unless
    // update_cache is false) with the trailing context the next block needs.
    // forced_window, when nonzero, overrides every head's band width (test
    // hook for truncation experiments).
    AttentionOutput<T> forward(Tape<T>& tape, const Tensor<T>& x, AttentionLayerState<T>& state,
                               const Tensor<T>& pos_table, Rng& rng, bool train, double dropout_p,
                               int forced_window = 0, bool update_cache = true) {
        const int64_t n = x.dim(0);
        const int64_t c = state.rows();
        const int S = mask_cfg_.span_limit;

        auto h_all = state.cache.defined() ? concat_rows(tape, state.cache, x) : x;
        auto hn_all = layer_norm(tape, h_all, ln_gamma_, ln_beta_, T(1e-5));
        auto xn = c > 0 ? slice_rows(tape, hn_all, c, n) : hn_all;

        AttentionOutput<T> out;
        std::vector<Tensor<T>> parts;
        parts.reserve(heads_.size());
        int layer_eff = 0;

        for (auto& head : heads_) {
            // span state of this head for this block
            Tensor<T> z_scalar, z_vec;
            int eff = S;
            double mean_z = static_cast<double>(S);
            if (head.span.kind == SpanKind::Adaptive) {
                const double zv = static_cast<double>(head.span.z_prime.vec()[0]) * S;
                eff = effective_span(zv, mask_cfg_);
                mean_z = zv;
                z_scalar = scale(tape, head.span.z_prime, T(S));
                out.span_terms.push_back(z_scalar);
            } else if (head.span.kind == SpanKind::Dynamic) {
                z_vec = dynamic_span(tape, xn, head.span.v, head.span.b, S);
                eff = 0;
                double zsum = 0.0;
                for (int64_t t = 0; t < n; ++t) {
                    const double zt = static_cast<double>(z_vec.vec()[static_cast<size_t>(t)]);
                    eff = std::max(eff, effective_span(zt, mask_cfg_));
                    zsum += zt;
                }
                mean_z = zsum / static_cast<double>(n);
                out.span_terms.push_back(z_vec);
                out.z_trace.emplace_back(z_vec.vec());
            }
            layer_eff = std::max(layer_eff, eff);
            out.head_spans.push_back(mean_z);

            int64_t w = forced_window > 0 ? forced_window : eff;
            w = std::min<int64_t>(w, c + n - 1);  // slots beyond history are never valid
            if (w <= 0) {
                parts.push_back(Tensor<T>({n, d_k_}));
                continue;
            }

            auto q = matmul(tape, xn, head.wq);
            auto k = matmul(tape, hn_all, head.wk);
            auto v = matmul(tape, hn_all, head.wv);
            auto scores = similarity_scores(tape, q, k, pos_table, c, w);

            Tensor<T> mask;
            if (head.span.kind == SpanKind::Fixed) mask = fixed_mask_band<T>(n, w, c);
            else if (head.span.kind == SpanKind::Adaptive) mask = span_mask_band(tape, z_scalar, n, w, c, mask_cfg_);
            else mask = span_mask_band_dynamic(tape, z_vec, n, w, c, mask_cfg_);

            auto weights = masked_softmax(tape, scores, mask);
            weights = dropout(tape, weights, dropout_p, rng, train);
            parts.push_back(band_mix(tape, weights, v, c));
        }

        out.max_effective_span = layer_eff;
        out.y = matmul(tape, concat_cols(tape, parts), wo_);

        if (update_cache) {
            const int64_t keep = std::min<int64_t>(layer_eff, c + n);
            if (keep > 0) {
                Tensor<T> fresh({keep, d_h_});
                T* dst = fresh.data();
                const int64_t from_block = std::min<int64_t>(keep, n);
                const int64_t from_cache = keep - from_block;
                if (from_cache > 0)
                    std::memcpy(dst, state.cache.data() + (c - from_cache) * d_h_,
                                static_cast<size_t>(from_cache * d_h_) * sizeof(T));
                std::memcpy(dst + from_cache * d_h_, x.data() + (n - from_block) * d_h_,
                            static_cast<size_t>(from_block * d_h_) * sizeof(T));
                state.cache = fresh;
            } else {
                state.reset();
            }
        }
        return out;
    }

    std::vector<AttentionHead<T>>& heads() { return heads_; }
    const std::vector<AttentionHead<T>>& heads() const { return heads_; }
    Tensor<T>& wo() { return wo_; }
    Tensor<T>& ln_gamma() { return ln_gamma_; }
    Tensor<T>& ln_beta() { return ln_beta_; }
    const MaskConfig& mask_config() const { return mask_cfg_; }
    int d_k() const { return d_k_; }

private:
    int d_h_ = 0;
    int d_k_ = 0;
    MaskConfig mask_cfg_;
    std::vector<AttentionHead<T>> heads_;
    Tensor<T> wo_, ln_gamma_, ln_beta_;
};

// Spec-level head output: y_t = sum_r a_tr (W_v x_r) over the band.
template <typename T>
Tensor<T> head_output(Tape<T>& tape, const Tensor<T>& weights, const Tensor<T>& values_raw,
                      const AttentionHead<T>& head, int64_t n_cache) {
    return band_mix(tape, weights, matmul(tape, values_raw, head.wv), n_cache);
}

}  // namespace adaspan
