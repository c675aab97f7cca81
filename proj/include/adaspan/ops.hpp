#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>

#include "adaspan/tensor.hpp"

namespace adaspan {

namespace detail {

// Serial-per-element GEMM kernels. Each output element is reduced in a fixed
// order that does not depend on thread count or matrix partitioning, so
// results are bitwise reproducible. Row loops are safe to parallelize.

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* A, const T* B, T* C, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k > (1 << 16))
    for (int64_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        const T* arow = A + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T a = arow[p];
            const T* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// Dot product with eight independent accumulators combined in a fixed order;
// vectorizes without float reassociation.
template <typename T>
inline T dot8(const T* a, const T* b, int64_t k) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    int64_t p = 0;
    for (; p + 8 <= k; p += 8)
        for (int l = 0; l < 8; ++l) acc[l] += a[p + l] * b[p + l];
    T tail = T(0);
    for (; p < k; ++p) tail += a[p] * b[p];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
// B is transposed into scratch so the hot loop runs in axpy form; the
// per-element reduction order stays identical to gemm_nn.
template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* A, const T* B, T* C, bool accumulate) {
    if (m == 1) {  // single row: plain dots beat the transpose
        T* crow = C;
        for (int64_t j = 0; j < n; ++j) {
            const T s = dot8(A, B + j * k, k);
            crow[j] = accumulate ? crow[j] + s : s;
        }
        return;
    }
    thread_local std::vector<T> scratch;
    scratch.resize(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j)
        for (int64_t p = 0; p < k; ++p) scratch[static_cast<size_t>(p * n + j)] = B[j * k + p];
    gemm_nn(m, n, k, A, scratch.data(), C, accumulate);
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* A, const T* B, T* C, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k > (1 << 16))
    for (int64_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        for (int64_t p = 0; p < k; ++p) {
            const T a = A[p * m + i];
            const T* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

inline void check_2d(const Shape& s, const char* op) {
    if (s.size() != 2) throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul and friends
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_2d(a.shape(), "matmul");
    detail::check_2d(b.shape(), "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const bool rec = tape.active() && (a.requires_grad() || b.requires_grad());
    Tensor<T> out({m, n}, rec);
    detail::gemm_nn(m, n, k, a.data(), b.data(), out.data(), false);
    if (rec) {
        tape.record(out, [a = a, b = b, out, m, n, k]() mutable {
            if (a.requires_grad()) detail::gemm_nt(m, k, n, out.grad(), b.data(), a.grad(), true);
            if (b.requires_grad()) detail::gemm_tn(k, n, m, a.data(), out.grad(), b.grad(), true);
        });
    }
    return out;
}

// a[m,k] * b[n,k]^T -> [m,n]
template <typename T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_2d(a.shape(), "matmul_nt");
    detail::check_2d(b.shape(), "matmul_nt");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw std::invalid_argument("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + "^T");
    const bool rec = tape.active() && (a.requires_grad() || b.requires_grad());
    Tensor<T> out({m, n}, rec);
    detail::gemm_nt(m, n, k, a.data(), b.data(), out.data(), false);
    if (rec) {
        tape.record(out, [a = a, b = b, out, m, n, k]() mutable {
            if (a.requires_grad()) detail::gemm_nn(m, k, n, out.grad(), b.data(), a.grad(), true);
            if (b.requires_grad()) detail::gemm_tn(n, k, m, out.grad(), a.data(), b.grad(), true);
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(Tape<T>& tape, const Tensor<T>& a) {
    detail::check_2d(a.shape(), "transpose2d");
    const int64_t m = a.dim(0), n = a.dim(1);
    const bool rec = tape.active() && a.requires_grad();
    Tensor<T> out({n, m}, rec);
    const T* ad = a.data();
    T* od = out.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) od[j * m + i] = ad[i * n + j];
    if (rec) {
        tape.record(out, [a = a, out, m, n]() mutable {
            T* ag = a.grad();
            const T* og = out.grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) ag[i * n + j] += og[j * m + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise suite
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { Same, BScalar, AScalar, BRow };

template <typename T>
Bcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (b.numel() == 1) return Bcast::BScalar;
    if (a.numel() == 1) return Bcast::AScalar;
    if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0)) return Bcast::BRow;
    throw std::invalid_argument(std::string(op) + ": shapes not broadcast-compatible " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    using detail::Bcast;
    const Bcast kind = detail::broadcast_kind(a, b, "add");
    if (kind == Bcast::AScalar) return add(tape, b, a);
    const bool rec = tape.active() && (a.requires_grad() || b.requires_grad());
    Tensor<T> out(a.shape(), rec);
    const T* ad = a.data();
    const T* bd = b.data();
    T* od = out.data();
    const int64_t n = a.numel();
    const int64_t d = (kind == Bcast::BRow) ? b.dim(0) : 0;
    switch (kind) {
        case Bcast::Same:
            for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
            break;
        case Bcast::BScalar:
            for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[0];
            break;
        case Bcast::BRow:
            for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i % d];
            break;
        case Bcast::AScalar:
            break;  // handled above
    }
    if (rec) {
        tape.record(out, [a = a, b = b, out, kind, n, d]() mutable {
            const T* og = out.grad();
            if (a.requires_grad()) {
                T* ag = a.grad();
                for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
            }
            if (b.requires_grad()) {
                T* bg = b.grad();
                switch (kind) {
                    case Bcast::Same:
                        for (int64_t i = 0; i < n; ++i) bg[i] += og[i];
                        break;
                    case Bcast::BScalar:
                        for (int64_t i = 0; i < n; ++i) bg[0] += og[i];
                        break;
                    case Bcast::BRow:
                        for (int64_t i = 0; i < n; ++i) bg[i % d] += og[i];
                        break;
                    case Bcast::AScalar:
                        break;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    using detail::Bcast;
    const Bcast kind = detail::broadcast_kind(a, b, "mul");
    if (kind == Bcast::AScalar) return mul(tape, b, a);
    const bool rec = tape.active() && (a.requires_grad() || b.requires_grad());
    Tensor<T> out(a.shape(), rec);
    const T* ad = a.data();
    const T* bd = b.data();
    T* od = out.data();
    const int64_t n = a.numel();
    const int64_t d = (kind == Bcast::BRow) ? b.dim(0) : 0;
    switch (kind) {
        case Bcast::Same:
            for (int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
            break;
        case Bcast::BScalar:
            for (int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[0];
            break;
        case Bcast::BRow:
            for (int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i % d];
            break;
        case Bcast::AScalar:
            break;
    }
    if (rec) {
        tape.record(out, [a = a, b = b, out, kind, n, d]() mutable {
            const T* og = out.grad();
            const T* ad2 = a.data();
            const T* bd2 = b.data();
            if (a.requires_grad()) {
                T* ag = a.grad();
                switch (kind) {
                    case Bcast::Same:
                        for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * bd2[i];
                        break;
                    case Bcast::BScalar:
                        for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * bd2[0];
                        break;
                    case Bcast::BRow:
                        for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * bd2[i % d];
                        break;
                    case Bcast::AScalar:
                        break;
                }
            }
            if (b.requires_grad()) {
                T* bg = b.grad();
                switch (kind) {
                    case Bcast::Same:
                        for (int64_t i = 0; i < n; ++i) bg[i] += og[i] * ad2[i];
                        break;
                    case Bcast::BScalar:
                        for (int64_t i = 0; i < n; ++i) bg[0] += og[i] * ad2[i];
                        break;
                    case Bcast::BRow:
                        for (int64_t i = 0; i < n; ++i) bg[i % d] += og[i] * ad2[i];
                        break;
                    case Bcast::AScalar:
                        break;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T c) {
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    const T* xd = x.data();
    T* od = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) od[i] = c * xd[i];
    if (rec) {
        tape.record(out, [x = x, out, c, n]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            for (int64_t i = 0; i < n; ++i) xg[i] += c * og[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    const T* xd = x.data();
    T* od = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);
    if (rec) {
        tape.record(out, [x = x, out, n]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            const T* xd2 = x.data();
            for (int64_t i = 0; i < n; ++i)
                if (xd2[i] > T(0)) xg[i] += og[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    const T* xd = x.data();
    T* od = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const T v = xd[i];
        if (v >= T(0)) {
            od[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            od[i] = e / (T(1) + e);
        }
    }
    if (rec) {
        tape.record(out, [x = x, out, n]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            const T* od2 = out.data();
            for (int64_t i = 0; i < n; ++i) xg[i] += og[i] * od2[i] * (T(1) - od2[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x) {
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    const T* xd = x.data();
    T* od = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) od[i] = std::exp(xd[i]);
    if (rec) {
        tape.record(out, [x = x, out, n]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            const T* od2 = out.data();
            for (int64_t i = 0; i < n; ++i) xg[i] += og[i] * od2[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& x) {
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    const T* xd = x.data();
    T* od = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) od[i] = std::log(xd[i]);
    if (rec) {
        tape.record(out, [x = x, out, n]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            const T* xd2 = x.data();
            for (int64_t i = 0; i < n; ++i) xg[i] += og[i] / xd2[i];
        });
    }
    return out;
}

// Zero gradient outside [lo, hi], unit gradient inside (boundaries included).
template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& x, T lo, T hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    const T* xd = x.data();
    T* od = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) od[i] = std::min(hi, std::max(lo, xd[i]));
    if (rec) {
        tape.record(out, [x = x, out, lo, hi, n]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            const T* xd2 = x.data();
            for (int64_t i = 0; i < n; ++i)
                if (xd2[i] >= lo && xd2[i] <= hi) xg[i] += og[i];
        });
    }
    return out;
}

// Inverted dropout: surviving activations are scaled by 1/(1-p) at train
// time so that eval is an exact identity.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
    if (!train || p == 0.0) return x;
    const int64_t n = x.numel();
    const T keep_scale = T(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    std::bernoulli_distribution keep(1.0 - p);
    for (int64_t i = 0; i < n; ++i) (*mask)[i] = keep(rng) ? keep_scale : T(0);
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t i = 0; i < n; ++i) od[i] = xd[i] * (*mask)[i];
    if (rec) {
        tape.record(out, [x = x, out, mask, n]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            for (int64_t i = 0; i < n; ++i) xg[i] += og[i] * (*mask)[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
    const bool rec = tape.active() && x.requires_grad();
    const int64_t n = x.numel();
    const T* xd = x.data();
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += xd[i];
    Tensor<T> out = Tensor<T>::from({1}, {s}, rec);
    if (rec) {
        tape.record(out, [x = x, out, n]() mutable {
            T* xg = x.grad();
            const T g = out.grad()[0];
            for (int64_t i = 0; i < n; ++i) xg[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
    const bool rec = tape.active() && x.requires_grad();
    const int64_t n = x.numel();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    const T* xd = x.data();
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += xd[i];
    Tensor<T> out = Tensor<T>::from({1}, {s / T(n)}, rec);
    if (rec) {
        tape.record(out, [x = x, out, n]() mutable {
            T* xg = x.grad();
            const T g = out.grad()[0] / T(n);
            for (int64_t i = 0; i < n; ++i) xg[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
        throw std::invalid_argument("softmax_lastdim: last dimension must be >= 1");
    const int64_t d = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / d;
    const T* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(xd[i])) throw std::runtime_error("softmax_lastdim: non-finite input");
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out(x.shape(), rec);
    T* od = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xd + r * d;
        T* orow = od + r * d;
        T mx = xr[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        T denom = T(0);
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            denom += orow[j];
        }
        for (int64_t j = 0; j < d; ++j) orow[j] /= denom;
    }
    if (rec) {
        tape.record(out, [x = x, out, rows, d]() mutable {
            T* xg = x.grad();
            const T* og = out.grad();
            const T* od2 = out.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = od2 + r * d;
                const T* gy = og + r * d;
                T dot = T(0);
                for (int64_t j = 0; j < d; ++j) dot += gy[j] * y[j];
                T* gx = xg + r * d;
                for (int64_t j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> slice_rows(Tape<T>& tape, const Tensor<T>& x, int64_t row0, int64_t nrows) {
    detail::check_2d(x.shape(), "slice_rows");
    const int64_t r = x.dim(0), c = x.dim(1);
    if (row0 < 0 || nrows < 0 || row0 + nrows > r) throw std::invalid_argument("slice_rows: range out of bounds");
    const bool rec = tape.active() && x.requires_grad();
    Tensor<T> out({nrows, c}, rec);
    std::memcpy(out.data(), x.data() + row0 * c, static_cast<size_t>(nrows * c) * sizeof(T));
    if (rec) {
        tape.record(out, [x = x, out, row0, c]() mutable {
            T* xg = x.grad() + row0 * c;
            const T* og = out.grad();
            const int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) xg[i] += og[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_2d(a.shape(), "concat_rows");
    detail::check_2d(b.shape(), "concat_rows");
    if (a.dim(1) != b.dim(1)) throw std::invalid_argument("concat_rows: column counts differ");
    const int64_t ra = a.dim(0), rb = b.dim(0), c = a.dim(1);
    const bool rec = tape.active() && (a.requires_grad() || b.requires_grad());
    Tensor<T> out({ra + rb, c}, rec);
    std::memcpy(out.data(), a.data(), static_cast<size_t>(ra * c) * sizeof(T));
    std::memcpy(out.data() + ra * c, b.data(), static_cast<size_t>(rb * c) * sizeof(T));
    if (rec) {
        tape.record(out, [a = a, b = b, out, ra, rb, c]() mutable {
            const T* og = out.grad();
            if (a.requires_grad()) {
                T* ag = a.grad();
                for (int64_t i = 0; i < ra * c; ++i) ag[i] += og[i];
            }
            if (b.requires_grad()) {
                T* bg = b.grad();
                const T* ogb = og + ra * c;
                for (int64_t i = 0; i < rb * c; ++i) bg[i] += ogb[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int64_t n = parts[0].dim(0);
    int64_t total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        detail::check_2d(p.shape(), "concat_cols");
        if (p.dim(0) != n) throw std::invalid_argument("concat_cols: row counts differ");
        total += p.dim(1);
        any_grad = any_grad || p.requires_grad();
    }
    const bool rec = tape.active() && any_grad;
    Tensor<T> out({n, total}, rec);
    T* od = out.data();
    int64_t col = 0;
    for (const auto& p : parts) {
        const int64_t c = p.dim(1);
        const T* pd = p.data();
        for (int64_t i = 0; i < n; ++i) std::memcpy(od + i * total + col, pd + i * c, static_cast<size_t>(c) * sizeof(T));
        col += c;
    }
    if (rec) {
        auto parts_copy = parts;
        tape.record(out, [parts_copy, out, n, total]() mutable {
            const T* og = out.grad();
            int64_t col2 = 0;
            for (auto& p : parts_copy) {
                const int64_t c = p.dim(1);
                if (p.requires_grad()) {
                    T* pg = p.grad();
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < c; ++j) pg[i * c + j] += og[i * total + col2 + j];
                }
                col2 += c;
            }
        });
    }
    return out;
}

// Row gather from an embedding table; the scatter-add in backward runs in
// token order so repeated ids accumulate deterministically.
template <typename T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, const std::vector<int32_t>& ids) {
    detail::check_2d(table.shape(), "embedding");
    const int64_t v = table.dim(0), d = table.dim(1);
    const int64_t n = static_cast<int64_t>(ids.size());
    for (int64_t t = 0; t < n; ++t)
        if (ids[t] < 0 || ids[t] >= v)
            throw std::out_of_range("embedding: token id " + std::to_string(ids[t]) + " outside vocab of " +
                                    std::to_string(v));
    const bool rec = tape.active() && table.requires_grad();
    Tensor<T> out({n, d}, rec);
    T* od = out.data();
    const T* td = table.data();
    for (int64_t t = 0; t < n; ++t) std::memcpy(od + t * d, td + ids[t] * d, static_cast<size_t>(d) * sizeof(T));
    if (rec) {
        tape.record(out, [table = table, out, ids, n, d]() mutable {
            T* tg = table.grad();
            const T* og = out.grad();
            for (int64_t t = 0; t < n; ++t) {
                T* row = tg + ids[t] * d;
                const T* g = og + t * d;
                for (int64_t j = 0; j < d; ++j) row[j] += g[j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    detail::check_2d(x.shape(), "layer_norm");
    const int64_t n = x.dim(0), d = x.dim(1);
    if (gamma.numel() != d || beta.numel() != d) throw std::invalid_argument("layer_norm: parameter size mismatch");
    const bool rec = tape.active() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    Tensor<T> out({n, d}, rec);
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(n * d));
    auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    const T* xd = x.data();
    const T* gd = gamma.data();
    const T* bd = beta.data();
    T* od = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const T* xr = xd + i * d;
        T mu = T(0);
        for (int64_t j = 0; j < d; ++j) mu += xr[j];
        mu /= T(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = xr[j] - mu;
            var += c * c;
        }
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*invstd)[i] = is;
        T* hr = xhat->data() + i * d;
        T* orow = od + i * d;
        for (int64_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mu) * is;
            orow[j] = gd[j] * hr[j] + bd[j];
        }
    }
    if (rec) {
        tape.record(out, [x = x, gamma = gamma, beta = beta, out, xhat, invstd, n, d]() mutable {
            const T* og = out.grad();
            const T* gd2 = gamma.data();
            for (int64_t i = 0; i < n; ++i) {
                const T* gr = og + i * d;
                const T* hr = xhat->data() + i * d;
                if (gamma.requires_grad()) {
                    T* gg = gamma.grad();
                    for (int64_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
                }
                if (beta.requires_grad()) {
                    T* bg = beta.grad();
                    for (int64_t j = 0; j < d; ++j) bg[j] += gr[j];
                }
                if (x.requires_grad()) {
                    T m1 = T(0), m2 = T(0);
                    for (int64_t j = 0; j < d; ++j) {
                        const T h = gr[j] * gd2[j];
                        m1 += h;
                        m2 += h * hr[j];
                    }
                    m1 /= T(d);
                    m2 /= T(d);
                    T* xg = x.grad() + i * d;
                    const T is = (*invstd)[i];
                    for (int64_t j = 0; j < d; ++j) xg[j] += (gr[j] * gd2[j] - m1 - hr[j] * m2) * is;
                }
            }
        });
    }
    return out;
}

// Mean negative log-likelihood (nats) of targets under softmax(logits).
template <typename T>
Tensor<T> cross_entropy_mean(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int32_t>& targets) {
    detail::check_2d(logits.shape(), "cross_entropy_mean");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != n)
        throw std::invalid_argument("cross_entropy_mean: target count mismatch");
    for (int64_t i = 0; i < n; ++i)
        if (targets[i] < 0 || targets[i] >= v) throw std::out_of_range("cross_entropy_mean: target id outside vocab");
    const bool rec = tape.active() && logits.requires_grad();
    auto probs = rec ? std::make_shared<std::vector<T>>(static_cast<size_t>(n * v)) : nullptr;
    const T* ld = logits.data();
    T total = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T* row = ld + i * v;
        T mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        const T lse = mx + std::log(denom);
        total += lse - row[targets[i]];
        if (rec) {
            T* pr = probs->data() + i * v;
            for (int64_t j = 0; j < v; ++j) pr[j] = std::exp(row[j] - lse);
        }
    }
    Tensor<T> out = Tensor<T>::from({1}, {total / T(n)}, rec);
    if (rec) {
        tape.record(out, [logits = logits, out, probs, targets, n, v]() mutable {
            T* lg = logits.grad();
            const T g = out.grad()[0] / T(n);
            const T* pr = probs->data();
            for (int64_t i = 0; i < n; ++i) {
                T* row = lg + i * v;
                const T* p = pr + i * v;
                for (int64_t j = 0; j < v; ++j) row[j] += g * p[j];
                row[targets[i]] -= g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// initializers
// ---------------------------------------------------------------------------

template <typename T>
void fill_normal(Tensor<T>& t, double mean_v, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(mean_v, stddev);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

}  // namespace adaspan
