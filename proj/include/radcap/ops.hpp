#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "radcap/error.hpp"
#include "radcap/kernels.hpp"
#include "radcap/rng.hpp"
#include "radcap/tensor.hpp"

namespace radcap::ops {

namespace detail {

// Right-aligned broadcast over at most 4 axes. Strides are zero on axes a
// tensor does not span, so one index walk serves both operands.
struct Bcast {
    Shape out_shape;
    std::array<int, 4> od{1, 1, 1, 1};
    std::array<std::int64_t, 4> sa{0, 0, 0, 0};
    std::array<std::int64_t, 4> sb{0, 0, 0, 0};
    bool same = false;
};

inline Bcast plan_bcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() > 4 || b.size() > 4)
        throw ShapeError(std::string(op) + ": rank > 4 unsupported");
    const int r = static_cast<int>(std::max(a.size(), b.size()));
    Bcast p;
    p.out_shape.resize(static_cast<std::size_t>(r));
    const auto stra = row_major_strides(a);
    const auto strb = row_major_strides(b);
    for (int i = 0; i < r; ++i) {
        const int ia = i - (r - static_cast<int>(a.size()));
        const int ib = i - (r - static_cast<int>(b.size()));
        const int da = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
        const int db = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        const int d = std::max(da, db);
        p.out_shape[static_cast<std::size_t>(i)] = d;
        const int slot = i + (4 - r);
        p.od[static_cast<std::size_t>(slot)] = d;
        p.sa[static_cast<std::size_t>(slot)] = (ia >= 0 && da != 1) ? stra[static_cast<std::size_t>(ia)] : 0;
        p.sb[static_cast<std::size_t>(slot)] = (ib >= 0 && db != 1) ? strb[static_cast<std::size_t>(ib)] : 0;
    }
    p.same = (a == b);
    return p;
}

template <typename Body>
inline void for_bcast(const Bcast& p, Body body) {
    std::int64_t io = 0;
    for (int i0 = 0; i0 < p.od[0]; ++i0)
        for (int i1 = 0; i1 < p.od[1]; ++i1)
            for (int i2 = 0; i2 < p.od[2]; ++i2) {
                std::int64_t base_a = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
                std::int64_t base_b = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
                for (int i3 = 0; i3 < p.od[3]; ++i3, ++io)
                    body(io, base_a + i3 * p.sa[3], base_b + i3 * p.sb[3]);
            }
}

enum class BinOp { Add, Sub, Mul };

template <typename T, BinOp OP>
Tensor<T> binary(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, const char* name) {
    const Bcast p = plan_bcast(a.shape(), b.shape(), name);
    Tensor<T> out(p.out_shape);
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    if (p.same) {
        const std::int64_t n = out.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            if constexpr (OP == BinOp::Add) ov[i] = av[i] + bv[i];
            if constexpr (OP == BinOp::Sub) ov[i] = av[i] - bv[i];
            if constexpr (OP == BinOp::Mul) ov[i] = av[i] * bv[i];
        }
    } else {
        for_bcast(p, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
            if constexpr (OP == BinOp::Add) ov[io] = av[ia] + bv[ib];
            if constexpr (OP == BinOp::Sub) ov[io] = av[ia] - bv[ib];
            if constexpr (OP == BinOp::Mul) ov[io] = av[ia] * bv[ib];
        });
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([p, ac, bc, oc]() mutable {
            const T* go = oc.grad().data();
            T* ga = ac.requires_grad() ? ac.grad_data() : nullptr;
            T* gb = bc.requires_grad() ? bc.grad_data() : nullptr;
            const T* av2 = ac.data();
            const T* bv2 = bc.data();
            if (p.same) {
                const std::int64_t n = oc.numel();
                if constexpr (OP == BinOp::Add) {
                    if (ga) kernels::axpy(T(1), go, ga, static_cast<int>(n));
                    if (gb) kernels::axpy(T(1), go, gb, static_cast<int>(n));
                }
                if constexpr (OP == BinOp::Sub) {
                    if (ga) kernels::axpy(T(1), go, ga, static_cast<int>(n));
                    if (gb) kernels::axpy(T(-1), go, gb, static_cast<int>(n));
                }
                if constexpr (OP == BinOp::Mul) {
                    for (std::int64_t i = 0; i < n; ++i) {
                        if (ga) ga[i] += go[i] * bv2[i];
                        if (gb) gb[i] += go[i] * av2[i];
                    }
                }
            } else {
                for_bcast(p, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                    if constexpr (OP == BinOp::Add) {
                        if (ga) ga[ia] += go[io];
                        if (gb) gb[ib] += go[io];
                    }
                    if constexpr (OP == BinOp::Sub) {
                        if (ga) ga[ia] += go[io];
                        if (gb) gb[ib] -= go[io];
                    }
                    if constexpr (OP == BinOp::Mul) {
                        if (ga) ga[ia] += go[io] * bv2[ib];
                        if (gb) gb[ib] += go[io] * av2[ia];
                    }
                });
            }
        });
    }
    return out;
}

} // namespace detail

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary<T, detail::BinOp::Add>(tape, a, b, "add");
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary<T, detail::BinOp::Sub>(tape, a, b, "sub");
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary<T, detail::BinOp::Mul>(tape, a, b, "mul");
}

// y = a*x + b with plain scalars.
template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T a, T b) {
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = a * xv[i] + b;
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([a, xc, oc]() mutable {
            kernels::axpy(a, oc.grad().data(), xc.grad_data(), static_cast<int>(oc.numel()));
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            const T* go = oc.grad().data();
            const T* xv2 = xc.data();
            T* gx = xc.grad_data();
            const std::int64_t m = oc.numel();
            for (std::int64_t i = 0; i < m; ++i)
                if (xv2[i] > T(0)) gx[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            const T* go = oc.grad().data();
            const T* y = oc.data();
            T* gx = xc.grad_data();
            const std::int64_t m = oc.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += go[i] * y[i] * (T(1) - y[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = std::tanh(xv[i]);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            const T* go = oc.grad().data();
            const T* y = oc.data();
            T* gx = xc.grad_data();
            const std::int64_t m = oc.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += go[i] * (T(1) - y[i] * y[i]);
        });
    }
    return out;
}

// Softmax over the last axis, numerically stabilized by the row max.
template <typename T>
Tensor<T> softmax_last(Tape<T>* tape, const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("softmax_last: rank 0");
    const int cols = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / cols;
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xv + r * cols;
        T* orow = ov + r * cols;
        T mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        T s = T(0);
        for (int c = 0; c < cols; ++c) {
            orow[c] = std::exp(xr[c] - mx);
            s += orow[c];
        }
        const T inv = T(1) / s;
        for (int c = 0; c < cols; ++c) orow[c] *= inv;
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, cols, rows]() mutable {
            const T* go = oc.grad().data();
            const T* y = oc.data();
            T* gx = xc.grad_data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gor = go + r * cols;
                const T* yr = y + r * cols;
                T* gxr = gx + r * cols;
                const T dotv = kernels::dot(gor, yr, cols);
                for (int c = 0; c < cols; ++c) gxr[c] += yr[c] * (gor[c] - dotv);
            }
        });
    }
    return out;
}

// [M,K] x [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor<T> out({M, N});
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k)
            kernels::axpy(av[m * K + k], bv + k * N, ov + m * N, N);
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, M, K, N]() mutable {
            const T* go = oc.grad().data();
            const T* av2 = ac.data();
            const T* bv2 = bc.data();
            if (ac.requires_grad()) {
                T* ga = ac.grad_data();
                for (int m = 0; m < M; ++m)
                    for (int k = 0; k < K; ++k)
                        ga[m * K + k] += kernels::dot(go + m * N, bv2 + k * N, N);
            }
            if (bc.requires_grad()) {
                T* gb = bc.grad_data();
                for (int m = 0; m < M; ++m)
                    for (int k = 0; k < K; ++k)
                        kernels::axpy(av2[m * K + k], go + m * N, gb + k * N, N);
            }
        });
    }
    return out;
}

// x [..., IN] times W^T with W [OUT, IN], optional bias [OUT] -> [..., OUT]
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
    if (w.rank() != 2) throw ShapeError("linear: weight must be [out,in]");
    const int in = w.dim(1), outf = w.dim(0);
    if (x.rank() < 1 || x.dim(x.rank() - 1) != in)
        throw ShapeError("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    if (bias && (bias->rank() != 1 || bias->dim(0) != outf))
        throw ShapeError("linear: bad bias shape");
    const std::int64_t R = x.numel() / in;
    Shape os = x.shape();
    os.back() = outf;
    Tensor<T> out(os);
    const T* xv = x.data();
    const T* wv = w.data();
    const T* bv = bias ? bias->data() : nullptr;
    T* ov = out.data();
    for (std::int64_t r = 0; r < R; ++r) {
        const T* xr = xv + r * in;
        T* orow = ov + r * outf;
        for (int o = 0; o < outf; ++o)
            orow[o] = kernels::dot(xr, wv + static_cast<std::int64_t>(o) * in, in) + (bv ? bv[o] : T(0));
    }
    const bool bgrad = bias && bias->requires_grad();
    if (tape && (x.requires_grad() || w.requires_grad() || bgrad)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, wc = w, oc = out;
        Tensor<T> bcopy = bias ? *bias : Tensor<T>();
        tape->record([xc, wc, bcopy, oc, R, in, outf]() mutable {
            const T* go = oc.grad().data();
            const T* xv2 = xc.data();
            const T* wv2 = wc.data();
            T* gx = xc.requires_grad() ? xc.grad_data() : nullptr;
            T* gw = wc.requires_grad() ? wc.grad_data() : nullptr;
            T* gb = (bcopy.defined() && bcopy.requires_grad()) ? bcopy.grad_data() : nullptr;
            for (std::int64_t r = 0; r < R; ++r) {
                const T* gor = go + r * outf;
                const T* xr = xv2 + r * in;
                T* gxr = gx ? gx + r * in : nullptr;
                for (int o = 0; o < outf; ++o) {
                    const T g = gor[o];
                    if (g == T(0)) continue;
                    if (gxr) kernels::axpy(g, wv2 + static_cast<std::int64_t>(o) * in, gxr, in);
                    if (gw) kernels::axpy(g, xr, gw + static_cast<std::int64_t>(o) * in, in);
                    if (gb) gb[o] += g;
                }
            }
        });
    }
    return out;
}

// [B,M,K] x [B,K,N] -> [B,M,N]
template <typename T>
Tensor<T> bmm(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    Tensor<T> out({B, M, N});
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    for (int n = 0; n < B; ++n) {
        const T* an = av + static_cast<std::int64_t>(n) * M * K;
        const T* bn = bv + static_cast<std::int64_t>(n) * K * N;
        T* on = ov + static_cast<std::int64_t>(n) * M * N;
        for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k)
                kernels::axpy(an[m * K + k], bn + k * N, on + m * N, N);
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, B, M, K, N]() mutable {
            const T* go = oc.grad().data();
            const T* av2 = ac.data();
            const T* bv2 = bc.data();
            T* ga = ac.requires_grad() ? ac.grad_data() : nullptr;
            T* gb = bc.requires_grad() ? bc.grad_data() : nullptr;
            for (int n = 0; n < B; ++n) {
                const T* an = av2 + static_cast<std::int64_t>(n) * M * K;
                const T* bn = bv2 + static_cast<std::int64_t>(n) * K * N;
                const T* gon = go + static_cast<std::int64_t>(n) * M * N;
                if (ga) {
                    T* gan = ga + static_cast<std::int64_t>(n) * M * K;
                    for (int m = 0; m < M; ++m)
                        for (int k = 0; k < K; ++k)
                            gan[m * K + k] += kernels::dot(gon + m * N, bn + k * N, N);
                }
                if (gb) {
                    T* gbn = gb + static_cast<std::int64_t>(n) * K * N;
                    for (int m = 0; m < M; ++m)
                        for (int k = 0; k < K; ++k)
                            kernels::axpy(an[m * K + k], gon + m * N, gbn + k * N, N);
                }
            }
        });
    }
    return out;
}

namespace detail {

// Transposed im2col: rows are kernel taps (c,ki,kj), columns are output
// positions. Row-contiguous so the conv GEMM can run as axpy over rows.
template <typename T>
void im2col_t(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
              int Ho, int Wo, T* out) {
    const int hw = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<std::int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                T* row = out + (static_cast<std::int64_t>(c) * kh * kw + ki * kw + kj) * hw;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    T* dst = row + oh * Wo;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst, dst + Wo, T(0));
                        continue;
                    }
                    const T* src = xc + ih * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
    }
}

template <typename T>
void col2im_t(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
              int Ho, int Wo, T* gx) {
    const int hw = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        T* gxc = gx + static_cast<std::int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = cols + (static_cast<std::int64_t>(c) * kh * kw + ki * kw + kj) * hw;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= H) continue;
                    const T* src = row + oh * Wo;
                    T* dst = gxc + ih * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        if (iw >= 0 && iw < W) dst[iw] += src[ow];
                    }
                }
            }
    }
}

} // namespace detail

// x [N,Cin,H,W], w [Cout,Cin,kh,kw] -> [N,Cout,Ho,Wo]. No bias: every conv
// here is either followed by batchnorm or feeds an activation that
// tolerates a zero offset.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: kernel larger than padded input");
    const int K = C * kh * kw;
    const int hw = Ho * Wo;
    Tensor<T> out({N, Cout, Ho, Wo});
    const T* xv = x.data();
    const T* wv = w.data();
    T* ov = out.data();
    std::vector<T> cols(static_cast<std::size_t>(K) * hw);
    for (int n = 0; n < N; ++n) {
        detail::im2col_t(xv + static_cast<std::int64_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo,
                         cols.data());
        T* on = ov + static_cast<std::int64_t>(n) * Cout * hw;
        for (int k = 0; k < K; ++k) {
            const T* pk = cols.data() + static_cast<std::int64_t>(k) * hw;
            for (int o = 0; o < Cout; ++o) {
                const T wk = wv[static_cast<std::int64_t>(o) * K + k];
                if (wk != T(0)) kernels::axpy(wk, pk, on + static_cast<std::int64_t>(o) * hw, hw);
            }
        }
    }
    if (tape && (x.requires_grad() || w.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, wc = w, oc = out;
        tape->record([xc, wc, oc, N, C, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, hw]() mutable {
            const T* go = oc.grad().data();
            const T* xv2 = xc.data();
            const T* wv2 = wc.data();
            T* gw = wc.requires_grad() ? wc.grad_data() : nullptr;
            T* gx = xc.requires_grad() ? xc.grad_data() : nullptr;
            std::vector<T> cols(static_cast<std::size_t>(K) * hw);
            std::vector<T> gcols;
            if (gx) gcols.resize(static_cast<std::size_t>(K) * hw);
            for (int n = 0; n < N; ++n) {
                if (gw)
                    detail::im2col_t(xv2 + static_cast<std::int64_t>(n) * C * H * W, C, H, W, kh, kw, stride,
                                     pad, Ho, Wo, cols.data());
                if (gx) std::fill(gcols.begin(), gcols.end(), T(0));
                const T* gon = go + static_cast<std::int64_t>(n) * Cout * hw;
                for (int k = 0; k < K; ++k) {
                    const T* pk = cols.data() + static_cast<std::int64_t>(k) * hw;
                    T* gk = gx ? gcols.data() + static_cast<std::int64_t>(k) * hw : nullptr;
                    for (int o = 0; o < Cout; ++o) {
                        const T* gor = gon + static_cast<std::int64_t>(o) * hw;
                        if (gw) gw[static_cast<std::int64_t>(o) * K + k] += kernels::dot(gor, pk, hw);
                        if (gk) {
                            const T wk = wv2[static_cast<std::int64_t>(o) * K + k];
                            if (wk != T(0)) kernels::axpy(wk, gor, gk, hw);
                        }
                    }
                }
                if (gx)
                    detail::col2im_t(gcols.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                                     gx + static_cast<std::int64_t>(n) * C * H * W);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& x, int k, int stride) {
    if (x.rank() != 4) throw ShapeError("maxpool2d: expected [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H - k) / stride + 1;
    const int Wo = (W - k) / stride + 1;
    if (Ho < 1 || Wo < 1) throw ShapeError("maxpool2d: window larger than input");
    Tensor<T> out({N, C, Ho, Wo});
    auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    const T* xv = x.data();
    T* ov = out.data();
    std::int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++oi) {
                    T best{};
                    std::int64_t bi = -1;
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j) {
                            const std::int64_t idx = base + (oh * stride + i) * W + (ow * stride + j);
                            if (bi < 0 || xv[idx] > best) {
                                best = xv[idx];
                                bi = idx;
                            }
                        }
                    ov[oi] = best;
                    (*arg)[static_cast<std::size_t>(oi)] = bi;
                }
        }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, arg]() mutable {
            const T* go = oc.grad().data();
            T* gx = xc.grad_data();
            const std::int64_t n = oc.numel();
            for (std::int64_t i = 0; i < n; ++i) gx[(*arg)[static_cast<std::size_t>(i)]] += go[i];
        });
    }
    return out;
}

// Per-channel batch normalization over N,H,W. Training mode normalizes with
// batch statistics and folds the batch into running_mean / running_var
// (kept with the unbiased variance); eval mode normalizes with the running
// statistics. momentum is the weight on the old running value.
template <typename T>
Tensor<T> batchnorm2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      T momentum = T(0.9), T eps = T(1e-5)) {
    if (x.rank() != 4) throw ShapeError("batchnorm2d: expected [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
        throw ShapeError("batchnorm2d: parameter size mismatch");
    const std::int64_t M = static_cast<std::int64_t>(N) * H * W;
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const T* gv = gamma.data();
    const T* bv = beta.data();

    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    auto istd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    if (training) {
        if (M < 1) throw ValueError("batchnorm2d: empty batch");
        for (int c = 0; c < C; ++c) {
            T s = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xp = xv + (static_cast<std::int64_t>(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) s += xp[i];
            }
            const T mu = s / static_cast<T>(M);
            T vs = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xp = xv + (static_cast<std::int64_t>(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T d = xp[i] - mu;
                    vs += d * d;
                }
            }
            const T var = vs / static_cast<T>(M);
            (*mean)[static_cast<std::size_t>(c)] = mu;
            (*istd)[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + eps);
            const T unbiased = M > 1 ? vs / static_cast<T>(M - 1) : var;
            running_mean.values()[static_cast<std::size_t>(c)] =
                momentum * running_mean.values()[static_cast<std::size_t>(c)] + (T(1) - momentum) * mu;
            running_var.values()[static_cast<std::size_t>(c)] =
                momentum * running_var.values()[static_cast<std::size_t>(c)] + (T(1) - momentum) * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[static_cast<std::size_t>(c)] = running_mean.values()[static_cast<std::size_t>(c)];
            (*istd)[static_cast<std::size_t>(c)] =
                T(1) / std::sqrt(running_var.values()[static_cast<std::size_t>(c)] + eps);
        }
    }
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T mu = (*mean)[static_cast<std::size_t>(c)];
            const T is = (*istd)[static_cast<std::size_t>(c)];
            const T g = gv[c], b = bv[c];
            const T* xp = xv + (static_cast<std::int64_t>(n) * C + c) * plane;
            T* op = ov + (static_cast<std::int64_t>(n) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) op[i] = g * (xp[i] - mu) * is + b;
        }

    if (tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
        tape->record([xc, gc, bc, oc, mean, istd, training, N, C, plane, M]() mutable {
            const T* go = oc.grad().data();
            const T* xv2 = xc.data();
            const T* gv2 = gc.data();
            T* gx = xc.requires_grad() ? xc.grad_data() : nullptr;
            T* gg = gc.requires_grad() ? gc.grad_data() : nullptr;
            T* gb = bc.requires_grad() ? bc.grad_data() : nullptr;
            for (int c = 0; c < C; ++c) {
                const T mu = (*mean)[static_cast<std::size_t>(c)];
                const T is = (*istd)[static_cast<std::size_t>(c)];
                // Channel reductions: sum(dy), sum(dy * xhat).
                T sgo = T(0), sgx = T(0);
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                    const T* gp = go + off;
                    const T* xp = xv2 + off;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        sgo += gp[i];
                        sgx += gp[i] * (xp[i] - mu) * is;
                    }
                }
                if (gg) gg[c] += sgx;
                if (gb) gb[c] += sgo;
                if (!gx) continue;
                const T g = gv2[c];
                if (training) {
                    const T im = T(1) / static_cast<T>(M);
                    for (int n = 0; n < N; ++n) {
                        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                        const T* gp = go + off;
                        const T* xp = xv2 + off;
                        T* gxp = gx + off;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const T xhat = (xp[i] - mu) * is;
                            gxp[i] += g * is * (gp[i] - im * sgo - xhat * im * sgx);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                        const T* gp = go + off;
                        T* gxp = gx + off;
                        for (std::int64_t i = 0; i < plane; ++i) gxp[i] += g * is * gp[i];
                    }
                }
            }
        });
    }
    return out;
}

// Inverted dropout: survivors are scaled by 1/(1-p) so eval needs no
// rescale. Identity (and no RNG consumption) when inactive.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, T p, bool training, Rng& rng) {
    if (p < T(0) || p >= T(1)) throw ValueError("dropout: p must be in [0,1)");
    if (!training || p == T(0)) return x;
    const std::int64_t n = x.numel();
    auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
    const T scale = T(1) / (T(1) - p);
    for (std::int64_t i = 0; i < n; ++i)
        (*mask)[static_cast<std::size_t>(i)] = rng.uniform() >= static_cast<double>(p) ? scale : T(0);
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = xv[i] * (*mask)[static_cast<std::size_t>(i)];
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, mask]() mutable {
            const T* go = oc.grad().data();
            T* gx = xc.grad_data();
            const std::int64_t m = oc.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += go[i] * (*mask)[static_cast<std::size_t>(i)];
        });
    }
    return out;
}

// Gather rows of table [V,D] by index -> [n,D].
template <typename T>
Tensor<T> rows(Tape<T>* tape, const Tensor<T>& table, const std::vector<int>& idx) {
    if (table.rank() != 2) throw ShapeError("rows: table must be [V,D]");
    const int V = table.dim(0), D = table.dim(1);
    Tensor<T> out({static_cast<int>(idx.size()), D});
    const T* tv = table.data();
    T* ov = out.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= V) throw ValueError("rows: index out of range");
        std::copy(tv + static_cast<std::int64_t>(idx[i]) * D, tv + static_cast<std::int64_t>(idx[i] + 1) * D,
                  ov + static_cast<std::int64_t>(i) * D);
    }
    if (tape && table.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> tc = table, oc = out;
        auto ic = std::make_shared<std::vector<int>>(idx);
        tape->record([tc, oc, ic, D]() mutable {
            const T* go = oc.grad().data();
            T* gt = tc.grad_data();
            for (std::size_t i = 0; i < ic->size(); ++i)
                kernels::axpy(T(1), go + static_cast<std::int64_t>(i) * D,
                              gt + static_cast<std::int64_t>((*ic)[i]) * D, D);
        });
    }
    return out;
}

// [N,C,H,W] -> [N, H*W, C]: the annotation-grid layout used by attention.
template <typename T>
Tensor<T> channels_last(Tape<T>* tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("channels_last: expected [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int L = H * W;
    Tensor<T> out({N, L, C});
    const T* xv = x.data();
    T* ov = out.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = xv + (static_cast<std::int64_t>(n) * C + c) * L;
            T* op = ov + static_cast<std::int64_t>(n) * L * C + c;
            for (int l = 0; l < L; ++l) op[static_cast<std::int64_t>(l) * C] = xp[l];
        }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, N, C, L]() mutable {
            const T* go = oc.grad().data();
            T* gx = xc.grad_data();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* gxp = gx + (static_cast<std::int64_t>(n) * C + c) * L;
                    const T* gop = go + static_cast<std::int64_t>(n) * L * C + c;
                    for (int l = 0; l < L; ++l) gxp[l] += gop[static_cast<std::int64_t>(l) * C];
                }
        });
    }
    return out;
}

// Copying reshape with gradient routing.
template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    Tensor<T> out(std::move(shape));
    std::copy(x.values().begin(), x.values().end(), out.values().begin());
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            kernels::axpy(T(1), oc.grad().data(), xc.grad_data(), static_cast<int>(oc.numel()));
        });
    }
    return out;
}

// Concatenate [N,Ci,H,W] tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ValueError("concat_channels: empty input list");
    const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int C = 0;
    bool grad = false;
    for (const auto& t : xs) {
        if (t.rank() != 4 || t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
            throw ShapeError("concat_channels: mismatched shapes");
        C += t.dim(1);
        grad = grad || t.requires_grad();
    }
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    Tensor<T> out({N, C, H, W});
    T* ov = out.data();
    for (int n = 0; n < N; ++n) {
        std::int64_t coff = 0;
        for (const auto& t : xs) {
            const int ci = t.dim(1);
            const T* src = t.data() + static_cast<std::int64_t>(n) * ci * plane;
            std::copy(src, src + static_cast<std::int64_t>(ci) * plane,
                      ov + (static_cast<std::int64_t>(n) * C + coff) * plane);
            coff += ci;
        }
    }
    if (tape && grad) {
        out.set_requires_grad(true);
        auto xsc = std::make_shared<std::vector<Tensor<T>>>(xs);
        Tensor<T> oc = out;
        tape->record([xsc, oc, N, C, plane]() mutable {
            const T* go = oc.grad().data();
            for (int n = 0; n < N; ++n) {
                std::int64_t coff = 0;
                for (auto& t : *xsc) {
                    const int ci = t.dim(1);
                    if (t.requires_grad()) {
                        T* gt = t.grad_data() + static_cast<std::int64_t>(n) * ci * plane;
                        kernels::axpy(T(1), go + (static_cast<std::int64_t>(n) * C + coff) * plane, gt,
                                      static_cast<int>(ci * plane));
                    }
                    coff += ci;
                }
            }
        });
    }
    return out;
}

// [B,L,C] -> [B,C], mean over L.
template <typename T>
Tensor<T> mean_rows(Tape<T>* tape, const Tensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("mean_rows: expected [B,L,C]");
    const int B = x.dim(0), L = x.dim(1), C = x.dim(2);
    if (L == 0) throw ValueError("mean_rows: empty middle axis");
    Tensor<T> out({B, C});
    const T* xv = x.data();
    T* ov = out.data();
    const T inv = T(1) / static_cast<T>(L);
    for (int b = 0; b < B; ++b) {
        T* orow = ov + static_cast<std::int64_t>(b) * C;
        for (int l = 0; l < L; ++l)
            kernels::axpy(inv, xv + (static_cast<std::int64_t>(b) * L + l) * C, orow, C);
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, B, L, C, inv]() mutable {
            const T* go = oc.grad().data();
            T* gx = xc.grad_data();
            for (int b = 0; b < B; ++b)
                for (int l = 0; l < L; ++l)
                    kernels::axpy(inv, go + static_cast<std::int64_t>(b) * C,
                                  gx + (static_cast<std::int64_t>(b) * L + l) * C, C);
        });
    }
    return out;
}

// Full reduction to a scalar [1].
template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out({1});
    const T* xv = x.data();
    T s = T(0);
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) s += xv[i];
    out.values()[0] = s;
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            const T g = oc.grad()[0];
            T* gx = xc.grad_data();
            const std::int64_t m = xc.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += g;
        });
    }
    return out;
}

// Row-wise negative log likelihood with a fused, max-shifted log-softmax.
// logits [R,K], targets [R] -> [R].
template <typename T>
Tensor<T> nll_rows(Tape<T>* tape, const Tensor<T>& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2) throw ShapeError("nll_rows: logits must be [R,K]");
    const int R = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(targets.size()) != R) throw ShapeError("nll_rows: target count mismatch");
    Tensor<T> out({R});
    const T* lv = logits.data();
    T* ov = out.data();
    for (int r = 0; r < R; ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= K) throw ValueError("nll_rows: target out of range");
        const T* row = lv + static_cast<std::int64_t>(r) * K;
        T mx = row[0];
        for (int c = 1; c < K; ++c) mx = std::max(mx, row[c]);
        T s = T(0);
        for (int c = 0; c < K; ++c) s += std::exp(row[c] - mx);
        ov[r] = mx + std::log(s) - row[t];
    }
    if (tape && logits.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> lc = logits, oc = out;
        auto tc = std::make_shared<std::vector<int>>(targets);
        tape->record([lc, oc, tc, R, K]() mutable {
            const T* go = oc.grad().data();
            const T* lv2 = lc.data();
            T* gl = lc.grad_data();
            for (int r = 0; r < R; ++r) {
                const T g = go[r];
                if (g == T(0)) continue;
                const T* row = lv2 + static_cast<std::int64_t>(r) * K;
                T* grow = gl + static_cast<std::int64_t>(r) * K;
                T mx = row[0];
                for (int c = 1; c < K; ++c) mx = std::max(mx, row[c]);
                T s = T(0);
                for (int c = 0; c < K; ++c) s += std::exp(row[c] - mx);
                const T inv = T(1) / s;
                for (int c = 0; c < K; ++c) grow[c] += g * std::exp(row[c] - mx) * inv;
                grow[(*tc)[static_cast<std::size_t>(r)]] -= g;
            }
        });
    }
    return out;
}

} // namespace radcap::ops
