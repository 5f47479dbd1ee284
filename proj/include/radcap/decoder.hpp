#pragma once

#include <string>
#include <utility>
#include <vector>

#include "radcap/config.hpp"
#include "radcap/encoder.hpp"
#include "radcap/grammar.hpp"
#include "radcap/ops.hpp"
#include "radcap/params.hpp"

namespace radcap {

namespace detail {

// Gates: z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
// candidate htilde = tanh(Wh x + Uh (r.h) + bh), h' = z.h + (1-z).htilde.
template <typename T>
struct GRUCell {
    Tensor<T> Wz, Uz, bz;
    Tensor<T> Wr, Ur, br;
    Tensor<T> Wh, Uh, bh;

    void init(int in, int hid, Rng& rng) {
        Wz = uniform_param<T>({hid, in}, in, rng);
        Uz = uniform_param<T>({hid, hid}, hid, rng);
        bz = const_param<T>({hid}, T(0));
        Wr = uniform_param<T>({hid, in}, in, rng);
        Ur = uniform_param<T>({hid, hid}, hid, rng);
        br = const_param<T>({hid}, T(0));
        Wh = uniform_param<T>({hid, in}, in, rng);
        Uh = uniform_param<T>({hid, hid}, hid, rng);
        bh = const_param<T>({hid}, T(0));
    }

    // x [B,in], h [B,hid] -> [B,hid]
    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& h) const {
        Tensor<T> z = ops::sigmoid(tape, ops::add(tape, ops::linear(tape, x, Wz, &bz),
                                                  ops::linear(tape, h, Uz)));
        Tensor<T> r = ops::sigmoid(tape, ops::add(tape, ops::linear(tape, x, Wr, &br),
                                                  ops::linear(tape, h, Ur)));
        Tensor<T> rh = ops::mul(tape, r, h);
        Tensor<T> cand = ops::tanh(tape, ops::add(tape, ops::linear(tape, x, Wh, &bh),
                                                  ops::linear(tape, rh, Uh)));
        Tensor<T> keep = ops::mul(tape, z, h);
        Tensor<T> flip = ops::mul(tape, ops::affine(tape, z, T(-1), T(1)), cand);
        return ops::add(tape, keep, flip);
    }

    void collect_params(const std::string& p, std::vector<ParamRef<T>>& out) {
        out.push_back({p + ".Wz", Wz, true});
        out.push_back({p + ".Uz", Uz, true});
        out.push_back({p + ".bz", bz, false});
        out.push_back({p + ".Wr", Wr, true});
        out.push_back({p + ".Ur", Ur, true});
        out.push_back({p + ".br", br, false});
        out.push_back({p + ".Wh", Wh, true});
        out.push_back({p + ".Uh", Uh, true});
        out.push_back({p + ".bh", bh, false});
    }
};

} // namespace detail

// Per-sequence attention precomputation: U_att A does not depend on the
// step, so it is built once per image (or batch) and reused.
template <typename T>
struct AttendCache {
    AnnotationGrid<T> grid;
    Tensor<T> ua; // [B, L, n_att]
};

// State for stepwise (inference) decoding of one image. The coverage
// accumulator is the running sum of all previous attention maps.
template <typename T>
struct DecoderState {
    Tensor<T> s;                       // [1, n]
    Tensor<T> coverage;                // [1, 1, H, W]
    std::vector<std::vector<T>> trace; // one alpha vector (length L) per step
    int t = 0;
};

// Coverage-attention GRU decoder. One step: shat = GRU1(E y_prev, s_prev);
// alpha from v_att tanh(W_att shat + U_att a_i + U_f f_i) with
// f = Q * coverage; context c = sum alpha_i a_i; s = GRU2 with input c and
// hidden shat; logits = W_0 (E y_prev + W_s s + W_c c).
template <typename T>
class AttnDecoder {
public:
    AttnDecoder() = default;

    AttnDecoder(const DecoderDims& dims, int K, int Dv, Rng& rng) : dims_(dims), K_(K), Dv_(Dv) {
        dims.validate();
        E_ = uniform_param<T>({K, dims.m}, dims.m, rng);
        gru1_.init(dims.m, dims.n, rng);
        gru2_.init(Dv, dims.n, rng);
        W0_ = uniform_param<T>({K, dims.m}, dims.m, rng);
        Ws_ = uniform_param<T>({dims.m, dims.n}, dims.n, rng);
        Wc_ = uniform_param<T>({dims.m, Dv}, Dv, rng);
        v_att_ = uniform_param<T>({1, dims.n_att}, dims.n_att, rng);
        W_att_ = uniform_param<T>({dims.n_att, dims.n}, dims.n, rng);
        U_att_ = uniform_param<T>({dims.n_att, Dv}, Dv, rng);
        U_f_ = uniform_param<T>({dims.n_att, dims.q}, dims.q, rng);
        Q_ = uniform_param<T>({dims.q, 1, dims.cov_kernel, dims.cov_kernel},
                              dims.cov_kernel * dims.cov_kernel, rng);
        W_init_ = uniform_param<T>({dims.n, Dv}, Dv, rng);
    }

    const DecoderDims& dims() const { return dims_; }
    int K() const { return K_; }
    int Dv() const { return Dv_; }

    AttendCache<T> make_cache(Tape<T>* tape, const AnnotationGrid<T>& grid) const {
        if (grid.Dv() != Dv_) throw ShapeError("decoder: annotation depth mismatch");
        AttendCache<T> c;
        c.grid = grid;
        c.ua = ops::linear(tape, grid.a, U_att_);
        return c;
    }

    // s_0 = tanh(W_init * mean_i a_i), one per batch row.
    Tensor<T> init_state(Tape<T>* tape, const AttendCache<T>& cache) const {
        Tensor<T> mean = ops::mean_rows(tape, cache.grid.a);
        return ops::tanh(tape, ops::linear(tape, mean, W_init_));
    }

    Tensor<T> zero_coverage(int batch, const AttendCache<T>& cache) const {
        return Tensor<T>({batch, 1, cache.grid.H, cache.grid.W}, T(0));
    }

    // shat [B,n], coverage [B,1,H,W] -> (alpha [B,L], context [B,Dv])
    std::pair<Tensor<T>, Tensor<T>> attend(Tape<T>* tape, const Tensor<T>& shat,
                                           const AttendCache<T>& cache,
                                           const Tensor<T>& coverage) const {
        const int B = cache.grid.batch();
        const int L = cache.grid.L();
        if (shat.rank() != 2 || shat.dim(0) != B || shat.dim(1) != dims_.n)
            throw ShapeError("attend: bad state shape " + shape_str(shat.shape()));
        if (coverage.rank() != 4 || coverage.dim(0) != B || coverage.dim(1) != 1 ||
            coverage.dim(2) != cache.grid.H || coverage.dim(3) != cache.grid.W)
            throw ShapeError("attend: bad coverage shape " + shape_str(coverage.shape()));
        Tensor<T> f = ops::conv2d(tape, coverage, Q_, 1, dims_.cov_kernel / 2);
        Tensor<T> ff = ops::channels_last(tape, f);          // [B,L,q]
        Tensor<T> uf = ops::linear(tape, ff, U_f_);          // [B,L,n_att]
        Tensor<T> ws = ops::linear(tape, shat, W_att_);      // [B,n_att]
        Tensor<T> ws3 = ops::reshape(tape, ws, {B, 1, dims_.n_att});
        Tensor<T> pre = ops::tanh(tape, ops::add(tape, ops::add(tape, cache.ua, uf), ws3));
        Tensor<T> e = ops::linear(tape, pre, v_att_);        // [B,L,1]
        Tensor<T> alpha = ops::softmax_last(tape, ops::reshape(tape, e, {B, L}));
        Tensor<T> ctx = ops::bmm(tape, ops::reshape(tape, alpha, {B, 1, L}), cache.grid.a);
        return {alpha, ops::reshape(tape, ctx, {B, Dv_})};
    }

    struct StepOut {
        Tensor<T> logits;   // [B, K]
        Tensor<T> s;        // [B, n]
        Tensor<T> alpha;    // [B, L]
        Tensor<T> coverage; // [B, 1, H, W], input coverage + alpha
    };

    // One batched teacher-forcing / inference step.
    StepOut step_batch(Tape<T>* tape, const std::vector<int>& y_prev, const Tensor<T>& s_prev,
                       const AttendCache<T>& cache, const Tensor<T>& coverage) const {
        const int B = cache.grid.batch();
        if (static_cast<int>(y_prev.size()) != B) throw ShapeError("step: batch size mismatch");
        for (int y : y_prev)
            if (y < 0 || y >= K_) throw ValueError("step: token out of range");
        Tensor<T> emb = ops::rows(tape, E_, y_prev); // [B,m]
        Tensor<T> shat = gru1_.forward(tape, emb, s_prev);
        auto [alpha, ctx] = attend(tape, shat, cache, coverage);
        Tensor<T> s = gru2_.forward(tape, ctx, shat);
        Tensor<T> pre = ops::add(tape, ops::add(tape, emb, ops::linear(tape, s, Ws_)),
                                 ops::linear(tape, ctx, Wc_));
        StepOut out;
        out.logits = ops::linear(tape, pre, W0_);
        out.s = s;
        out.alpha = alpha;
        out.coverage = ops::add(
            tape, coverage,
            ops::reshape(tape, alpha, {B, 1, cache.grid.H, cache.grid.W}));
        return out;
    }

    // Single-image stepwise API over DecoderState; records the attention
    // trace. Batch row count of the cache must be 1.
    StepOut step(Tape<T>* tape, int y_prev, DecoderState<T>& state, const AttendCache<T>& cache) const {
        if (cache.grid.batch() != 1) throw ShapeError("step: stateful API is single-image");
        if (!state.s.defined()) {
            state.s = init_state(tape, cache);
            state.coverage = zero_coverage(1, cache);
        }
        StepOut out = step_batch(tape, {y_prev}, state.s, cache, state.coverage);
        state.s = out.s;
        state.coverage = out.coverage;
        state.trace.push_back(out.alpha.values());
        state.t += 1;
        return out;
    }

    // Teacher-forced mean-over-batch of per-sequence summed NLL. Targets
    // must end with <eos>; shorter sequences are masked out once finished.
    Tensor<T> batch_nll(Tape<T>* tape, const AttendCache<T>& cache,
                        const std::vector<grammar::TokenSequence>& targets, int sos, int eos) const {
        const int B = cache.grid.batch();
        if (static_cast<int>(targets.size()) != B) throw ShapeError("batch_nll: batch size mismatch");
        std::size_t maxlen = 0;
        for (const auto& t : targets) {
            if (t.empty()) throw ValueError("batch_nll: empty target");
            if (t.back() != eos) throw ValueError("batch_nll: target must end with <eos>");
            maxlen = std::max(maxlen, t.size());
        }
        Tensor<T> s = init_state(tape, cache);
        Tensor<T> coverage = zero_coverage(B, cache);
        Tensor<T> total = Tensor<T>({1}, T(0));
        std::vector<int> y_prev(static_cast<std::size_t>(B));
        std::vector<int> y_t(static_cast<std::size_t>(B));
        for (std::size_t t = 0; t < maxlen; ++t) {
            Tensor<T> mask({B});
            bool any = false;
            for (int b = 0; b < B; ++b) {
                const auto& seq = targets[static_cast<std::size_t>(b)];
                if (t < seq.size()) {
                    y_prev[static_cast<std::size_t>(b)] = t == 0 ? sos : seq[t - 1];
                    y_t[static_cast<std::size_t>(b)] = seq[t];
                    mask.values()[static_cast<std::size_t>(b)] = T(1);
                    any = true;
                } else {
                    y_prev[static_cast<std::size_t>(b)] = eos;
                    y_t[static_cast<std::size_t>(b)] = eos;
                    mask.values()[static_cast<std::size_t>(b)] = T(0);
                }
            }
            if (!any) break;
            StepOut out = step_batch(tape, y_prev, s, cache, coverage);
            s = out.s;
            coverage = out.coverage;
            Tensor<T> nll = ops::nll_rows(tape, out.logits, y_t);
            total = ops::add(tape, total, ops::sum(tape, ops::mul(tape, nll, mask)));
        }
        return ops::affine(tape, total, T(1) / static_cast<T>(B), T(0));
    }

    void collect_params(std::vector<ParamRef<T>>& out) {
        out.push_back({"dec.E", E_, true});
        gru1_.collect_params("dec.gru1", out);
        gru2_.collect_params("dec.gru2", out);
        out.push_back({"dec.W0", W0_, true});
        out.push_back({"dec.Ws", Ws_, true});
        out.push_back({"dec.Wc", Wc_, true});
        out.push_back({"dec.v_att", v_att_, true});
        out.push_back({"dec.W_att", W_att_, true});
        out.push_back({"dec.U_att", U_att_, true});
        out.push_back({"dec.U_f", U_f_, true});
        out.push_back({"dec.Q", Q_, true});
        out.push_back({"dec.W_init", W_init_, true});
    }

    Tensor<T>& u_f() { return U_f_; } // exposed for the coverage-sensitivity test

private:
    DecoderDims dims_;
    int K_ = 0;
    int Dv_ = 0;
    Tensor<T> E_;
    detail::GRUCell<T> gru1_, gru2_;
    Tensor<T> W0_, Ws_, Wc_;
    Tensor<T> v_att_, W_att_, U_att_, U_f_, Q_;
    Tensor<T> W_init_;
};

} // namespace radcap
