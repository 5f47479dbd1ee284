#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "radcap/decoder.hpp"
#include "radcap/grammar.hpp"

namespace radcap {

template <typename T>
struct Hypothesis {
    grammar::TokenSequence tokens; // emitted tokens, sentinels excluded
    double logp = 0.0;
    Tensor<T> s;
    Tensor<T> coverage;
    std::vector<std::vector<T>> trace;
    bool finished = false;
};

struct BeamConfig {
    int beam_size = 10;
    int max_len = 64;
    bool length_normalize = false; // divide final scores by length; off to match exact NLL
};

template <typename T>
struct BeamResult {
    grammar::TokenSequence tokens;     // sentinels excluded
    double score = 0.0;                // cumulative log-prob incl. the <eos> step when finished
    std::vector<std::vector<T>> trace; // alpha per step (includes the <eos> step)
    bool finished = false;
};

namespace detail {

// Score-descending; ties prefer the lexicographically smaller token
// sequence, which also prefers the shorter one on prefix ties.
inline bool beam_better(double score_a, const grammar::TokenSequence& a, double score_b,
                        const grammar::TokenSequence& b) {
    if (score_a != score_b) return score_a > score_b;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

template <typename T>
void log_softmax_row(const T* logits, int K, std::vector<double>& out) {
    double mx = static_cast<double>(logits[0]);
    for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(logits[k]));
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(static_cast<double>(logits[k]) - mx);
    const double lse = mx + std::log(s);
    out.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) out[static_cast<std::size_t>(k)] = static_cast<double>(logits[k]) - lse;
}

// Replicate a single-image attention cache across B beam rows so one
// batched decoder step serves every live hypothesis.
template <typename T>
AttendCache<T> expand_cache(const AttendCache<T>& c, int B) {
    const int L = c.grid.L(), Dv = c.grid.Dv(), Na = c.ua.dim(2);
    AttendCache<T> out;
    out.grid.H = c.grid.H;
    out.grid.W = c.grid.W;
    out.grid.a = Tensor<T>({B, L, Dv});
    out.ua = Tensor<T>({B, L, Na});
    for (int b = 0; b < B; ++b) {
        std::copy(c.grid.a.values().begin(), c.grid.a.values().end(),
                  out.grid.a.values().begin() + static_cast<std::int64_t>(b) * L * Dv);
        std::copy(c.ua.values().begin(), c.ua.values().end(),
                  out.ua.values().begin() + static_cast<std::int64_t>(b) * L * Na);
    }
    return out;
}

} // namespace detail

// Standard beam search over the decoder. Each round expands every live
// hypothesis across all K tokens, keeps the top beam_size candidates by
// cumulative log-prob, retires those ending in <eos>, and finally returns
// the best finished hypothesis (or the best live one if nothing finished
// within max_len).
template <typename T>
BeamResult<T> beam_decode(const AttnDecoder<T>& dec, const AttendCache<T>& cache, int sos, int eos,
                          const BeamConfig& cfg = {}) {
    if (cache.grid.batch() != 1) throw ShapeError("beam_decode: cache must hold one image");
    if (cfg.beam_size < 1) throw ValueError("beam_decode: beam_size must be >= 1");
    if (cfg.max_len < 1) throw ValueError("beam_decode: max_len must be >= 1");
    const int K = dec.K();

    std::vector<Hypothesis<T>> live(1);
    live[0].s = dec.init_state(nullptr, cache);
    live[0].coverage = dec.zero_coverage(1, cache);
    std::vector<Hypothesis<T>> done;

    std::vector<double> logp_row;
    for (int t = 0; t < cfg.max_len && !live.empty(); ++t) {
        const int B = static_cast<int>(live.size());
        AttendCache<T> batch_cache = detail::expand_cache(cache, B);
        Tensor<T> s_prev({B, dec.dims().n});
        Tensor<T> coverage({B, 1, cache.grid.H, cache.grid.W});
        std::vector<int> y_prev(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            const auto& h = live[static_cast<std::size_t>(b)];
            std::copy(h.s.values().begin(), h.s.values().end(),
                      s_prev.values().begin() + static_cast<std::int64_t>(b) * dec.dims().n);
            std::copy(h.coverage.values().begin(), h.coverage.values().end(),
                      coverage.values().begin() +
                          static_cast<std::int64_t>(b) * cache.grid.H * cache.grid.W);
            y_prev[static_cast<std::size_t>(b)] = h.tokens.empty() ? sos : h.tokens.back();
        }
        auto out = dec.step_batch(nullptr, y_prev, s_prev, batch_cache, coverage);

        struct Cand {
            int hyp;
            int token;
            double logp;
        };
        std::vector<Cand> cands;
        cands.reserve(static_cast<std::size_t>(B) * K);
        for (int b = 0; b < B; ++b) {
            detail::log_softmax_row(out.logits.data() + static_cast<std::int64_t>(b) * K, K, logp_row);
            for (int k = 0; k < K; ++k)
                cands.push_back({b, k, live[static_cast<std::size_t>(b)].logp +
                                           logp_row[static_cast<std::size_t>(k)]});
        }
        const auto better = [&live](const Cand& x, const Cand& y) {
            if (x.logp != y.logp) return x.logp > y.logp;
            const auto& tx = live[static_cast<std::size_t>(x.hyp)].tokens;
            const auto& ty = live[static_cast<std::size_t>(y.hyp)].tokens;
            const bool xy = std::lexicographical_compare(tx.begin(), tx.end(), ty.begin(), ty.end());
            const bool yx = std::lexicographical_compare(ty.begin(), ty.end(), tx.begin(), tx.end());
            if (!xy && !yx) return x.token < y.token; // same prefix: lower token index wins
            return xy;
        };
        const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(cfg.beam_size));
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                          cands.end(), better);
        cands.resize(keep);

        const int L = cache.grid.L();
        std::vector<Hypothesis<T>> next;
        next.reserve(keep);
        for (const Cand& c : cands) {
            const auto& parent = live[static_cast<std::size_t>(c.hyp)];
            Hypothesis<T> h;
            h.tokens = parent.tokens;
            h.logp = c.logp;
            h.trace = parent.trace;
            const T* arow = out.alpha.data() + static_cast<std::int64_t>(c.hyp) * L;
            h.trace.emplace_back(arow, arow + L);
            if (c.token == eos) {
                h.finished = true;
                done.push_back(std::move(h));
                continue;
            }
            h.tokens.push_back(c.token);
            h.s = Tensor<T>({1, dec.dims().n});
            std::copy(out.s.values().begin() + static_cast<std::int64_t>(c.hyp) * dec.dims().n,
                      out.s.values().begin() + static_cast<std::int64_t>(c.hyp + 1) * dec.dims().n,
                      h.s.values().begin());
            h.coverage = Tensor<T>({1, 1, cache.grid.H, cache.grid.W});
            std::copy(out.coverage.values().begin() + static_cast<std::int64_t>(c.hyp) * L,
                      out.coverage.values().begin() + static_cast<std::int64_t>(c.hyp + 1) * L,
                      h.coverage.values().begin());
            next.push_back(std::move(h));
        }
        live = std::move(next);
    }

    const Hypothesis<T>* best = nullptr;
    const auto consider = [&best, &cfg](const Hypothesis<T>& h) {
        auto norm = [&cfg](const Hypothesis<T>& x) {
            if (!cfg.length_normalize) return x.logp;
            const auto steps = x.tokens.size() + (x.finished ? 1 : 0);
            return x.logp / static_cast<double>(std::max<std::size_t>(steps, 1));
        };
        if (!best || detail::beam_better(norm(h), h.tokens, norm(*best), best->tokens)) best = &h;
    };
    if (!done.empty())
        for (const auto& h : done) consider(h);
    else
        for (const auto& h : live) consider(h);
    if (!best) throw ValueError("beam_decode: no hypothesis produced");

    BeamResult<T> r;
    r.tokens = best->tokens;
    r.score = best->logp;
    r.trace = best->trace;
    r.finished = best->finished;
    return r;
}

} // namespace radcap
