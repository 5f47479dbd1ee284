#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "radcap/radcap.hpp"

namespace testutil {

using radcap::Rng;
using radcap::Shape;
using radcap::Tape;
using radcap::Tensor;

inline Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = true) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    t.set_requires_grad(requires_grad);
    return t;
}

// Same, but with magnitudes bounded away from zero (for kinked ops).
inline Tensor<double> rand_tensor_away_from_zero(Shape shape, Rng& rng, double margin = 0.2,
                                                 bool requires_grad = true) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) {
        const double u = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -u : u;
    }
    t.set_requires_grad(requires_grad);
    return t;
}

struct FdReport {
    double max_rel = 0.0;
    double max_abs = 0.0;
    std::string worst;
    int coords_checked = 0;
};

// Central-difference gradient check. `f` must rebuild the graph from the
// current values of `inputs` on every call and return a scalar tensor.
// When an input has more than `budget` coordinates, a deterministic sample
// of that size is taken.
inline FdReport fd_check(const std::function<Tensor<double>(Tape<double>*)>& f,
                         std::vector<std::pair<std::string, Tensor<double>>> inputs,
                         double eps = 1e-5, int budget = 256) {
    for (auto& [name, t] : inputs) t.zero_grad();
    Tape<double> tape;
    Tensor<double> loss = f(&tape);
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& [name, t] : inputs) analytic.push_back(t.grad());

    FdReport rep;
    Rng pick(0x9e3779b97f4a7c15ull);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor<double> t = inputs[k].second;
        const int n = t.numel();
        std::vector<int> coords;
        if (n <= budget) {
            coords.resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            for (int i = 0; i < budget; ++i) coords.push_back(pick.uniform_int(n));
        }
        for (int c : coords) {
            double& slot = t.data()[c];
            const double keep = slot;
            const double ana = analytic[k][static_cast<std::size_t>(c)];
            auto probe = [&](double e) {
                slot = keep + e;
                const double up = f(nullptr).item();
                slot = keep - e;
                const double dn = f(nullptr).item();
                slot = keep;
                const double numeric = (up - dn) / (2.0 * e);
                const double abs_err = std::abs(numeric - ana);
                // Round-off in the two evaluations floors the central
                // difference near 1e-10 absolute; discrepancies under 1e-8
                // carry no signal regardless of the gradient's size, while a
                // dropped or doubled term shows up orders of magnitude above.
                const double rel =
                    abs_err < 1e-8 ? 0.0
                                   : abs_err / std::max(std::abs(numeric), std::abs(ana));
                return std::pair<double, double>(rel, abs_err);
            };
            auto [rel, abs_err] = probe(eps);
            // A kink (relu, maxpool switch) inside the probe window inflates
            // the estimate at one specific step size but not at others; a
            // wrong gradient stays wrong at every step size.
            if (rel > 5e-5) {
                for (double e : {eps * 0.125, eps * 8.0}) {
                    auto [r2, a2] = probe(e);
                    if (r2 < rel) {
                        rel = r2;
                        abs_err = a2;
                    }
                }
            }
            ++rep.coords_checked;
            if (abs_err > rep.max_abs) rep.max_abs = abs_err;
            if (rel > rep.max_rel) {
                rep.max_rel = rel;
                rep.worst = inputs[k].first + "[" + std::to_string(c) + "]: analytic " +
                            std::to_string(ana) + ", rel err " + std::to_string(rel);
            }
        }
    }
    return rep;
}

// Scalar contraction: dot the output against a fixed random weight so any
// op can be checked through a scalar loss.
inline Tensor<double> contract(Tape<double>* tape, const Tensor<double>& out,
                               const Tensor<double>& weights) {
    return radcap::ops::sum(tape, radcap::ops::mul(tape, out, weights));
}

inline Tensor<double> fixed_weights(const Shape& shape, std::uint64_t salt = 17) {
    Rng rng(salt);
    Tensor<double> w(shape);
    for (auto& v : w.values()) v = rng.uniform(-1.0, 1.0);
    return w; // requires_grad stays false
}

// Tiny grammar vocabulary over `n` radicals named r0..r{n-1}.
inline radcap::grammar::Vocabulary tiny_vocab(int n) {
    std::vector<std::string> radicals;
    for (int i = 0; i < n; ++i) radicals.push_back("r" + std::to_string(i));
    return radcap::grammar::Vocabulary::build(radicals);
}

// Minimal encoder configuration: one block, two layers, small stem, for
// fast exact tests. 16x16 input -> 4x4 grid.
inline radcap::EncoderConfig micro_encoder() {
    radcap::EncoderConfig c;
    c.growth_rate = 4;
    c.block_depth = 2;
    c.num_blocks = 1;
    c.stem_filters = 6;
    c.stem_kernel = 3;
    c.stem_stride = 2;
    c.stem_pad = 1;
    c.stem_pool = 2;
    c.dropout_rate = 0.0;
    c.input_size = 16;
    return c;
}

inline radcap::DecoderDims micro_dims() {
    radcap::DecoderDims d;
    d.m = 8;
    d.n = 8;
    d.n_att = 8;
    d.q = 4;
    return d;
}

} // namespace testutil
