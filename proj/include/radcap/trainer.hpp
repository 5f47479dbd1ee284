#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "radcap/beam.hpp"
#include "radcap/config.hpp"
#include "radcap/dataset.hpp"
#include "radcap/model.hpp"
#include "radcap/params.hpp"

namespace radcap {

// Token-level Levenshtein distance divided by reference length.
inline double wer(const grammar::TokenSequence& hyp, const grammar::TokenSequence& ref) {
    if (ref.empty()) throw ValueError("wer: empty reference");
    const std::size_t n = hyp.size(), m = ref.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(m);
}

// Zeiler's adadelta: accumulate E[g^2], scale the step by the ratio of the
// RMS of past updates to the RMS of past gradients. No learning rate.
template <typename T>
class Adadelta {
public:
    Adadelta() = default;
    Adadelta(double rho, double eps) : rho_(rho), eps_(eps) {}

    void attach(const std::vector<ParamRef<T>>& params) {
        eg2_.clear();
        ed2_.clear();
        for (const auto& p : params) {
            eg2_.emplace_back(p.t.numel(), T(0));
            ed2_.emplace_back(p.t.numel(), T(0));
        }
    }

    bool attached() const { return !eg2_.empty(); }
    double rho() const { return rho_; }
    double eps() const { return eps_; }

    void step(std::vector<ParamRef<T>>& params) {
        if (eg2_.size() != params.size()) throw ValueError("adadelta: not attached to these params");
        const T rho = static_cast<T>(rho_);
        const T eps = static_cast<T>(eps_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i].t.values();
            const auto& g = params[i].t.grad();
            auto& eg2 = eg2_[i];
            auto& ed2 = ed2_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                eg2[j] = rho * eg2[j] + (T(1) - rho) * g[j] * g[j];
                const T dx = -std::sqrt(ed2[j] + eps) / std::sqrt(eg2[j] + eps) * g[j];
                ed2[j] = rho * ed2[j] + (T(1) - rho) * dx * dx;
                w[j] += dx;
            }
        }
    }

    std::vector<std::vector<T>>& grad_accum() { return eg2_; }
    std::vector<std::vector<T>>& update_accum() { return ed2_; }

private:
    double rho_ = 0.95;
    double eps_ = 1e-8;
    std::vector<std::vector<T>> eg2_;
    std::vector<std::vector<T>> ed2_;
};

// Coupled L2: adds 2*lambda*w to the gradient of every decayed parameter
// and returns the lambda*sum(w^2) term for loss reporting.
template <typename T>
double apply_weight_decay(std::vector<ParamRef<T>>& params, double lambda) {
    if (lambda == 0.0) return 0.0;
    double term = 0.0;
    for (auto& p : params) {
        if (!p.decay) continue;
        auto& w = p.t.values();
        auto& g = p.t.grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
            g[j] += static_cast<T>(2.0 * lambda) * w[j];
            term += lambda * static_cast<double>(w[j]) * static_cast<double>(w[j]);
        }
    }
    return term;
}

// Scales all gradients so the global L2 norm is at most clip_norm.
// Returns the pre-clip norm.
template <typename T>
double clip_gradients(std::vector<ParamRef<T>>& params, double clip_norm) {
    const double norm = global_grad_norm(params);
    if (clip_norm > 0.0 && norm > clip_norm) {
        const T scale = static_cast<T>(clip_norm / norm);
        for (auto& p : params)
            for (auto& g : p.t.grad()) g *= scale;
    }
    return norm;
}

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_wer = 0.0;
    double val_acc = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRow> history;
    int best_epoch = -1;
    double best_wer = std::numeric_limits<double>::infinity();
    int epochs_run = 0;
};

// Epoch callback: invoked after validation with the row and a flag telling
// whether this epoch produced a new best model (by validation WER, ties to
// the earlier epoch). Used by the CLI to checkpoint best-so-far.
template <typename T>
using EpochHook = std::function<void(const EpochRow&, bool, Model<T>&, Adadelta<T>&)>;

template <typename T>
class Trainer {
public:
    Trainer(Model<T>& model, TrainConfig cfg) : model_(model), cfg_(cfg), opt_(cfg.rho, cfg.eps) {
        cfg.validate();
        params_ = model.params();
        opt_.attach(params_);
    }

    Adadelta<T>& optimizer() { return opt_; }

    // One optimization step on an explicit batch; returns the reported
    // loss (data NLL + decay term). Exposed for the overfit/oracle tests.
    double step(const Tensor<T>& images, const std::vector<grammar::TokenSequence>& targets,
                Rng& dropout_rng) {
        model_.zero_grads();
        Tape<T> tape;
        Tensor<T> loss = model_.batch_loss(&tape, images, targets, true, dropout_rng);
        const double data_loss = static_cast<double>(loss.item());
        if (!std::isfinite(data_loss)) throw ValueError("trainer: non-finite loss");
        tape.backward(loss);
        const double decay_term = apply_weight_decay(params_, cfg_.weight_decay);
        clip_gradients(params_, cfg_.clip_norm);
        opt_.step(params_);
        return data_loss + decay_term;
    }

    // Greedy (beam-1) decode of one dataset sample, eval mode.
    grammar::TokenSequence greedy_decode(const data::Dataset& ds, int sample_idx) {
        Tensor<T> img = data::images_to_tensor<T>(ds, {sample_idx});
        AttendCache<T> cache = model_.encode_eval(img);
        BeamConfig bc;
        bc.beam_size = 1;
        bc.max_len = cfg_.max_len;
        return beam_decode(model_.decoder(), cache, ds.vocab.sos(), ds.vocab.eos(), bc).tokens;
    }

    TrainResult train(const data::Dataset& ds, const EpochHook<T>& hook = {}) {
        std::vector<int> train_idx = ds.indices_of(data::Split::train);
        if (train_idx.empty()) throw ValueError("trainer: empty dataset");

        // Carve the validation set off the end of a seed-shuffled index list.
        Rng split_rng = Rng::substream(cfg_.seed, stream::shuffle).fork(0x76616c);
        split_rng.shuffle(train_idx);
        std::size_t n_val = static_cast<std::size_t>(cfg_.val_fraction * train_idx.size());
        if (cfg_.val_fraction > 0.0 && n_val == 0 && train_idx.size() > 1) n_val = 1;
        std::vector<int> val_idx(train_idx.end() - static_cast<std::ptrdiff_t>(n_val), train_idx.end());
        train_idx.resize(train_idx.size() - n_val);
        if (train_idx.empty()) throw ValueError("trainer: validation split leaves no training data");

        Rng shuffle_rng = Rng::substream(cfg_.seed, stream::shuffle);
        Rng dropout_rng = Rng::substream(cfg_.seed, stream::dropout);
        TrainResult result;
        const auto t0 = std::chrono::steady_clock::now();
        int since_best = 0;
        for (int epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
            shuffle_rng.shuffle(train_idx);
            double loss_sum = 0.0;
            int batches = 0;
            for (std::size_t off = 0; off < train_idx.size(); off += cfg_.batch_size) {
                const std::size_t end = std::min(off + cfg_.batch_size, train_idx.size());
                std::vector<int> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(off),
                                       train_idx.begin() + static_cast<std::ptrdiff_t>(end));
                Tensor<T> images = data::images_to_tensor<T>(ds, batch);
                std::vector<grammar::TokenSequence> targets;
                targets.reserve(batch.size());
                for (int i : batch) targets.push_back(data::target_of(ds, i));
                loss_sum += step(images, targets, dropout_rng);
                ++batches;
            }

            EpochRow row;
            row.epoch = epoch;
            row.train_loss = loss_sum / std::max(batches, 1);
            double wer_sum = 0.0;
            int correct = 0;
            for (int i : val_idx) {
                const grammar::TokenSequence hyp = greedy_decode(ds, i);
                const auto& ref = ds.samples[static_cast<std::size_t>(i)].caption;
                wer_sum += wer(hyp, ref);
                if (hyp == ref) ++correct;
            }
            row.val_wer = val_idx.empty() ? 0.0 : wer_sum / static_cast<double>(val_idx.size());
            row.val_acc = val_idx.empty() ? 0.0 : static_cast<double>(correct) / val_idx.size();
            row.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            const bool best = row.val_wer < result.best_wer;
            if (best) {
                result.best_wer = row.val_wer;
                result.best_epoch = epoch;
                since_best = 0;
            } else {
                ++since_best;
            }
            result.history.push_back(row);
            result.epochs_run = epoch;
            if (!cfg_.quiet)
                std::printf("epoch %3d  loss %.4f  val_wer %.4f  val_acc %.4f  %.1fs%s\n", epoch,
                            row.train_loss, row.val_wer, row.val_acc, row.wall_seconds,
                            best ? "  *" : "");
            if (hook) hook(row, best, model_, opt_);
            if (cfg_.patience > 0 && since_best >= cfg_.patience) break;
            // A perfect validation epoch can never be displaced: WER ties
            // resolve to the earlier epoch, so later epochs are moot.
            if (!val_idx.empty() && row.val_wer == 0.0 && row.val_acc == 1.0) break;
        }
        return result;
    }

private:
    Model<T>& model_;
    TrainConfig cfg_;
    Adadelta<T> opt_;
    std::vector<ParamRef<T>> params_;
};

} // namespace radcap
