#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <vector>

#include "radcap/config.hpp"
#include "radcap/dataset.hpp"
#include "radcap/encoder.hpp"
#include "radcap/error.hpp"
#include "radcap/ops.hpp"
#include "radcap/params.hpp"
#include "radcap/rng.hpp"
#include "radcap/trainer.hpp"

namespace radcap {

// Whole-character softmax classifier: the same dense encoder, mean-pooled,
// with a linear head over the SEEN class list. Its label space has no slot
// for an unseen class, so unseen accuracy is zero by construction; it
// exists to contrast with the captioning model's compositional route.
template <typename T>
class WholeCharBaseline {
public:
    WholeCharBaseline() = default;

    WholeCharBaseline(const EncoderConfig& cfg, std::vector<int> class_ids, std::uint64_t seed)
        : class_ids_(std::move(class_ids)) {
        if (class_ids_.empty()) throw ValueError("baseline: empty class list");
        Rng rng = Rng::substream(seed, stream::init);
        encoder_ = DenseEncoder<T>(cfg, rng);
        const int dv = cfg.out_channels();
        const int c = static_cast<int>(class_ids_.size());
        head_w_ = uniform_param<T>({c, dv}, dv, rng);
        head_b_ = const_param<T>({c}, T(0));
        for (int i = 0; i < c; ++i)
            label_of_[class_ids_[static_cast<std::size_t>(i)]] = i;
    }

    const std::vector<int>& class_ids() const { return class_ids_; }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        encoder_.collect_params(out);
        out.push_back({"base.head.w", head_w_, true});
        out.push_back({"base.head.b", head_b_, false});
        return out;
    }

    Tensor<T> logits(Tape<T>* tape, const Tensor<T>& images, bool training, Rng& rng) {
        AnnotationGrid<T> grid = encoder_.encode(tape, images, training, rng);
        Tensor<T> pooled = ops::mean_rows(tape, grid.a); // [B, Dv]
        return ops::linear(tape, pooled, head_w_, &head_b_);
    }

    // Mean NLL over the batch; labels are row indices into class_ids_.
    Tensor<T> loss(Tape<T>* tape, const Tensor<T>& images, const std::vector<int>& labels,
                   bool training, Rng& rng) {
        Tensor<T> lg = logits(tape, images, training, rng);
        Tensor<T> nll = ops::nll_rows(tape, lg, labels);
        Tensor<T> total = ops::sum(tape, nll);
        return ops::affine(tape, total, T(1) / static_cast<T>(labels.size()), T(0));
    }

    // Predicted class ids (from the seen list), eval mode.
    std::vector<int> predict(const Tensor<T>& images) {
        Rng dummy(0);
        Tensor<T> lg = logits(nullptr, images, false, dummy);
        const int b = lg.dim(0), c = lg.dim(1);
        std::vector<int> out(static_cast<std::size_t>(b));
        const T* v = lg.data();
        for (int i = 0; i < b; ++i) {
            int arg = 0;
            for (int j = 1; j < c; ++j)
                if (v[i * c + j] > v[i * c + arg]) arg = j;
            out[static_cast<std::size_t>(i)] = class_ids_[static_cast<std::size_t>(arg)];
        }
        return out;
    }

    // Classification training on the train split; mirrors the captioning
    // trainer's optimizer, decay, and clipping.
    void fit(const data::Dataset& ds, const TrainConfig& cfg) {
        std::vector<int> train_idx = ds.indices_of(data::Split::train);
        if (train_idx.empty()) throw ValueError("baseline: empty train split");
        auto params = this->params();
        Adadelta<T> opt(cfg.rho, cfg.eps);
        opt.attach(params);
        Rng shuffle_rng = Rng::substream(cfg.seed, stream::shuffle).fork(0x62617365);
        Rng dropout_rng = Rng::substream(cfg.seed, stream::dropout).fork(0x62617365);
        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            shuffle_rng.shuffle(train_idx);
            double loss_sum = 0.0;
            int batches = 0;
            for (std::size_t off = 0; off < train_idx.size(); off += cfg.batch_size) {
                const std::size_t end = std::min(off + cfg.batch_size, train_idx.size());
                std::vector<int> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(off),
                                       train_idx.begin() + static_cast<std::ptrdiff_t>(end));
                Tensor<T> images = data::images_to_tensor<T>(ds, batch);
                std::vector<int> labels;
                labels.reserve(batch.size());
                for (int i : batch) {
                    auto it = label_of_.find(static_cast<int>(ds.samples[static_cast<std::size_t>(i)].class_id));
                    if (it == label_of_.end()) throw ValueError("baseline: train sample outside class list");
                    labels.push_back(it->second);
                }
                for (auto& p : params) p.t.zero_grad();
                Tape<T> tape;
                Tensor<T> l = loss(&tape, images, labels, true, dropout_rng);
                const double data_loss = static_cast<double>(l.item());
                if (!std::isfinite(data_loss)) throw ValueError("baseline: non-finite loss");
                tape.backward(l);
                const double decay_term = apply_weight_decay(params, cfg.weight_decay);
                clip_gradients(params, cfg.clip_norm);
                opt.step(params);
                loss_sum += data_loss + decay_term;
                ++batches;
            }
            if (!cfg.quiet)
                std::printf("baseline epoch %3d  loss %.4f\n", epoch, loss_sum / std::max(batches, 1));
        }
    }

    // Class-id accuracy over a split (exact caption match reduces to this
    // because distinct classes carry distinct captions).
    double accuracy(const data::Dataset& ds, data::Split split) {
        const auto idx = ds.indices_of(split);
        if (idx.empty()) throw ValueError("baseline: empty split");
        int correct = 0;
        for (int i : idx) {
            Tensor<T> img = data::images_to_tensor<T>(ds, {i});
            const int pred = predict(img)[0];
            if (pred == static_cast<int>(ds.samples[static_cast<std::size_t>(i)].class_id)) ++correct;
        }
        return correct / static_cast<double>(idx.size());
    }

private:
    DenseEncoder<T> encoder_;
    Tensor<T> head_w_, head_b_;
    std::vector<int> class_ids_;
    std::map<int, int> label_of_;
};

} // namespace radcap
