#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "radcap/dataset.hpp"
#include "radcap/model.hpp"
#include "radcap/trainer.hpp"
#include "testutil.hpp"

using namespace radcap;
using Catch::Matchers::WithinAbs;

namespace {

data::Dataset toy_dataset(int n, int image_size, Rng& rng) {
    data::Dataset ds;
    ds.image_size = image_size;
    ds.vocab = testutil::tiny_vocab(3);
    for (int i = 0; i < n; ++i) {
        data::Sample s;
        s.image.resize(static_cast<std::size_t>(image_size * image_size));
        for (auto& b : s.image) b = static_cast<std::uint8_t>(rng.uniform_int(256));
        s.caption = {ds.vocab.kFirstRadical + i % 3};
        s.class_id = static_cast<std::uint32_t>(i % 3);
        s.split = data::Split::train;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace

TEST_CASE("word error rate oracle", "[trainer]") {
    using S = grammar::TokenSequence;
    REQUIRE(wer(S{1, 2, 3}, S{1, 2, 3}) == 0.0);
    REQUIRE(wer(S{4, 5, 6}, S{1, 2, 3}) == 1.0);
    REQUIRE_THAT(wer(S{1, 2, 3, 4}, S{1, 2, 3}), WithinAbs(1.0 / 3.0, 1e-15)); // one insertion
    REQUIRE_THAT(wer(S{1, 3}, S{1, 2, 3}), WithinAbs(1.0 / 3.0, 1e-15));       // one deletion
    REQUIRE_THAT(wer(S{1, 9, 3}, S{1, 2, 3}), WithinAbs(1.0 / 3.0, 1e-15));    // one substitution
    REQUIRE(wer(S{}, S{1, 2}) == 1.0);
    REQUIRE(wer(S{2, 1}, S{1, 2}) == 1.0); // transpositions cost two edits
    REQUIRE(wer(S{7}, S{1, 2, 3, 4}) == 1.0);
    REQUIRE_THAT(wer(S{1, 2, 3, 4, 5, 6}, S{1, 2, 3}), WithinAbs(1.0, 1e-15));
    REQUIRE_THROWS_AS(wer(S{1}, S{}), ValueError);
}

TEST_CASE("adadelta matches a hand-stepped scalar recurrence", "[trainer]") {
    Tensor<double> w = Tensor<double>::from({2}, {0.5, -1.0});
    w.set_requires_grad(true);
    std::vector<ParamRef<double>> params{{"w", w, true}};
    const double rho = 0.9, eps = 1e-6;
    Adadelta<double> opt(rho, eps);
    REQUIRE_FALSE(opt.attached());
    opt.attach(params);
    REQUIRE(opt.attached());
    REQUIRE(opt.rho() == rho);
    REQUIRE(opt.eps() == eps);

    const std::vector<std::vector<double>> grads{{0.3, -0.2}, {-0.1, 0.4}, {0.25, 0.05}};
    double eg2[2] = {0, 0}, ed2[2] = {0, 0}, ww[2] = {0.5, -1.0};
    for (const auto& g : grads) {
        for (int j = 0; j < 2; ++j) w.grad()[static_cast<std::size_t>(j)] = g[static_cast<std::size_t>(j)];
        opt.step(params);
        for (int j = 0; j < 2; ++j) {
            const double gj = g[static_cast<std::size_t>(j)];
            eg2[j] = rho * eg2[j] + (1 - rho) * gj * gj;
            const double dx = -std::sqrt(ed2[j] + eps) / std::sqrt(eg2[j] + eps) * gj;
            ed2[j] = rho * ed2[j] + (1 - rho) * dx * dx;
            ww[j] += dx;
            REQUIRE_THAT(w.values()[static_cast<std::size_t>(j)], WithinAbs(ww[j], 1e-15));
        }
    }
    REQUIRE(opt.grad_accum().size() == 1);
    REQUIRE_THAT(opt.grad_accum()[0][0], WithinAbs(eg2[0], 1e-15));
    REQUIRE_THAT(opt.update_accum()[0][1], WithinAbs(ed2[1], 1e-15));

    Tensor<double> extra({1}, 0.0);
    extra.set_requires_grad(true);
    std::vector<ParamRef<double>> wrong{{"w", w, true}, {"x", extra, true}};
    REQUIRE_THROWS_AS(opt.step(wrong), ValueError);
}

TEST_CASE("weight decay touches only decayed parameters", "[trainer]") {
    Tensor<double> a = Tensor<double>::from({2}, {2.0, -3.0});
    Tensor<double> b = Tensor<double>::from({2}, {5.0, 7.0});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    a.grad()[0] = 0.1;
    a.grad()[1] = 0.2;
    b.grad()[0] = 0.3;
    b.grad()[1] = 0.4;
    std::vector<ParamRef<double>> params{{"a", a, true}, {"b", b, false}};

    const double lambda = 0.01;
    const double term = apply_weight_decay(params, lambda);
    REQUIRE_THAT(term, WithinAbs(lambda * (4.0 + 9.0), 1e-15));
    REQUIRE_THAT(a.grad()[0], WithinAbs(0.1 + 2 * lambda * 2.0, 1e-15));
    REQUIRE_THAT(a.grad()[1], WithinAbs(0.2 + 2 * lambda * -3.0, 1e-15));
    REQUIRE(b.grad()[0] == 0.3);
    REQUIRE(b.grad()[1] == 0.4);

    REQUIRE(apply_weight_decay(params, 0.0) == 0.0);
    REQUIRE_THAT(a.grad()[0], WithinAbs(0.1 + 2 * lambda * 2.0, 1e-15));
}

TEST_CASE("gradient clipping rescales to the global norm cap", "[trainer]") {
    Tensor<double> a = Tensor<double>::from({1}, {0.0});
    Tensor<double> b = Tensor<double>::from({1}, {0.0});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    a.grad()[0] = 3.0;
    b.grad()[0] = 4.0;
    std::vector<ParamRef<double>> params{{"a", a, true}, {"b", b, false}};

    SECTION("above the cap") {
        REQUIRE_THAT(clip_gradients(params, 2.5), WithinAbs(5.0, 1e-12));
        REQUIRE_THAT(a.grad()[0], WithinAbs(1.5, 1e-12));
        REQUIRE_THAT(b.grad()[0], WithinAbs(2.0, 1e-12));
        REQUIRE_THAT(global_grad_norm(params), WithinAbs(2.5, 1e-12));
    }
    SECTION("below the cap") {
        REQUIRE_THAT(clip_gradients(params, 10.0), WithinAbs(5.0, 1e-12));
        REQUIRE(a.grad()[0] == 3.0);
        REQUIRE(b.grad()[0] == 4.0);
    }
    SECTION("zero disables clipping") {
        REQUIRE_THAT(clip_gradients(params, 0.0), WithinAbs(5.0, 1e-12));
        REQUIRE(a.grad()[0] == 3.0);
    }
}

TEST_CASE("training runs are reproducible from the seed", "[trainer]") {
    Rng data_rng(7);
    data::Dataset ds = toy_dataset(12, 16, data_rng);

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_epochs = 2;
    cfg.val_fraction = 0.25;
    cfg.seed = 5;
    cfg.quiet = true;
    cfg.max_len = 8;

    auto run = [&](std::vector<double>& flat) {
        Model<double> model(testutil::micro_encoder(), testutil::micro_dims(), ds.vocab, cfg.seed);
        Trainer<double> tr(model, cfg);
        TrainResult res = tr.train(ds);
        for (auto& p : model.params())
            for (double v : p.t.values()) flat.push_back(v);
        return res;
    };
    std::vector<double> w1, w2;
    TrainResult r1 = run(w1);
    TrainResult r2 = run(w2);
    REQUIRE(w1 == w2);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        REQUIRE(r1.history[i].train_loss == r2.history[i].train_loss);
        REQUIRE(r1.history[i].val_wer == r2.history[i].val_wer);
    }
}

TEST_CASE("train result bookkeeping invariants", "[trainer]") {
    Rng data_rng(11);
    data::Dataset ds = toy_dataset(16, 16, data_rng);

    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 4;
    cfg.val_fraction = 0.25;
    cfg.seed = 3;
    cfg.quiet = true;
    cfg.max_len = 8;

    Model<double> model(testutil::micro_encoder(), testutil::micro_dims(), ds.vocab, cfg.seed);
    Trainer<double> tr(model, cfg);
    int hook_calls = 0;
    int hook_best = 0;
    TrainResult res = tr.train(ds, [&](const EpochRow& row, bool best, Model<double>&, Adadelta<double>&) {
        ++hook_calls;
        if (best) ++hook_best;
        REQUIRE(row.epoch == hook_calls);
    });

    REQUIRE(res.epochs_run >= 1);
    REQUIRE(res.epochs_run <= cfg.max_epochs);
    REQUIRE(res.history.size() == static_cast<std::size_t>(res.epochs_run));
    REQUIRE(hook_calls == res.epochs_run);
    REQUIRE(hook_best >= 1);
    // Best epoch is the earliest one attaining the minimum validation WER.
    double min_wer = res.history[0].val_wer;
    int first_arg = 1;
    for (const auto& row : res.history)
        if (row.val_wer < min_wer) {
            min_wer = row.val_wer;
            first_arg = row.epoch;
        }
    REQUIRE(res.best_epoch == first_arg);
    REQUIRE(res.best_wer == min_wer);
    // A perfect validation epoch ends the run.
    for (const auto& row : res.history)
        if (row.val_wer == 0.0 && row.val_acc == 1.0) REQUIRE(row.epoch == res.epochs_run);

    REQUIRE_THROWS_AS(tr.train(data::Dataset{}), ValueError);
}

TEST_CASE("repeated steps on one batch shrink the loss", "[trainer]") {
    Rng data_rng(13);
    data::Dataset ds = toy_dataset(2, 16, data_rng);

    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.quiet = true;
    cfg.seed = 9;

    Model<double> model(testutil::micro_encoder(), testutil::micro_dims(), ds.vocab, cfg.seed);
    Trainer<double> tr(model, cfg);

    Tensor<double> images = data::images_to_tensor<double>(ds, {0, 1});
    std::vector<grammar::TokenSequence> targets{data::target_of(ds, 0), data::target_of(ds, 1)};
    Rng drop(1);
    const double first = tr.step(images, targets, drop);
    double last = first;
    for (int i = 0; i < 299; ++i) last = tr.step(images, targets, drop);
    REQUIRE(last < 0.5 * first);
}
