#include <catch2/catch_amalgamated.hpp>

#include "radcap/metrics.hpp"
#include "radcap/model.hpp"
#include "radcap/trainer.hpp"
#include "testutil.hpp"

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

using namespace radcap;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using Catch::Matchers::WithinAbs;
using metrics::EvalReport;
using metrics::kMalformed;

namespace {

// Hand-built dataset of single-radical and compound captions over random
// images. Class ids are assigned per sample; the classes table stays empty,
// which validate() permits.
data::Dataset mixed_dataset(int image_size, Rng& rng) {
    data::Dataset ds;
    ds.image_size = image_size;
    ds.vocab = testutil::tiny_vocab(3);
    const int r0 = ds.vocab.kFirstRadical;
    const std::vector<grammar::TokenSequence> caps = {
        {r0},
        {r0 + 1},
        {ds.vocab.index_of("a"), r0, r0 + 1},
    };
    for (int i = 0; i < 9; ++i) {
        data::Sample s;
        s.image.resize(static_cast<std::size_t>(image_size * image_size));
        for (auto& b : s.image) b = static_cast<std::uint8_t>(rng.uniform_int(256));
        s.caption = caps[static_cast<std::size_t>(i % 3)];
        s.class_id = static_cast<std::uint32_t>(i % 3);
        s.split = data::Split::train;
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

// Two classes with grossly different brightness so a tiny model can
// memorize the mapping quickly.
data::Dataset separable_dataset(int image_size, Rng& rng) {
    data::Dataset ds;
    ds.image_size = image_size;
    ds.vocab = testutil::tiny_vocab(3);
    for (int i = 0; i < 4; ++i) {
        data::Sample s;
        s.image.resize(static_cast<std::size_t>(image_size * image_size));
        const int base = (i % 2 == 0) ? 0 : 195;
        for (auto& b : s.image) b = static_cast<std::uint8_t>(base + rng.uniform_int(60));
        s.caption = {ds.vocab.kFirstRadical + i % 2};
        s.class_id = static_cast<std::uint32_t>(i % 2);
        s.split = data::Split::train;
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

} // namespace

TEST_CASE("root substitution rates follow the counting definition", "[metrics]") {
    EvalReport rep;
    const int a = 5, b = 7;
    rep.root_total[a] = 100;
    rep.root_pairs[{a, b}] = 5;
    REQUIRE(rep.p_err(a, b) == 5.0 / 100.0);
    REQUIRE(rep.p_err(a, b) == 0.05);

    SECTION("absent rows and pairs read as zero") {
        REQUIRE(rep.p_err(a, a) == 0.0);
        REQUIRE(rep.p_err(b, a) == 0.0);
        REQUIRE(rep.p_err(42, 43) == 0.0);
    }
    SECTION("the malformed column is an ordinary confusion target") {
        rep.root_pairs[{a, kMalformed}] = 20;
        REQUIRE(rep.p_err(a, kMalformed) == 0.20);
    }
    SECTION("diagonal entries are counted like any pair") {
        rep.root_pairs[{a, a}] = 75;
        REQUIRE(rep.p_err(a, a) == 0.75);
    }
    SECTION("zero-count rows read as zero") {
        rep.root_total[9] = 0;
        rep.root_pairs[{9, 1}] = 0;
        REQUIRE(rep.p_err(9, 1) == 0.0);
    }
}

TEST_CASE("bare-leaf pair rates are symmetric two-way counts", "[metrics]") {
    EvalReport rep;
    const int e = 2, g = 3;
    rep.leaf_total[e] = 40;
    rep.leaf_total[g] = 60;
    rep.leaf_pairs[{e, g}] = 3;
    rep.leaf_pairs[{g, e}] = 3;
    REQUIRE(rep.r_err(e, g) == 6.0 / 100.0);
    REQUIRE(rep.r_err(e, g) == 0.06);
    REQUIRE(rep.r_err(g, e) == rep.r_err(e, g));

    SECTION("one-sided confusions still pool both totals") {
        rep.leaf_pairs[{g, e}] = 0;
        REQUIRE(rep.r_err(e, g) == 3.0 / 100.0);
    }
    SECTION("absent pairs read as zero") {
        REQUIRE(rep.r_err(9, 11) == 0.0);
        REQUIRE(rep.r_err(e, e) == 0.0);
    }
}

TEST_CASE("per-class accuracy reads injected counts", "[metrics]") {
    EvalReport rep;
    rep.class_total[3] = 4;
    rep.class_correct[3] = 3;
    REQUIRE(rep.class_accuracy(3) == 0.75);
    REQUIRE(rep.class_accuracy(4) == 0.0);
    rep.class_total[5] = 2; // no correct entry
    REQUIRE(rep.class_accuracy(5) == 0.0);
}

TEST_CASE("relative CER reduction", "[metrics]") {
    const double got = metrics::relative_cer_reduction(0.9590, 0.9666);
    REQUIRE_THAT(got, WithinAbs(0.1854, 1e-4));
    REQUIRE(got == (0.9666 - 0.9590) / (1.0 - 0.9590));

    REQUIRE(metrics::relative_cer_reduction(0.42, 0.42) == 0.0);
    REQUIRE(metrics::relative_cer_reduction(0.5, 1.0) == 1.0);
    REQUIRE(metrics::relative_cer_reduction(0.5, 0.25) == -0.5); // regression is negative
    REQUIRE(metrics::relative_cer_reduction(0.0, 0.0) == 0.0);

    REQUIRE_THROWS_MATCHES(metrics::relative_cer_reduction(1.0, 0.5), ValueError,
                           MessageMatches(ContainsSubstring("perfect baseline")));
    REQUIRE_THROWS_MATCHES(metrics::relative_cer_reduction(-0.1, 0.5), ValueError,
                           MessageMatches(ContainsSubstring("[0,1]")));
    REQUIRE_THROWS_MATCHES(metrics::relative_cer_reduction(0.5, 1.2), ValueError,
                           MessageMatches(ContainsSubstring("[0,1]")));
}

TEST_CASE("sweep verdicts", "[metrics]") {
    using metrics::SweepPoint;

    SECTION("strictly increasing accuracy is monotone-increasing") {
        auto rep = metrics::sweep_report({{500, 0.0170},
                                          {1000, 0.0844},
                                          {1500, 0.1471},
                                          {2000, 0.1951},
                                          {2755, 0.3068}});
        REQUIRE(rep.verdict == "monotone-increasing");
        REQUIRE(rep.inversions == 0);
        REQUIRE(rep.worst_inversion == 0.0);
        REQUIRE(rep.points.size() == 5);
    }
    SECTION("constant accuracy is flat") {
        auto rep = metrics::sweep_report({{100, 0.25}, {200, 0.25}, {300, 0.25}});
        REQUIRE(rep.verdict == "flat");
        REQUIRE(rep.inversions == 0);
    }
    SECTION("a tie inside an increasing run downgrades to non-decreasing") {
        auto rep = metrics::sweep_report({{100, 0.1}, {200, 0.1}, {300, 0.2}});
        REQUIRE(rep.verdict == "non-decreasing");
        REQUIRE(rep.inversions == 0);
    }
    SECTION("a drop is an inversion with its magnitude reported") {
        auto rep = metrics::sweep_report({{100, 0.30}, {200, 0.28}, {300, 0.31}});
        REQUIRE(rep.verdict == "non-monotone (1 inversion(s), worst 0.0200)");
        REQUIRE(rep.inversions == 1);
        REQUIRE_THAT(rep.worst_inversion, WithinAbs(0.02, 1e-15));
    }
    SECTION("multiple drops report the worst one") {
        auto rep = metrics::sweep_report({{1, 0.5}, {2, 0.4}, {3, 0.45}, {4, 0.2}});
        REQUIRE(rep.inversions == 2);
        REQUIRE(rep.worst_inversion == 0.25);
        REQUIRE(rep.verdict == "non-monotone (2 inversion(s), worst 0.2500)");
    }
    SECTION("points are sorted by training-class count first") {
        auto rep = metrics::sweep_report({{300, 0.3}, {100, 0.1}, {200, 0.2}});
        REQUIRE(rep.points[0].train_classes == 100);
        REQUIRE(rep.points[1].train_classes == 200);
        REQUIRE(rep.points[2].train_classes == 300);
        REQUIRE(rep.verdict == "monotone-increasing");
    }
    SECTION("fewer than two points is an error") {
        REQUIRE_THROWS_MATCHES(metrics::sweep_report({}), ValueError,
                               MessageMatches(ContainsSubstring("at least 2")));
        REQUIRE_THROWS_MATCHES(metrics::sweep_report({{100, 0.5}}), ValueError,
                               MessageMatches(ContainsSubstring("at least 2")));
    }
    SECTION("table renders one CSV row per point plus the verdict") {
        auto rep = metrics::sweep_report({{50, 0.125}, {150, 0.5}});
        REQUIRE(rep.table() ==
                "train_classes,unseen_accuracy\n"
                "50,0.1250\n"
                "150,0.5000\n"
                "verdict,monotone-increasing\n");
    }
}

TEST_CASE("evaluate matches an independent per-sample recount", "[metrics]") {
    Rng data_rng(77);
    data::Dataset ds = mixed_dataset(16, data_rng);
    Model<double> model(testutil::micro_encoder(), testutil::micro_dims(), ds.vocab, 5);

    BeamConfig cfg;
    cfg.beam_size = 3;
    cfg.max_len = 8;
    EvalReport rep = metrics::evaluate(model, ds, data::Split::train, cfg);

    // Recount everything sample by sample through the same public entry
    // points evaluate() composes.
    const auto& vocab = model.vocab();
    EvalReport mine;
    double wer_sum = 0.0;
    int mismatched = 0;
    for (int i : ds.indices_of(data::Split::train)) {
        const auto& s = ds.samples[static_cast<std::size_t>(i)];
        auto cache = model.encode_eval(data::images_to_tensor<double>(ds, {i}));
        auto res = beam_decode(model.decoder(), cache, vocab.sos(), vocab.eos(), cfg);

        const bool exact = res.tokens == s.caption;
        wer_sum += wer(res.tokens, s.caption);
        if (wer(res.tokens, s.caption) > 0.0 || res.tokens.size() != s.caption.size()) ++mismatched;
        ++mine.evaluated;
        mine.exact_matches += exact ? 1 : 0;
        ++mine.class_total[static_cast<int>(s.class_id)];
        if (exact) ++mine.class_correct[static_cast<int>(s.class_id)];
        ++mine.root_total[s.caption.front()];
        const bool ok = grammar::validate_sequence(res.tokens, vocab).well_formed;
        ++mine.root_pairs[{s.caption.front(), ok ? res.tokens.front() : kMalformed}];
        if (s.caption.size() == 1 && vocab.is_radical(s.caption[0])) {
            ++mine.leaf_total[s.caption[0]];
            if (res.tokens.size() == 1 && vocab.is_radical(res.tokens[0]))
                ++mine.leaf_pairs[{s.caption[0], res.tokens[0]}];
        }
    }

    REQUIRE(rep.evaluated == 9);
    REQUIRE(rep.evaluated == mine.evaluated);
    REQUIRE(rep.exact_matches == mine.exact_matches);
    REQUIRE(rep.exact_match == mine.exact_matches / 9.0);
    REQUIRE(rep.mean_wer == wer_sum / 9.0);
    REQUIRE(rep.class_total == mine.class_total);
    REQUIRE(rep.class_correct == mine.class_correct);
    REQUIRE(rep.root_total == mine.root_total);
    REQUIRE(rep.root_pairs == mine.root_pairs);
    REQUIRE(rep.leaf_total == mine.leaf_total);
    REQUIRE(rep.leaf_pairs == mine.leaf_pairs);

    // Exact-match accuracy is one minus the fraction of samples whose
    // prediction has positive WER or a length mismatch.
    REQUIRE(rep.exact_match == 1.0 - mismatched / 9.0);

    SECTION("confusion rows sum to their totals") {
        for (const auto& [a, n] : rep.root_total) {
            int row = 0;
            for (const auto& [key, c] : rep.root_pairs)
                if (key.first == a) row += c;
            REQUIRE(row == n);
        }
        int total = 0;
        for (const auto& [id, n] : rep.class_total) total += n;
        REQUIRE(total == rep.evaluated);
    }
    SECTION("evaluation is deterministic") {
        EvalReport again = metrics::evaluate(model, ds, data::Split::train, cfg);
        REQUIRE(again.exact_match == rep.exact_match);
        REQUIRE(again.mean_wer == rep.mean_wer);
        REQUIRE(again.root_pairs == rep.root_pairs);
        REQUIRE(again.leaf_pairs == rep.leaf_pairs);
    }
    SECTION("an empty split is an error") {
        REQUIRE_THROWS_MATCHES(metrics::evaluate(model, ds, data::Split::test_unseen, cfg),
                               ValueError,
                               MessageMatches(ContainsSubstring("no samples in split test_unseen")));
    }
    SECTION("a vocabulary mismatch is an error") {
        Model<double> other(testutil::micro_encoder(), testutil::micro_dims(),
                            testutil::tiny_vocab(4), 5);
        REQUIRE_THROWS_MATCHES(metrics::evaluate(other, ds, data::Split::train, cfg), ValueError,
                               MessageMatches(ContainsSubstring("vocabularies differ")));
    }
}

TEST_CASE("a memorized model evaluates perfectly", "[metrics]") {
    Rng data_rng(13);
    data::Dataset ds = separable_dataset(16, data_rng);
    const int r0 = ds.vocab.kFirstRadical;

    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.quiet = true;
    cfg.seed = 9;
    Model<double> model(testutil::micro_encoder(), testutil::micro_dims(), ds.vocab, cfg.seed);
    Trainer<double> tr(model, cfg);

    Tensor<double> images = data::images_to_tensor<double>(ds, {0, 1, 2, 3});
    std::vector<grammar::TokenSequence> targets;
    for (int i = 0; i < 4; ++i) targets.push_back(data::target_of(ds, i));
    Rng drop(1);
    double loss = 0.0;
    for (int i = 0; i < 800; ++i) {
        loss = tr.step(images, targets, drop);
        if (loss < 0.02) break;
    }
    REQUIRE(loss < 0.05);

    BeamConfig beam;
    beam.beam_size = 2;
    beam.max_len = 8;
    EvalReport rep = metrics::evaluate(model, ds, data::Split::train, beam);
    REQUIRE(rep.evaluated == 4);
    REQUIRE(rep.exact_matches == 4);
    REQUIRE(rep.exact_match == 1.0);
    REQUIRE(rep.mean_wer == 0.0);
    REQUIRE(rep.class_accuracy(0) == 1.0);
    REQUIRE(rep.class_accuracy(1) == 1.0);
    REQUIRE(rep.p_err(r0, r0) == 1.0);
    REQUIRE(rep.p_err(r0, r0 + 1) == 0.0);
    REQUIRE(rep.p_err(r0, kMalformed) == 0.0);
    REQUIRE(rep.leaf_total.at(r0) == 2);
    REQUIRE(rep.leaf_pairs.at({r0, r0}) == 2);
    REQUIRE(rep.r_err(r0, r0 + 1) == 0.0);

    const std::string text = metrics::format_report(rep, ds.vocab);
    REQUIRE_THAT(text, ContainsSubstring("samples: 4"));
    REQUIRE_THAT(text, ContainsSubstring("exact-match accuracy: 1.0000"));
    REQUIRE_THAT(text, ContainsSubstring("mean WER: 0.0000"));
}

TEST_CASE("format_report renders substitution and pair lines", "[metrics]") {
    grammar::Vocabulary vocab = testutil::tiny_vocab(3);
    const int r0 = vocab.kFirstRadical;
    EvalReport rep;
    rep.evaluated = 100;
    rep.exact_match = 0.93;
    rep.mean_wer = 0.07;
    rep.root_total[r0] = 100;
    rep.root_pairs[{r0, r0}] = 93;
    rep.root_pairs[{r0, r0 + 1}] = 5;
    rep.root_pairs[{r0, kMalformed}] = 2;
    rep.leaf_total[r0] = 40;
    rep.leaf_total[r0 + 1] = 60;
    rep.leaf_pairs[{r0, r0 + 1}] = 3;
    rep.leaf_pairs[{r0 + 1, r0}] = 3;

    const std::string text = metrics::format_report(rep, vocab);
    REQUIRE_THAT(text, ContainsSubstring("samples: 100"));
    REQUIRE_THAT(text, ContainsSubstring("r0 -> r1: 5/100 = 0.0500"));
    REQUIRE_THAT(text, ContainsSubstring("r0 -> <malformed>: 2/100 = 0.0200"));
    REQUIRE_THAT(text, ContainsSubstring("{r0, r1}: 0.0600"));
    // The diagonal is bookkeeping, not an error line.
    REQUIRE_THAT(text, !ContainsSubstring("r0 -> r0"));
}
