#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "radcap/beam.hpp"
#include "radcap/dataset.hpp"
#include "radcap/error.hpp"
#include "radcap/grammar.hpp"
#include "radcap/model.hpp"
#include "radcap/trainer.hpp"

namespace radcap::metrics {

// Confusion column for predictions that fail caption validation.
inline constexpr int kMalformed = -1;

struct EvalReport {
    int evaluated = 0;
    int exact_matches = 0;
    double exact_match = 0.0; // accuracy
    double mean_wer = 0.0;

    std::map<int, int> class_total;   // class id -> sample count
    std::map<int, int> class_correct; // class id -> exact matches

    // Root-token confusion: truth root A -> predicted root B (kMalformed
    // for invalid predictions). Diagonal entries keep the row sums exact:
    // sum_B N_{A->B} == N_A.
    std::map<int, int> root_total;                  // N_A
    std::map<std::pair<int, int>, int> root_pairs;  // N_{A->B}

    // Bare-leaf confusion: truth is a single radical E, prediction is a
    // single radical G.
    std::map<int, int> leaf_total;                  // N_E
    std::map<std::pair<int, int>, int> leaf_pairs;  // N_{E->G}

    double class_accuracy(int class_id) const {
        auto it = class_total.find(class_id);
        if (it == class_total.end() || it->second == 0) return 0.0;
        auto c = class_correct.find(class_id);
        return (c == class_correct.end() ? 0 : c->second) / static_cast<double>(it->second);
    }

    // P_err(A->B) = N_{A->B} / N_A.
    double p_err(int a, int b) const {
        auto na = root_total.find(a);
        if (na == root_total.end() || na->second == 0) return 0.0;
        auto nab = root_pairs.find({a, b});
        return (nab == root_pairs.end() ? 0 : nab->second) / static_cast<double>(na->second);
    }

    // R_err(E,G) = (N_{E->G} + N_{G->E}) / (N_E + N_G).
    double r_err(int e, int g) const {
        auto count = [](const std::map<int, int>& m, int k) {
            auto it = m.find(k);
            return it == m.end() ? 0 : it->second;
        };
        auto pair_count = [this](int x, int y) {
            auto it = leaf_pairs.find({x, y});
            return it == leaf_pairs.end() ? 0 : it->second;
        };
        const int denom = count(leaf_total, e) + count(leaf_total, g);
        if (denom == 0) return 0.0;
        return (pair_count(e, g) + pair_count(g, e)) / static_cast<double>(denom);
    }
};

template <typename T>
EvalReport evaluate(Model<T>& model, const data::Dataset& ds, data::Split split,
                    const BeamConfig& beam = {}) {
    const auto idx = ds.indices_of(split);
    if (idx.empty()) throw ValueError("evaluate: no samples in split " + std::string(data::split_name(split)));
    const auto& vocab = model.vocab();
    if (!(vocab == ds.vocab)) throw ValueError("evaluate: model and dataset vocabularies differ");
    EvalReport rep;
    double wer_sum = 0.0;
    for (int i : idx) {
        const auto& s = ds.samples[static_cast<std::size_t>(i)];
        Tensor<T> img = data::images_to_tensor<T>(ds, {i});
        AttendCache<T> cache = model.encode_eval(img);
        BeamResult<T> res = beam_decode(model.decoder(), cache, vocab.sos(), vocab.eos(), beam);

        const bool exact = res.tokens == s.caption;
        wer_sum += wer(res.tokens, s.caption);
        ++rep.evaluated;
        rep.exact_matches += exact ? 1 : 0;
        ++rep.class_total[static_cast<int>(s.class_id)];
        if (exact) ++rep.class_correct[static_cast<int>(s.class_id)];

        const int truth_root = s.caption.front();
        const auto validity = grammar::validate_sequence(res.tokens, vocab);
        const int pred_root = validity.well_formed ? res.tokens.front() : kMalformed;
        ++rep.root_total[truth_root];
        ++rep.root_pairs[{truth_root, pred_root}];

        if (s.caption.size() == 1 && vocab.is_radical(s.caption[0])) {
            ++rep.leaf_total[s.caption[0]];
            if (res.tokens.size() == 1 && vocab.is_radical(res.tokens[0]))
                ++rep.leaf_pairs[{s.caption[0], res.tokens[0]}];
        }
    }
    rep.exact_match = rep.exact_matches / static_cast<double>(rep.evaluated);
    rep.mean_wer = wer_sum / static_cast<double>(rep.evaluated);
    return rep;
}

// ((1 - acc_base) - (1 - acc_new)) / (1 - acc_base): the fraction of the
// baseline's character error rate removed by the new system.
inline double relative_cer_reduction(double acc_base, double acc_new) {
    if (acc_base < 0.0 || acc_base > 1.0 || acc_new < 0.0 || acc_new > 1.0)
        throw ValueError("relative_cer_reduction: accuracies must lie in [0,1]");
    if (acc_base == 1.0)
        throw ValueError("relative_cer_reduction: undefined at a perfect baseline");
    return ((1.0 - acc_base) - (1.0 - acc_new)) / (1.0 - acc_base);
}

struct SweepPoint {
    int train_classes = 0;
    double accuracy = 0.0;
};

struct SweepReport {
    std::vector<SweepPoint> points; // sorted by train_classes
    std::string verdict;
    double worst_inversion = 0.0; // largest accuracy drop between consecutive points
    int inversions = 0;

    std::string table() const {
        std::string out = "train_classes,unseen_accuracy\n";
        char line[64];
        for (const auto& p : points) {
            std::snprintf(line, sizeof line, "%d,%.4f\n", p.train_classes, p.accuracy);
            out += line;
        }
        out += "verdict," + verdict + "\n";
        return out;
    }
};

inline SweepReport sweep_report(std::vector<SweepPoint> points) {
    if (points.size() < 2) throw ValueError("sweep_report: need at least 2 points");
    std::stable_sort(points.begin(), points.end(),
                     [](const SweepPoint& a, const SweepPoint& b) {
                         return a.train_classes < b.train_classes;
                     });
    SweepReport rep;
    bool flat = true, strict = true, nondec = true;
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double d = points[i].accuracy - points[i - 1].accuracy;
        if (d != 0.0) flat = false;
        if (d <= 0.0) strict = false;
        if (d < 0.0) {
            nondec = false;
            ++rep.inversions;
            rep.worst_inversion = std::max(rep.worst_inversion, -d);
        }
    }
    rep.points = std::move(points);
    if (flat) rep.verdict = "flat";
    else if (strict) rep.verdict = "monotone-increasing";
    else if (nondec) rep.verdict = "non-decreasing";
    else {
        char buf[96];
        std::snprintf(buf, sizeof buf, "non-monotone (%d inversion(s), worst %.4f)",
                      rep.inversions, rep.worst_inversion);
        rep.verdict = buf;
    }
    return rep;
}

// Human-readable report; the CSV twin is emitted by the CLI.
inline std::string format_report(const EvalReport& rep, const grammar::Vocabulary& vocab) {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof buf, "samples: %d\nexact-match accuracy: %.4f\nmean WER: %.4f\n",
                  rep.evaluated, rep.exact_match, rep.mean_wer);
    out += buf;
    out += "root-token substitutions (truth -> predicted, rate):\n";
    for (const auto& [key, n] : rep.root_pairs) {
        if (key.first == key.second) continue;
        const std::string pred = key.second == kMalformed ? "<malformed>" : vocab.token(key.second);
        std::snprintf(buf, sizeof buf, "  %s -> %s: %d/%d = %.4f\n", vocab.token(key.first).c_str(),
                      pred.c_str(), n, rep.root_total.at(key.first), rep.p_err(key.first, key.second));
        out += buf;
    }
    out += "bare-leaf pair error rates:\n";
    std::set<std::pair<int, int>> pairs;
    for (const auto& [key, n] : rep.leaf_pairs)
        if (key.first != key.second)
            pairs.insert({std::min(key.first, key.second), std::max(key.first, key.second)});
    for (const auto& [e, g] : pairs) {
        std::snprintf(buf, sizeof buf, "  {%s, %s}: %.4f\n", vocab.token(e).c_str(),
                      vocab.token(g).c_str(), rep.r_err(e, g));
        out += buf;
    }
    return out;
}

} // namespace radcap::metrics
