#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"

using namespace radcap;
using namespace radcap::grammar;

namespace {

// Random caption tree over `nrad` radicals, depth capped.
CaptionTree rand_tree(Rng& rng, int nrad, int max_depth) {
    if (max_depth <= 1 || rng.uniform() < 0.35) return CaptionTree::leaf(rng.uniform_int(nrad));
    // Any structure but `single` can head a node.
    const int kind_idx = 1 + rng.uniform_int(kNumStructures - 1);
    const auto kind = static_cast<StructureKind>(kind_idx);
    std::vector<CaptionTree> kids;
    if (kind == StructureKind::r) {
        const int count = 2 + rng.uniform_int(3);
        CaptionTree proto = rand_tree(rng, nrad, max_depth - 1);
        for (int i = 0; i < count; ++i) kids.push_back(proto);
    } else {
        const int count = 2 + (rng.uniform() < 0.2 ? 1 : 0);
        for (int i = 0; i < count; ++i) kids.push_back(rand_tree(rng, nrad, max_depth - 1));
    }
    return CaptionTree::node(kind, std::move(kids));
}

} // namespace

TEST_CASE("vocabulary layout and token classes", "[grammar]") {
    Vocabulary v = testutil::tiny_vocab(3);
    REQUIRE(v.size() == 3 + kNumStructures + 4);
    REQUIRE(v.sos() == 0);
    REQUIRE(v.eos() == 1);
    REQUIRE(v.token(v.lbrace()) == "{");
    REQUIRE(v.token(v.rbrace()) == "}");
    REQUIRE(v.is_structure(Vocabulary::kFirstStructure));
    REQUIRE(v.is_radical(v.radical_token(0)));
    REQUIRE(v.radical_id(v.radical_token(2)) == 2);
    REQUIRE(v.structure_at(v.structure_token(StructureKind::a)) == StructureKind::a);
    REQUIRE_FALSE(v.is_structure(v.sos()));
    REQUIRE_FALSE(v.is_radical(v.rbrace()));
    int idx = -1;
    REQUIRE(v.try_index_of("r1", idx));
    REQUIRE(idx == v.radical_token(1));
    REQUIRE_FALSE(v.try_index_of("nope", idx));
}

TEST_CASE("vocabulary rejects reserved radical names", "[grammar]") {
    REQUIRE_THROWS_AS(Vocabulary::build({"a"}), ValueError);
    REQUIRE_THROWS_AS(Vocabulary::build({"{"}), ValueError);
    REQUIRE_THROWS_AS(Vocabulary::build({"<eos>"}), ValueError);
    REQUIRE_THROWS_AS(Vocabulary::build({"x", "x"}), ValueError);
}

TEST_CASE("vocabulary hash is order and content sensitive", "[grammar]") {
    Vocabulary v1 = Vocabulary::build({"x", "y"});
    Vocabulary v2 = Vocabulary::build({"y", "x"});
    Vocabulary v3 = Vocabulary::build({"x", "y", "z"});
    REQUIRE(v1.hash() != v2.hash());
    REQUIRE(v1.hash() != v3.hash());
    REQUIRE(v1.hash() == Vocabulary::build({"x", "y"}).hash());
}

TEST_CASE("serialize/parse round-trip on random trees", "[grammar]") {
    Vocabulary v = testutil::tiny_vocab(5);
    Rng rng(42);
    for (int i = 0; i < 2000; ++i) {
        CaptionTree t = rand_tree(rng, 5, 4);
        TokenSequence s = serialize(t, v);
        REQUIRE(static_cast<int>(s.size()) == t.leaf_count() + 3 * t.node_count());
        CaptionTree back = parse(s, v);
        REQUIRE(back == t);
        REQUIRE(validate_sequence(s, v).well_formed);
        // Text round-trip too.
        REQUIRE(tokenize(to_string(s, v), v) == s);
    }
}

TEST_CASE("targeted violations", "[grammar]") {
    Vocabulary v = testutil::tiny_vocab(3);
    auto toks = [&v](const std::string& text) { return tokenize(text, v); };

    struct Case {
        TokenSequence seq;
        Violation expect;
        int position;
    };
    const int K = v.size();
    std::vector<Case> cases = {
        {{}, Violation::empty_sequence, 0},
        {{K}, Violation::unknown_token, 0},
        {{v.sos()}, Violation::unknown_token, 0},
        {toks("{ r0 r1 }"), Violation::missing_structure_head, 0},
        {toks("single { r0 r1 }"), Violation::single_as_node, 0},
        {toks("} r0"), Violation::unbalanced_braces, 0},
        {toks("a r0 r1 }"), Violation::unbalanced_braces, 1},
        {toks("a { r0 r1"), Violation::unbalanced_braces, 4},
        {toks("a { r0 }"), Violation::structure_arity, 3},
        {toks("r { r0 r1 }"), Violation::repetition_mismatch, 3},
        {toks("r0 r1"), Violation::trailing_tokens, 1},
        {toks("a { r0 r1 } }"), Violation::trailing_tokens, 5},
    };
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const auto& c = cases[ci];
        CAPTURE(ci); // to_string would throw on the out-of-range cases
        ValidityReport rep = validate_sequence(c.seq, v);
        REQUIRE_FALSE(rep.well_formed);
        REQUIRE(rep.violation == c.expect);
        REQUIRE(rep.position == c.position);
        try {
            parse(c.seq, v);
            FAIL("parse accepted an invalid sequence");
        } catch (const GrammarError& e) {
            REQUIRE(e.violation == c.expect);
            REQUIRE(e.position == c.position);
        }
    }
}

TEST_CASE("repetition accepts identical subtrees only", "[grammar]") {
    Vocabulary v = testutil::tiny_vocab(3);
    REQUIRE(validate_sequence(tokenize("r { r0 r0 }", v), v).well_formed);
    REQUIRE(validate_sequence(tokenize("r { r0 r0 r0 r0 }", v), v).well_formed);
    REQUIRE(validate_sequence(tokenize("r { a { r0 r1 } a { r0 r1 } }", v), v).well_formed);
    REQUIRE_FALSE(validate_sequence(tokenize("r { a { r0 r1 } a { r1 r0 } }", v), v).well_formed);
    REQUIRE_FALSE(validate_sequence(tokenize("r { r0 r0 r1 }", v), v).well_formed);
}

TEST_CASE("parse and validate agree exhaustively on short strings", "[grammar]") {
    // All strings of length <= 5 over a 5-symbol alphabet: one strip
    // structure, the braces, two radicals. The acceptance suite runs the
    // full length-6 version.
    Vocabulary v = testutil::tiny_vocab(2);
    const std::vector<int> alphabet = {v.structure_token(StructureKind::a), v.lbrace(), v.rbrace(),
                                       v.radical_token(0), v.radical_token(1)};
    const int base = static_cast<int>(alphabet.size());
    long agree = 0, accepted = 0;
    for (int len = 0; len <= 5; ++len) {
        long total = 1;
        for (int i = 0; i < len; ++i) total *= base;
        for (long code = 0; code < total; ++code) {
            TokenSequence seq;
            long c = code;
            for (int i = 0; i < len; ++i) {
                seq.push_back(alphabet[static_cast<std::size_t>(c % base)]);
                c /= base;
            }
            const ValidityReport rep = validate_sequence(seq, v);
            bool parsed = true;
            Violation pv = Violation::none;
            int ppos = -1;
            try {
                parse(seq, v);
            } catch (const GrammarError& e) {
                parsed = false;
                pv = e.violation;
                ppos = e.position;
            }
            CAPTURE(to_string(seq, v));
            REQUIRE(parsed == rep.well_formed);
            if (!parsed) {
                REQUIRE(pv == rep.violation);
                REQUIRE(ppos == rep.position);
            } else {
                ++accepted;
            }
            ++agree;
        }
    }
    REQUIRE(agree == 1 + 5 + 25 + 125 + 625 + 3125);
    REQUIRE(accepted > 0);
}

TEST_CASE("dictionary parsing", "[grammar]") {
    std::vector<std::string> lines = {
        "# demo dictionary",
        "",
        "c0\tfoo",
        "c1\ta { foo bar }",
        "c2\tr { bar bar }\tseen", // manifests carry a third split column
    };
    Dictionary d = parse_dictionary_lines(lines);
    REQUIRE(d.labels.size() == 3);
    REQUIRE(d.vocab.num_radicals() == 2); // foo, bar in first-appearance order
    REQUIRE(d.vocab.token(d.vocab.radical_token(0)) == "foo");
    REQUIRE(d.by_label.at("c1") == 1);
    REQUIRE(d.trees[1].kind == StructureKind::a);
    REQUIRE(d.trees[2].kind == StructureKind::r);

    REQUIRE_THROWS_AS(parse_dictionary_lines({"c0 foo"}), IoError);           // no TAB
    REQUIRE_THROWS_AS(parse_dictionary_lines({"c0\tfoo", "c0\tbar"}), IoError); // dup label
    REQUIRE_THROWS_AS(parse_dictionary_lines({"c0\ta { x }"}), IoError);      // bad caption
    REQUIRE_THROWS_AS(parse_dictionary_lines({"c0\t<eos>"}), IoError);        // sentinel
}
