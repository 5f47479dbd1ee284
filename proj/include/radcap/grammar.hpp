#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "radcap/error.hpp"

namespace radcap::grammar {

// The thirteen spatial structures. `single` denotes a lone-radical
// character and never heads an internal node.
enum class StructureKind : int {
    single = 0,
    a,    // left-right
    d,    // top-bottom
    s,    // full surround
    sb,   // surround, open bottom
    sl,   // surround, open left
    st,   // surround, open top
    sbl,  // surround, open bottom-left
    stl,  // surround, open top-left
    str,  // surround, open top-right
    w,    // within
    lock, // interlocked
    r,    // repetition
};

inline constexpr int kNumStructures = 13;

inline const std::array<std::string, kNumStructures>& structure_names() {
    static const std::array<std::string, kNumStructures> names = {
        "single", "a", "d", "s", "sb", "sl", "st", "sbl", "stl", "str", "w", "lock", "r"};
    return names;
}

inline const std::string& kind_name(StructureKind k) {
    return structure_names()[static_cast<std::size_t>(k)];
}

inline bool kind_from_name(const std::string& s, StructureKind& out) {
    const auto& names = structure_names();
    for (int i = 0; i < kNumStructures; ++i)
        if (names[static_cast<std::size_t>(i)] == s) {
            out = static_cast<StructureKind>(i);
            return true;
        }
    return false;
}

// Leaf: kind==single and radical >= 0, no children.
// Node: kind!=single, no radical, >= 2 children (kind r: all identical).
struct CaptionTree {
    StructureKind kind = StructureKind::single;
    int radical = -1;
    std::vector<CaptionTree> children;

    bool is_leaf() const { return children.empty(); }

    static CaptionTree leaf(int radical_id) {
        CaptionTree t;
        t.radical = radical_id;
        return t;
    }

    static CaptionTree node(StructureKind k, std::vector<CaptionTree> kids) {
        CaptionTree t;
        t.kind = k;
        t.children = std::move(kids);
        return t;
    }

    bool operator==(const CaptionTree& o) const {
        return kind == o.kind && radical == o.radical && children == o.children;
    }
    bool operator!=(const CaptionTree& o) const { return !(*this == o); }

    int depth() const {
        int d = 0;
        for (const auto& c : children) d = std::max(d, c.depth());
        return d + 1;
    }

    int leaf_count() const {
        if (is_leaf()) return 1;
        int n = 0;
        for (const auto& c : children) n += c.leaf_count();
        return n;
    }

    int node_count() const {
        if (is_leaf()) return 0;
        int n = 1;
        for (const auto& c : children) n += c.node_count();
        return n;
    }

    void collect_radicals(std::vector<int>& out) const {
        if (is_leaf()) {
            out.push_back(radical);
            return;
        }
        for (const auto& c : children) c.collect_radicals(out);
    }
};

// Dense, ordered symbol table. Index layout: sentinels, braces, the 13
// structure symbols, then radicals; K = radicals + 13 + 2 + 2.
class Vocabulary {
public:
    Vocabulary() = default;

    static Vocabulary build(const std::vector<std::string>& radicals) {
        Vocabulary v;
        v.push("<sos>");
        v.push("<eos>");
        v.push("{");
        v.push("}");
        for (const auto& name : structure_names()) v.push(name);
        for (const auto& r : radicals) {
            StructureKind k;
            if (kind_from_name(r, k) || r == "{" || r == "}" || r == "<sos>" || r == "<eos>")
                throw ValueError("vocabulary: radical name collides with a reserved token: " + r);
            v.push(r);
        }
        return v;
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    int num_radicals() const { return size() - kFirstRadical; }

    int sos() const { return 0; }
    int eos() const { return 1; }
    int lbrace() const { return 2; }
    int rbrace() const { return 3; }

    bool contains(int id) const { return id >= 0 && id < size(); }
    bool is_structure(int id) const { return id >= kFirstStructure && id < kFirstRadical; }
    bool is_radical(int id) const { return id >= kFirstRadical && id < size(); }

    StructureKind structure_at(int id) const {
        if (!is_structure(id)) throw ValueError("vocabulary: token is not a structure");
        return static_cast<StructureKind>(id - kFirstStructure);
    }
    int structure_token(StructureKind k) const { return kFirstStructure + static_cast<int>(k); }
    int radical_token(int radical_id) const {
        if (radical_id < 0 || radical_id >= num_radicals())
            throw ValueError("vocabulary: radical id out of range");
        return kFirstRadical + radical_id;
    }
    int radical_id(int token) const {
        if (!is_radical(token)) throw ValueError("vocabulary: token is not a radical");
        return token - kFirstRadical;
    }

    const std::string& token(int id) const {
        if (!contains(id)) throw ValueError("vocabulary: index out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    int index_of(const std::string& tok) const {
        auto it = index_.find(tok);
        if (it == index_.end()) throw ValueError("vocabulary: unknown token: " + tok);
        return it->second;
    }

    bool try_index_of(const std::string& tok, int& out) const {
        auto it = index_.find(tok);
        if (it == index_.end()) return false;
        out = it->second;
        return true;
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

    // FNV-1a over all token strings with separators; identifies the vocab
    // inside archives and checkpoints.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](unsigned char c) {
            h ^= c;
            h *= 0x100000001b3ull;
        };
        for (const auto& t : tokens_) {
            for (char c : t) mix(static_cast<unsigned char>(c));
            mix(0);
        }
        return h;
    }

    static constexpr int kFirstStructure = 4;
    static constexpr int kFirstRadical = 4 + kNumStructures;

private:
    void push(const std::string& tok) {
        if (index_.count(tok)) throw ValueError("vocabulary: duplicate token: " + tok);
        index_.emplace(tok, static_cast<int>(tokens_.size()));
        tokens_.push_back(tok);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

using TokenSequence = std::vector<int>;

enum class Violation {
    none,
    empty_sequence,
    unknown_token,          // index outside [0,K) or a sentinel inside a caption
    missing_structure_head, // "{" with no structure symbol before it
    single_as_node,         // `single` used as a node head
    unbalanced_braces,      // stray "}", missing "}", or structure not followed by "{"
    structure_arity,        // node closed with fewer than 2 children
    repetition_mismatch,    // children of an r node differ
    trailing_tokens,        // tokens after a complete caption
};

inline const char* violation_name(Violation v) {
    switch (v) {
        case Violation::none: return "none";
        case Violation::empty_sequence: return "empty_sequence";
        case Violation::unknown_token: return "unknown_token";
        case Violation::missing_structure_head: return "missing_structure_head";
        case Violation::single_as_node: return "single_as_node";
        case Violation::unbalanced_braces: return "unbalanced_braces";
        case Violation::structure_arity: return "structure_arity";
        case Violation::repetition_mismatch: return "repetition_mismatch";
        case Violation::trailing_tokens: return "trailing_tokens";
    }
    return "?";
}

struct ValidityReport {
    bool well_formed = true;
    Violation violation = Violation::none;
    int position = -1; // token index of the first violation; sequence length for end-of-input faults
};

class GrammarError : public Error {
public:
    GrammarError(Violation v, int position)
        : Error(std::string(violation_name(v)) + " at token " + std::to_string(position)),
          violation(v),
          position(position) {}
    Violation violation;
    int position;
};

inline void serialize_into(const CaptionTree& t, const Vocabulary& vocab, TokenSequence& out) {
    if (t.is_leaf()) {
        out.push_back(vocab.radical_token(t.radical));
        return;
    }
    out.push_back(vocab.structure_token(t.kind));
    out.push_back(vocab.lbrace());
    for (const auto& c : t.children) serialize_into(c, vocab, out);
    out.push_back(vocab.rbrace());
}

// Pre-order emission: structure, "{", children, "}"; leaves emit their
// radical token. A tree with n_leaf leaves and n_node internal nodes
// serializes to n_leaf + 3*n_node tokens.
inline TokenSequence serialize(const CaptionTree& t, const Vocabulary& vocab) {
    TokenSequence out;
    serialize_into(t, vocab, out);
    return out;
}

namespace detail {

inline CaptionTree parse_item(const TokenSequence& toks, const Vocabulary& vocab, std::size_t& pos) {
    const int len = static_cast<int>(toks.size());
    if (pos >= toks.size()) throw GrammarError(Violation::unbalanced_braces, len);
    const int tk = toks[pos];
    if (!vocab.contains(tk)) throw GrammarError(Violation::unknown_token, static_cast<int>(pos));
    if (vocab.is_radical(tk)) {
        ++pos;
        return CaptionTree::leaf(vocab.radical_id(tk));
    }
    if (tk == vocab.lbrace())
        throw GrammarError(Violation::missing_structure_head, static_cast<int>(pos));
    if (tk == vocab.rbrace())
        throw GrammarError(Violation::unbalanced_braces, static_cast<int>(pos));
    if (!vocab.is_structure(tk))
        // Sentinels: known to the vocabulary but not part of the caption language.
        throw GrammarError(Violation::unknown_token, static_cast<int>(pos));
    const StructureKind kind = vocab.structure_at(tk);
    if (kind == StructureKind::single)
        throw GrammarError(Violation::single_as_node, static_cast<int>(pos));
    ++pos;
    if (pos >= toks.size() || toks[pos] != vocab.lbrace())
        throw GrammarError(Violation::unbalanced_braces, static_cast<int>(pos));
    ++pos;
    std::vector<CaptionTree> kids;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    while (true) {
        if (pos >= toks.size()) throw GrammarError(Violation::unbalanced_braces, len);
        if (toks[pos] == vocab.rbrace()) {
            if (kids.size() < 2) throw GrammarError(Violation::structure_arity, static_cast<int>(pos));
            if (kind == StructureKind::r) {
                for (std::size_t i = 1; i < kids.size(); ++i)
                    if (!(kids[i] == kids[0]))
                        throw GrammarError(Violation::repetition_mismatch,
                                           static_cast<int>(spans[i].first));
            }
            ++pos;
            return CaptionTree::node(kind, std::move(kids));
        }
        const std::size_t child_start = pos;
        kids.push_back(parse_item(toks, vocab, pos));
        spans.emplace_back(child_start, pos);
    }
}

} // namespace detail

// Strict parse: returns the unique tree whose serialization equals the
// input, throws GrammarError otherwise. Sentinels must be stripped.
inline CaptionTree parse(const TokenSequence& toks, const Vocabulary& vocab) {
    if (toks.empty()) throw GrammarError(Violation::empty_sequence, 0);
    std::size_t pos = 0;
    CaptionTree t = detail::parse_item(toks, vocab, pos);
    if (pos != toks.size()) throw GrammarError(Violation::trailing_tokens, static_cast<int>(pos));
    return t;
}

// Independent acceptance check: a stack automaton that never builds trees.
// Kept deliberately separate from parse() so the two can be compared
// exhaustively; they must accept exactly the same strings.
inline ValidityReport validate_sequence(const TokenSequence& toks, const Vocabulary& vocab) {
    auto fail = [](Violation v, int pos) {
        ValidityReport r;
        r.well_formed = false;
        r.violation = v;
        r.position = pos;
        return r;
    };
    const int len = static_cast<int>(toks.size());
    if (toks.empty()) return fail(Violation::empty_sequence, 0);

    struct Frame {
        bool is_rep = false;
        int start = 0; // position of the structure token
        int children = 0;
        std::vector<std::pair<int, int>> spans; // child token ranges, for r identity
    };
    std::vector<Frame> stack;
    bool root_done = false;

    auto close_child = [&stack](int start, int end) {
        Frame& f = stack.back();
        ++f.children;
        f.spans.emplace_back(start, end);
    };

    for (int pos = 0; pos < len; ++pos) {
        const int tk = toks[static_cast<std::size_t>(pos)];
        if (root_done) return fail(Violation::trailing_tokens, pos);
        if (!vocab.contains(tk)) return fail(Violation::unknown_token, pos);

        if (vocab.is_radical(tk)) {
            if (stack.empty())
                root_done = true;
            else
                close_child(pos, pos + 1);
            continue;
        }
        if (vocab.is_structure(tk)) {
            if (vocab.structure_at(tk) == StructureKind::single)
                return fail(Violation::single_as_node, pos);
            if (pos + 1 >= len || toks[static_cast<std::size_t>(pos + 1)] != vocab.lbrace())
                return fail(Violation::unbalanced_braces, pos + 1);
            Frame f;
            f.is_rep = vocab.structure_at(tk) == StructureKind::r;
            f.start = pos;
            stack.push_back(std::move(f));
            ++pos; // consume "{"
            continue;
        }
        if (tk == vocab.lbrace()) return fail(Violation::missing_structure_head, pos);
        if (tk == vocab.rbrace()) {
            if (stack.empty()) return fail(Violation::unbalanced_braces, pos);
            Frame f = std::move(stack.back());
            stack.pop_back();
            if (f.children < 2) return fail(Violation::structure_arity, pos);
            if (f.is_rep) {
                const auto& first = f.spans[0];
                for (std::size_t i = 1; i < f.spans.size(); ++i) {
                    const auto& s = f.spans[i];
                    const int flen = first.second - first.first;
                    if (s.second - s.first != flen ||
                        !std::equal(toks.begin() + first.first, toks.begin() + first.second,
                                    toks.begin() + s.first))
                        return fail(Violation::repetition_mismatch, s.first);
                }
            }
            const int node_start = f.start;
            if (stack.empty())
                root_done = true;
            else
                close_child(node_start, pos + 1);
            continue;
        }
        // Sentinels: known to the vocabulary but not part of the caption language.
        return fail(Violation::unknown_token, pos);
    }
    if (!stack.empty()) return fail(Violation::unbalanced_braces, len);
    return ValidityReport{};
}

inline std::string to_string(const TokenSequence& toks, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += vocab.token(toks[i]);
    }
    return out;
}

inline std::string to_string(const CaptionTree& t, const Vocabulary& vocab) {
    return to_string(serialize(t, vocab), vocab);
}

inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
    TokenSequence out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(vocab.index_of(tok));
    return out;
}

// Dictionary file: `label<TAB>caption` per line, `#` comments, UTF-8.
// Radical names are interned in first-appearance order, which fixes the
// vocabulary indices.
struct Dictionary {
    Vocabulary vocab;
    std::vector<std::string> labels;  // class id = position
    std::vector<CaptionTree> trees;
    std::map<std::string, int> by_label;
};

inline Dictionary parse_dictionary_lines(const std::vector<std::string>& lines) {
    // First pass: collect radical names.
    std::vector<std::string> radicals;
    std::map<std::string, bool> seen_radical;
    std::vector<std::pair<std::string, std::string>> entries; // label, caption
    int lineno = 0;
    for (const auto& raw : lines) {
        ++lineno;
        std::string line = raw;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("dictionary line " + std::to_string(lineno) + ": missing TAB separator");
        const std::string label = line.substr(0, tab);
        std::string caption = line.substr(tab + 1);
        // Manifests append a third TAB-separated field (the split tag);
        // ignore anything past the caption so they load as dictionaries.
        const auto tab2 = caption.find('\t');
        if (tab2 != std::string::npos) caption.resize(tab2);
        if (label.empty())
            throw IoError("dictionary line " + std::to_string(lineno) + ": empty label");
        entries.emplace_back(label, caption);
        std::istringstream is(caption);
        std::string tok;
        while (is >> tok) {
            StructureKind k;
            if (tok == "{" || tok == "}" || kind_from_name(tok, k)) continue;
            if (tok == "<sos>" || tok == "<eos>")
                throw IoError("dictionary line " + std::to_string(lineno) + ": sentinel in caption");
            if (!seen_radical[tok]) {
                seen_radical[tok] = true;
                radicals.push_back(tok);
            }
        }
    }
    Dictionary d;
    d.vocab = Vocabulary::build(radicals);
    lineno = 0;
    for (const auto& [label, caption] : entries) {
        ++lineno;
        if (d.by_label.count(label)) throw IoError("dictionary: duplicate class label: " + label);
        TokenSequence toks;
        try {
            toks = tokenize(caption, d.vocab);
            CaptionTree t = parse(toks, d.vocab);
            d.by_label.emplace(label, static_cast<int>(d.labels.size()));
            d.labels.push_back(label);
            d.trees.push_back(std::move(t));
        } catch (const Error& e) {
            throw IoError("dictionary entry '" + label + "': " + e.what());
        }
    }
    return d;
}

inline Dictionary load_dictionary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dictionary: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return parse_dictionary_lines(lines);
}

} // namespace radcap::grammar
