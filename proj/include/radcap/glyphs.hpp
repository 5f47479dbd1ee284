#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "radcap/dataset.hpp"
#include "radcap/error.hpp"
#include "radcap/grammar.hpp"
#include "radcap/rng.hpp"

namespace radcap::glyph {

using grammar::CaptionTree;
using grammar::StructureKind;

// Stroke programs live in the unit square; a radical is a set of thick
// segments (capsules) rendered with signed-distance anti-aliasing.
struct Seg {
    double x0, y0, x1, y1;
};

struct RadicalPrimitive {
    std::vector<Seg> segs;
    double thickness = 0.10; // capsule diameter in unit coordinates
};

inline const std::vector<RadicalPrimitive>& primitives() {
    static const std::vector<RadicalPrimitive> prims = [] {
        std::vector<RadicalPrimitive> p;
        auto add = [&p](std::vector<Seg> segs) { p.push_back({std::move(segs), 0.10}); };
        add({{0.10, 0.50, 0.90, 0.50}});                                            // bar
        add({{0.50, 0.10, 0.50, 0.90}});                                            // pole
        add({{0.10, 0.50, 0.90, 0.50}, {0.50, 0.10, 0.50, 0.90}});                  // cross
        add({{0.18, 0.10, 0.18, 0.85}, {0.18, 0.85, 0.90, 0.85}});                  // corner
        add({{0.15, 0.15, 0.85, 0.15},
             {0.85, 0.15, 0.85, 0.85},
             {0.85, 0.85, 0.15, 0.85},
             {0.15, 0.85, 0.15, 0.15}});                                            // frame
        add({{0.10, 0.90, 0.90, 0.10}});                                            // slash
        add({{0.10, 0.10, 0.90, 0.90}});                                            // backslash
        add({{0.10, 0.90, 0.90, 0.10}, {0.10, 0.10, 0.90, 0.90}});                  // saltire
        add({{0.10, 0.15, 0.90, 0.15}, {0.50, 0.15, 0.50, 0.90}});                  // tee
        add({{0.50, 0.10, 0.50, 0.85}, {0.10, 0.85, 0.90, 0.85}});                  // podium
        add({{0.15, 0.15, 0.85, 0.15},
             {0.15, 0.85, 0.85, 0.85},
             {0.50, 0.15, 0.50, 0.85}});                                            // beam
        add({{0.10, 0.15, 0.90, 0.15}, {0.90, 0.15, 0.10, 0.85}, {0.10, 0.85, 0.90, 0.85}}); // zed
        add({{0.10, 0.30, 0.50, 0.30}, {0.50, 0.30, 0.50, 0.70}, {0.50, 0.70, 0.90, 0.70}}); // stair
        add({{0.50, 0.12, 0.88, 0.85}, {0.88, 0.85, 0.12, 0.85}, {0.12, 0.85, 0.50, 0.12}}); // delta
        add({{0.12, 0.12, 0.50, 0.88}, {0.50, 0.88, 0.88, 0.12}});                  // vee
        add({{0.12, 0.88, 0.50, 0.12}, {0.50, 0.12, 0.88, 0.88}});                  // caret
        add({{0.12, 0.10, 0.50, 0.52}, {0.88, 0.10, 0.50, 0.52}, {0.50, 0.52, 0.50, 0.90}}); // wye
        add({{0.10, 0.30, 0.90, 0.30}, {0.10, 0.70, 0.90, 0.70}});                  // rails
        add({{0.30, 0.10, 0.30, 0.90}, {0.70, 0.10, 0.70, 0.90}});                  // pillars
        add({{0.60, 0.10, 0.60, 0.85}, {0.60, 0.85, 0.26, 0.66}});                  // hook
        return p;
    }();
    return prims;
}

inline int max_radicals() { return static_cast<int>(primitives().size()); }

inline std::vector<std::string> radical_names(int n) {
    if (n < 1 || n > max_radicals())
        throw ValueError("radical_names: supported range is 1.." + std::to_string(max_radicals()));
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "rad%02d", i);
        out.emplace_back(buf);
    }
    return out;
}

struct JitterSpec {
    double translate = 0.08; // per-node shift, fraction of the node's box
    double scale_lo = 0.85;
    double scale_hi = 1.10;
    double thickness = 0.12; // relative stroke-width variation
    double noise = 0.015;    // additive Gaussian pixel noise

    static JitterSpec none() {
        JitterSpec j;
        j.translate = 0.0;
        j.scale_lo = 1.0;
        j.scale_hi = 1.0;
        j.thickness = 0.0;
        j.noise = 0.0;
        return j;
    }
};

// Normalized placement rectangle inside the parent box.
struct Box {
    double x, y, w, h;
};

// Child placement per structure kind. Strip kinds (a, d) accept any child
// count; the surround family, w and lock are binary; r tiles 2..4
// identical children.
inline std::vector<Box> layout_boxes(StructureKind kind, int count) {
    if (count < 2) throw ValueError("layout_boxes: nodes need at least 2 children");
    auto strips = [count](bool horizontal) {
        std::vector<Box> out;
        const double gap = 0.04;
        const double span = (1.0 - gap * (count - 1)) / count;
        for (int i = 0; i < count; ++i) {
            const double off = i * (span + gap);
            out.push_back(horizontal ? Box{off, 0.0, span, 1.0} : Box{0.0, off, 1.0, span});
        }
        return out;
    };
    auto binary = [count](const char* kind_name) {
        if (count != 2)
            throw ValueError(std::string("layout_boxes: kind ") + kind_name + " is binary");
    };
    // Surround family: outer child fills the box, inner child sits inside,
    // displaced toward the open side(s).
    auto surround = [&binary](const char* name, double dx, double dy) {
        binary(name);
        const double side = 0.56, shift = 0.12;
        return std::vector<Box>{{0.0, 0.0, 1.0, 1.0},
                                {(1.0 - side) / 2 + dx * shift, (1.0 - side) / 2 + dy * shift, side,
                                 side}};
    };
    switch (kind) {
        case StructureKind::single:
            throw ValueError("layout_boxes: `single` has no layout");
        case StructureKind::a:
            return strips(true);
        case StructureKind::d:
            return strips(false);
        case StructureKind::s:
            return surround("s", 0.0, 0.0);
        case StructureKind::sb:
            return surround("sb", 0.0, 1.0);
        case StructureKind::sl:
            return surround("sl", -1.0, 0.0);
        case StructureKind::st:
            return surround("st", 0.0, -1.0);
        case StructureKind::sbl:
            return surround("sbl", -1.0, 1.0);
        case StructureKind::stl:
            return surround("stl", -1.0, -1.0);
        case StructureKind::str:
            return surround("str", 1.0, -1.0);
        case StructureKind::w:
            binary("w");
            return {{0.0, 0.0, 1.0, 1.0}, {0.30, 0.30, 0.40, 0.40}};
        case StructureKind::lock:
            binary("lock");
            return {{0.0, 0.0, 0.57, 0.57}, {0.43, 0.43, 0.57, 0.57}};
        case StructureKind::r:
            if (count == 2) return {{0.0, 0.0, 0.48, 1.0}, {0.52, 0.0, 0.48, 1.0}};
            if (count == 3)
                return {{0.26, 0.02, 0.48, 0.46}, {0.02, 0.52, 0.46, 0.46}, {0.52, 0.52, 0.46, 0.46}};
            if (count == 4)
                return {{0.02, 0.02, 0.46, 0.46},
                        {0.52, 0.02, 0.46, 0.46},
                        {0.02, 0.52, 0.46, 0.46},
                        {0.52, 0.52, 0.46, 0.46}};
            throw ValueError("layout_boxes: r supports 2..4 repetitions");
    }
    throw ValueError("layout_boxes: unknown kind");
}

namespace detail {

inline double seg_distance(double px, double py, const Seg& s) {
    const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
    const double wx = px - s.x0, wy = py - s.y0;
    const double vv = vx * vx + vy * vy;
    double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (s.x0 + t * vx), dy = py - (s.y0 + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

// Draw one primitive into the pixel rectangle [bx, bx+bw) x [by, by+bh)
// of a size x size canvas; max-blend with one-pixel AA ramps.
inline void raster_primitive(const RadicalPrimitive& prim, double thick_mul, double bx, double by,
                             double bw, double bh, std::vector<double>& canvas, int size) {
    const double radius =
        0.5 * prim.thickness * thick_mul * std::min(bw, bh); // capsule radius in pixels
    for (const Seg& s : prim.segs) {
        const Seg ps{bx + s.x0 * bw, by + s.y0 * bh, bx + s.x1 * bw, by + s.y1 * bh};
        const double pad = radius + 1.0;
        const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(ps.x0, ps.x1) - pad)));
        const int x_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max(ps.x0, ps.x1) + pad)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(ps.y0, ps.y1) - pad)));
        const int y_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max(ps.y0, ps.y1) + pad)));
        for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x) {
                const double d = seg_distance(x + 0.5, y + 0.5, ps);
                const double ink = std::clamp(radius - d + 0.5, 0.0, 1.0);
                double& px = canvas[static_cast<std::size_t>(y * size + x)];
                px = std::max(px, ink);
            }
    }
}

// All jitter draws happen unconditionally and are scaled by the jitter
// amplitudes, so a zero-jitter render is bit-identical regardless of how
// the generator has been advanced.
inline void render_node(const CaptionTree& t, double bx, double by, double bw, double bh,
                        const JitterSpec& jit, Rng& rng, std::vector<double>& canvas, int size) {
    const double dx = rng.uniform(-1.0, 1.0) * jit.translate * bw;
    const double dy = rng.uniform(-1.0, 1.0) * jit.translate * bh;
    const double sc = rng.uniform(jit.scale_lo, jit.scale_hi);
    const double nw = bw * sc, nh = bh * sc;
    const double nx = bx + dx + (bw - nw) / 2.0;
    const double ny = by + dy + (bh - nh) / 2.0;
    if (t.is_leaf()) {
        const double tmul = 1.0 + rng.uniform(-1.0, 1.0) * jit.thickness;
        const auto& prims = primitives();
        if (t.radical < 0 || t.radical >= static_cast<int>(prims.size()))
            throw ValueError("render: radical id has no primitive");
        raster_primitive(prims[static_cast<std::size_t>(t.radical)], tmul, nx, ny, nw, nh, canvas,
                         size);
        return;
    }
    const auto boxes = layout_boxes(t.kind, static_cast<int>(t.children.size()));
    for (std::size_t i = 0; i < t.children.size(); ++i) {
        const Box& b = boxes[i];
        render_node(t.children[i], nx + b.x * nw, ny + b.y * nh, b.w * nw, b.h * nh, jit, rng, canvas,
                    size);
    }
}

inline double min_box_side(const CaptionTree& t, double w, double h) {
    if (t.is_leaf()) return std::min(w, h);
    const auto boxes = layout_boxes(t.kind, static_cast<int>(t.children.size()));
    double m = std::min(w, h);
    for (std::size_t i = 0; i < t.children.size(); ++i)
        m = std::min(m, min_box_side(t.children[i], w * boxes[i].w, h * boxes[i].h));
    return m;
}

} // namespace detail

// Rejects trees whose recursive layout collapses any leaf below ~6 pixels
// at the 32x32 rendering size; smaller boxes cannot depict a multi-stroke
// radical distinguishably.
inline bool renderable(const CaptionTree& t, int size = 32) {
    return detail::min_box_side(t, size, size) >= 6.0;
}

inline std::vector<double> render(const CaptionTree& t, const JitterSpec& jit, Rng& rng,
                                  int size = 32) {
    if (!renderable(t, size)) throw ValueError("render: degenerate layout box");
    std::vector<double> canvas(static_cast<std::size_t>(size) * size, 0.0);
    const double margin = 1.0; // keep jittered strokes inside the frame
    detail::render_node(t, margin, margin, size - 2 * margin, size - 2 * margin, jit, rng, canvas,
                        size);
    for (auto& px : canvas) px = std::clamp(px + rng.normal() * jit.noise, 0.0, 1.0);
    return canvas;
}

inline std::vector<std::uint8_t> render_u8(const CaptionTree& t, const JitterSpec& jit, Rng& rng,
                                           int size = 32) {
    const auto f = render(t, jit, rng, size);
    std::vector<std::uint8_t> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::lround(f[i] * 255.0));
    return out;
}

namespace detail {

inline const std::vector<StructureKind>& internal_kinds() {
    static const std::vector<StructureKind> kinds = {
        StructureKind::a,   StructureKind::d,   StructureKind::s,  StructureKind::sb,
        StructureKind::sl,  StructureKind::st,  StructureKind::sbl, StructureKind::stl,
        StructureKind::str, StructureKind::w,   StructureKind::lock, StructureKind::r};
    return kinds;
}

inline CaptionTree sample_tree(Rng& rng, int num_radicals, int depth_left);

inline CaptionTree sample_child(Rng& rng, int num_radicals, int depth_left) {
    if (depth_left <= 1 || rng.uniform() < 0.6)
        return CaptionTree::leaf(static_cast<int>(rng.uniform_int(num_radicals)));
    return sample_tree(rng, num_radicals, depth_left);
}

inline CaptionTree sample_tree(Rng& rng, int num_radicals, int depth_left) {
    const auto& kinds = internal_kinds();
    const StructureKind kind = kinds[rng.uniform_int(kinds.size())];
    int count = 2;
    if (kind == StructureKind::r)
        count = 2 + static_cast<int>(rng.uniform_int(3));
    else if ((kind == StructureKind::a || kind == StructureKind::d) && rng.uniform() < 0.25)
        count = 3;
    std::vector<CaptionTree> kids;
    if (kind == StructureKind::r) {
        CaptionTree proto = sample_child(rng, num_radicals, depth_left - 1);
        kids.assign(static_cast<std::size_t>(count), proto);
    } else {
        for (int i = 0; i < count; ++i) kids.push_back(sample_child(rng, num_radicals, depth_left - 1));
    }
    return CaptionTree::node(kind, std::move(kids));
}

} // namespace detail

// Deterministically sample `num_classes` distinct renderable caption
// trees. The front of the list is coverage-first: one class per internal
// structure kind, then one bare-leaf class per radical, so any seen
// prefix that spans it covers every kind and radical.
inline std::vector<CaptionTree> build_classes(int num_radicals, int num_classes, int max_depth,
                                              std::uint64_t seed) {
    if (num_radicals < 10 || num_radicals > max_radicals())
        throw ValueError("build_classes: num_radicals must be in 10.." +
                         std::to_string(max_radicals()));
    if (num_classes < 1) throw ValueError("build_classes: num_classes must be >= 1");
    if (max_depth < 1) throw ValueError("build_classes: max_depth must be >= 1");
    Rng rng = Rng::substream(seed, stream::data).fork(0x636c6173736573ull);

    std::vector<CaptionTree> out;
    std::set<grammar::TokenSequence> used;
    std::vector<std::vector<double>> canon;
    // Serialization under a nominal vocabulary is the identity key.
    const grammar::Vocabulary vocab = grammar::Vocabulary::build(radical_names(num_radicals));
    auto try_add = [&](const CaptionTree& t) {
        if (static_cast<int>(out.size()) >= num_classes) return false;
        if (!renderable(t)) return false;
        auto key = grammar::serialize(t, vocab);
        if (used.count(key)) return false;
        // Distinct captions can still rasterize to the same pixels (a
        // surround host whose strokes blanket the inner child); such
        // classes are unlearnable, so dedupe on the canonical render too.
        Rng render_rng(0);
        const auto img = render(t, JitterSpec::none(), render_rng);
        for (const auto& other : canon) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < img.size(); ++i) {
                const double d = img[i] - other[i];
                d2 += d * d;
            }
            if (std::sqrt(d2 / static_cast<double>(img.size())) < 0.06) return false;
        }
        used.insert(std::move(key));
        canon.push_back(img);
        out.push_back(t);
        return true;
    };

    // Coverage: every internal kind once (radicals round-robin)...
    int rr = 0;
    auto next_rad = [&rr, num_radicals] { return rr++ % num_radicals; };
    for (StructureKind kind : detail::internal_kinds()) {
        std::vector<CaptionTree> kids;
        if (kind == StructureKind::r) {
            kids.assign(2, CaptionTree::leaf(next_rad()));
        } else {
            kids.push_back(CaptionTree::leaf(next_rad()));
            kids.push_back(CaptionTree::leaf(next_rad()));
        }
        try_add(CaptionTree::node(kind, std::move(kids)));
    }
    // ...then every radical as a bare-leaf (`single`) class.
    for (int r = 0; r < num_radicals; ++r) try_add(CaptionTree::leaf(r));

    std::uint64_t attempts = 0;
    const std::uint64_t budget = 2000ull * static_cast<std::uint64_t>(num_classes) + 100000ull;
    while (static_cast<int>(out.size()) < num_classes) {
        if (++attempts > budget)
            throw ValueError("build_classes: insufficient diversity for requested class count");
        try_add(max_depth >= 2
                    ? detail::sample_tree(rng, num_radicals, max_depth)
                    : CaptionTree::leaf(static_cast<int>(rng.uniform_int(num_radicals))));
    }
    return out;
}

// Renders a dataset for a seen/unseen protocol: the first n_seen classes
// contribute `samples_per_class` training images plus `eval_per_class`
// held-out images; the remaining classes contribute `samples_per_class`
// unseen test images. Per-sample RNG substreams make generation order
// irrelevant.
inline data::Dataset generate_dataset(const std::vector<CaptionTree>& classes, int n_seen,
                                      int num_radicals, int samples_per_class, int eval_per_class,
                                      const JitterSpec& jit, std::uint64_t seed, int size = 32) {
    if (n_seen < 0 || n_seen > static_cast<int>(classes.size()))
        throw ValueError("generate_dataset: n_seen out of range");
    if (samples_per_class < 1) throw ValueError("generate_dataset: samples_per_class must be >= 1");
    data::Dataset ds;
    ds.image_size = size;
    ds.vocab = grammar::Vocabulary::build(radical_names(num_radicals));
    Rng base = Rng::substream(seed, stream::data);
    std::uint64_t serial = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const bool seen = static_cast<int>(c) < n_seen;
        char label[16];
        std::snprintf(label, sizeof label, "C%04zu", c);
        ds.classes.push_back({label, classes[c], seen});
        const grammar::TokenSequence caption = grammar::serialize(classes[c], ds.vocab);
        const int total = seen ? samples_per_class + eval_per_class : samples_per_class;
        for (int i = 0; i < total; ++i) {
            Rng rng = base.fork(serial++);
            data::Sample s;
            s.image = render_u8(classes[c], jit, rng, size);
            s.caption = caption;
            s.class_id = static_cast<std::uint32_t>(c);
            s.split = seen ? (i < samples_per_class ? data::Split::train : data::Split::test_seen)
                           : data::Split::test_unseen;
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

} // namespace radcap::glyph
