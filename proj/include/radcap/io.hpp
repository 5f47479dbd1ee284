#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "radcap/config.hpp"
#include "radcap/dataset.hpp"
#include "radcap/error.hpp"
#include "radcap/grammar.hpp"
#include "radcap/model.hpp"
#include "radcap/trainer.hpp"

namespace radcap::io {

// ---- little-endian byte streams ----------------------------------------

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void bytes(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    const std::string& buffer() const { return buf_; }

    void to_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + path);
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("short write: " + path);
    }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data, std::string origin = "<memory>")
        : buf_(std::move(data)), origin_(std::move(origin)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open: " + path);
        std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(data), path);
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint16_t u16() {
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw IoError(origin_ + ": truncated at byte offset " + std::to_string(pos_));
    }
    std::string buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

// ---- vocabulary ----------------------------------------------------------

inline void write_vocab(ByteWriter& w, const grammar::Vocabulary& v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (const auto& tok : v.tokens()) w.str(tok);
}

// The on-disk order is sentinels, braces, structures, radicals, matching
// Vocabulary::build; only the radical tail is free.
inline grammar::Vocabulary read_vocab(ByteReader& r) {
    const std::uint32_t n = r.u32();
    std::vector<std::string> tokens;
    tokens.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) tokens.push_back(r.str());
    if (n < grammar::Vocabulary::kFirstRadical) throw IoError("vocabulary: too few tokens");
    std::vector<std::string> radicals(tokens.begin() + grammar::Vocabulary::kFirstRadical,
                                      tokens.end());
    grammar::Vocabulary v = grammar::Vocabulary::build(radicals);
    if (v.tokens() != tokens) throw IoError("vocabulary: unexpected reserved-token order");
    return v;
}

// ---- dataset archive ------------------------------------------------------

inline constexpr char kArchiveMagic[4] = {'D', 'R', 'A', 'N'};
inline constexpr std::uint32_t kArchiveVersion = 1;

inline void save_dataset(const data::Dataset& ds, const std::string& path) {
    ds.validate();
    ByteWriter w;
    w.bytes(kArchiveMagic, 4);
    w.u32(kArchiveVersion);
    w.u32(static_cast<std::uint32_t>(ds.samples.size()));
    w.u16(static_cast<std::uint16_t>(ds.image_size));
    w.u64(ds.vocab.hash());
    write_vocab(w, ds.vocab);
    for (const auto& s : ds.samples) {
        w.u32(s.class_id);
        w.u8(static_cast<std::uint8_t>(s.split));
        w.u16(static_cast<std::uint16_t>(s.caption.size()));
        for (int tk : s.caption) w.u16(static_cast<std::uint16_t>(tk));
        w.bytes(s.image.data(), s.image.size());
    }
    w.to_file(path);
}

inline data::Dataset load_dataset(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kArchiveMagic, 4) != 0) throw IoError(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kArchiveVersion)
        throw IoError(path + ": unsupported archive version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    data::Dataset ds;
    ds.image_size = r.u16();
    const std::uint64_t declared_hash = r.u64();
    ds.vocab = read_vocab(r);
    if (ds.vocab.hash() != declared_hash) throw IoError(path + ": vocabulary hash mismatch");
    const std::size_t img_bytes = static_cast<std::size_t>(ds.image_size) * ds.image_size;
    std::uint32_t max_class = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        data::Sample s;
        s.class_id = r.u32();
        const std::uint8_t split = r.u8();
        if (split > 2) throw IoError(path + ": bad split tag");
        s.split = static_cast<data::Split>(split);
        const std::uint16_t clen = r.u16();
        s.caption.resize(clen);
        for (std::uint16_t j = 0; j < clen; ++j) {
            s.caption[j] = r.u16();
            if (!ds.vocab.contains(s.caption[j])) throw IoError(path + ": caption token out of range");
        }
        s.image.resize(img_bytes);
        r.bytes(s.image.data(), img_bytes);
        max_class = std::max(max_class, s.class_id);
        ds.samples.push_back(std::move(s));
    }
    if (!r.at_end()) throw IoError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
    // Rebuild the class table from records.
    if (!ds.samples.empty()) {
        ds.classes.resize(max_class + 1);
        std::vector<bool> present(max_class + 1, false);
        for (const auto& s : ds.samples) {
            auto& c = ds.classes[s.class_id];
            if (!present[s.class_id]) {
                present[s.class_id] = true;
                char label[16];
                std::snprintf(label, sizeof label, "C%04u", s.class_id);
                c.label = label;
                c.tree = grammar::parse(s.caption, ds.vocab);
            }
            if (s.split == data::Split::train) c.seen = true;
        }
        for (std::uint32_t c = 0; c <= max_class; ++c)
            if (!present[c]) throw IoError(path + ": class id gap at " + std::to_string(c));
    }
    return ds;
}

inline void save_manifest(const data::Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "# classes: " << ds.classes.size() << ", samples: " << ds.samples.size() << "\n";
    out << "# label\tcaption\tsplit\n";
    for (const auto& c : ds.classes)
        out << c.label << '\t' << grammar::to_string(c.tree, ds.vocab) << '\t'
            << (c.seen ? "seen" : "unseen") << '\n';
    if (!out) throw IoError("short write: " + path);
}

// ---- checkpoint -----------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'D', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int best_epoch = -1;
    double best_wer = -1.0;
};

inline void write_encoder_cfg(ByteWriter& w, const EncoderConfig& c) {
    w.u32(static_cast<std::uint32_t>(c.growth_rate));
    w.u32(static_cast<std::uint32_t>(c.block_depth));
    w.u32(static_cast<std::uint32_t>(c.num_blocks));
    w.f64(c.transition_theta);
    w.u32(static_cast<std::uint32_t>(c.bottleneck_multiplier));
    w.u32(static_cast<std::uint32_t>(c.stem_filters));
    w.u32(static_cast<std::uint32_t>(c.stem_kernel));
    w.u32(static_cast<std::uint32_t>(c.stem_stride));
    w.u32(static_cast<std::uint32_t>(c.stem_pad));
    w.u32(static_cast<std::uint32_t>(c.stem_pool));
    w.u8(c.inter_block_pooling ? 1 : 0);
    w.f64(c.dropout_rate);
    w.u32(static_cast<std::uint32_t>(c.input_size));
}

inline EncoderConfig read_encoder_cfg(ByteReader& r) {
    EncoderConfig c;
    c.growth_rate = static_cast<int>(r.u32());
    c.block_depth = static_cast<int>(r.u32());
    c.num_blocks = static_cast<int>(r.u32());
    c.transition_theta = r.f64();
    c.bottleneck_multiplier = static_cast<int>(r.u32());
    c.stem_filters = static_cast<int>(r.u32());
    c.stem_kernel = static_cast<int>(r.u32());
    c.stem_stride = static_cast<int>(r.u32());
    c.stem_pad = static_cast<int>(r.u32());
    c.stem_pool = static_cast<int>(r.u32());
    c.inter_block_pooling = r.u8() != 0;
    c.dropout_rate = r.f64();
    c.input_size = static_cast<int>(r.u32());
    return c;
}

inline void write_decoder_dims(ByteWriter& w, const DecoderDims& d) {
    w.u32(static_cast<std::uint32_t>(d.m));
    w.u32(static_cast<std::uint32_t>(d.n));
    w.u32(static_cast<std::uint32_t>(d.n_att));
    w.u32(static_cast<std::uint32_t>(d.q));
    w.u32(static_cast<std::uint32_t>(d.cov_kernel));
}

inline DecoderDims read_decoder_dims(ByteReader& r) {
    DecoderDims d;
    d.m = static_cast<int>(r.u32());
    d.n = static_cast<int>(r.u32());
    d.n_att = static_cast<int>(r.u32());
    d.q = static_cast<int>(r.u32());
    d.cov_kernel = static_cast<int>(r.u32());
    return d;
}

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
    w.u64(static_cast<std::uint64_t>(t.numel()));
    for (float v : t.values()) w.f32(v);
}

inline void write_vector(ByteWriter& w, const std::string& name, const std::vector<float>& v) {
    w.str(name);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(v.size()));
    w.u64(v.size());
    for (float x : v) w.f32(x);
}

struct NamedTensorBlock {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

inline NamedTensorBlock read_tensor_block(ByteReader& r) {
    NamedTensorBlock b;
    b.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("checkpoint: implausible tensor rank");
    for (std::uint32_t i = 0; i < rank; ++i) b.shape.push_back(static_cast<int>(r.u32()));
    const std::uint64_t n = r.u64();
    if (n != static_cast<std::uint64_t>(shape_numel(b.shape)))
        throw IoError("checkpoint: tensor size mismatch for " + b.name);
    b.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) b.values[i] = r.f32();
    return b;
}

inline void save_checkpoint(const std::string& path, Model<float>& model, const EncoderConfig& enc,
                            const DecoderDims& dims, Adadelta<float>* opt, const CheckpointMeta& meta) {
    ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    write_encoder_cfg(w, enc);
    write_decoder_dims(w, dims);
    w.u64(meta.seed);
    w.u32(static_cast<std::uint32_t>(meta.best_epoch));
    w.f64(meta.best_wer);
    write_vocab(w, model.vocab());
    auto params = model.params();
    auto buffers = model.buffers();
    const bool with_opt = opt && opt->attached();
    std::uint32_t blocks = static_cast<std::uint32_t>(params.size() + buffers.size());
    if (with_opt) blocks += static_cast<std::uint32_t>(2 * params.size());
    w.u32(blocks);
    for (const auto& p : params) write_tensor(w, p.name, p.t);
    for (const auto& b : buffers) write_tensor(w, b.name, b.t);
    if (with_opt) {
        w.u8(1);
        w.f64(opt->rho());
        w.f64(opt->eps());
        for (std::size_t i = 0; i < params.size(); ++i) {
            write_vector(w, "opt.eg2." + params[i].name, opt->grad_accum()[i]);
            write_vector(w, "opt.ed2." + params[i].name, opt->update_accum()[i]);
        }
    } else {
        w.u8(0);
    }
    w.to_file(path);
}

struct LoadedCheckpoint {
    EncoderConfig enc;
    DecoderDims dims;
    CheckpointMeta meta;
    Model<float> model;
    Adadelta<float> opt;
    bool has_opt = false;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    LoadedCheckpoint ck;
    ck.enc = read_encoder_cfg(r);
    ck.dims = read_decoder_dims(r);
    ck.meta.seed = r.u64();
    ck.meta.best_epoch = static_cast<int>(r.u32());
    ck.meta.best_wer = r.f64();
    grammar::Vocabulary vocab = read_vocab(r);
    ck.model = Model<float>(ck.enc, ck.dims, vocab, ck.meta.seed);

    std::map<std::string, NamedTensorBlock> by_name;
    const std::uint32_t blocks = r.u32();
    // Parameter and buffer blocks first; optimizer blocks are announced by
    // the trailing flag but still counted in `blocks`.
    auto params = ck.model.params();
    auto buffers = ck.model.buffers();
    const std::size_t own = params.size() + buffers.size();
    for (std::size_t i = 0; i < std::min<std::size_t>(blocks, own); ++i) {
        NamedTensorBlock b = read_tensor_block(r);
        by_name.emplace(b.name, std::move(b));
    }
    auto restore = [&by_name, &path](std::vector<ParamRef<float>> refs) {
        for (auto& p : refs) {
            auto it = by_name.find(p.name);
            if (it == by_name.end()) throw IoError(path + ": missing tensor " + p.name);
            if (it->second.shape != p.t.shape())
                throw IoError(path + ": shape mismatch for " + p.name);
            p.t.values() = it->second.values;
        }
    };
    restore(params);
    restore(buffers);
    const bool with_opt = r.u8() != 0;
    if (with_opt) {
        const double rho = r.f64();
        const double eps = r.f64();
        ck.opt = Adadelta<float>(rho, eps);
        ck.opt.attach(params);
        for (std::size_t i = 0; i < params.size(); ++i) {
            NamedTensorBlock eg2 = read_tensor_block(r);
            NamedTensorBlock ed2 = read_tensor_block(r);
            if (eg2.name != "opt.eg2." + params[i].name || ed2.name != "opt.ed2." + params[i].name)
                throw IoError(path + ": optimizer state out of order at " + eg2.name);
            if (eg2.values.size() != static_cast<std::size_t>(params[i].t.numel()) ||
                ed2.values.size() != static_cast<std::size_t>(params[i].t.numel()))
                throw IoError(path + ": optimizer state size mismatch");
            ck.opt.grad_accum()[i] = std::move(eg2.values);
            ck.opt.update_accum()[i] = std::move(ed2.values);
        }
        ck.has_opt = true;
    }
    if (!r.at_end()) throw IoError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
    return ck;
}

// ---- GNT ingestion ---------------------------------------------------------

struct GntStats {
    int records = 0;
    int ingested = 0;
    int skipped_unknown_tag = 0;
};

enum class InvertMode { automatic, always, never };

// GNT records: u32 sample size, 2-byte tag code, u16 width, u16
// height, then width*height grayscale bytes. Tags are matched against
// dictionary labels as 4 lowercase hex digits.
inline std::pair<std::vector<data::Sample>, GntStats> ingest_gnt(const std::string& path,
                                                                 const grammar::Dictionary& dict,
                                                                 InvertMode invert = InvertMode::automatic,
                                                                 int out_size = 32) {
    ByteReader r = ByteReader::from_file(path);
    if (r.at_end()) throw IoError(path + ": empty GNT file");
    GntStats stats;
    struct Raw {
        int class_id;
        int w, h;
        std::vector<std::uint8_t> pixels;
    };
    std::vector<Raw> raws;
    while (!r.at_end()) {
        const std::size_t rec_off = r.offset();
        const std::uint32_t size = r.u32();
        std::uint8_t tag[2];
        r.bytes(tag, 2);
        const int w = r.u16();
        const int h = r.u16();
        if (w < 1 || h < 1 || size != 10u + static_cast<std::uint32_t>(w) * static_cast<std::uint32_t>(h))
            throw IoError(path + ": malformed GNT record at byte offset " + std::to_string(rec_off));
        Raw raw;
        raw.w = w;
        raw.h = h;
        raw.pixels.resize(static_cast<std::size_t>(w) * h);
        r.bytes(raw.pixels.data(), raw.pixels.size());
        ++stats.records;
        char label[8];
        std::snprintf(label, sizeof label, "%02x%02x", tag[0], tag[1]);
        auto it = dict.by_label.find(label);
        if (it == dict.by_label.end()) {
            ++stats.skipped_unknown_tag;
            continue;
        }
        raw.class_id = it->second;
        raws.push_back(std::move(raw));
    }
    // Inversion heuristic: GNT scans are ink-low on white; if the corpus
    // mean is bright, flip so ink = high.
    bool flip = invert == InvertMode::always;
    if (invert == InvertMode::automatic && !raws.empty()) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& raw : raws) {
            for (std::uint8_t p : raw.pixels) sum += p;
            n += raw.pixels.size();
        }
        flip = (sum / (255.0 * static_cast<double>(n))) > 0.5;
    }
    std::vector<data::Sample> out;
    out.reserve(raws.size());
    for (const auto& raw : raws) {
        const double scale = std::min(static_cast<double>(out_size) / raw.w,
                                      static_cast<double>(out_size) / raw.h);
        const int cw = std::max(1, static_cast<int>(std::lround(raw.w * scale)));
        const int ch = std::max(1, static_cast<int>(std::lround(raw.h * scale)));
        const int x0 = (out_size - cw) / 2;
        const int y0 = (out_size - ch) / 2;
        data::Sample s;
        s.image.assign(static_cast<std::size_t>(out_size) * out_size, 0);
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) {
                // Bilinear sample at the source location of this target pixel.
                const double sx = (x + 0.5) * raw.w / cw - 0.5;
                const double sy = (y + 0.5) * raw.h / ch - 0.5;
                const int ix = static_cast<int>(std::floor(sx));
                const int iy = static_cast<int>(std::floor(sy));
                const double fx = sx - ix, fy = sy - iy;
                auto at = [&raw](int xx, int yy) {
                    xx = std::clamp(xx, 0, raw.w - 1);
                    yy = std::clamp(yy, 0, raw.h - 1);
                    return static_cast<double>(
                        raw.pixels[static_cast<std::size_t>(yy) * raw.w + xx]);
                };
                double v = at(ix, iy) * (1 - fx) * (1 - fy) + at(ix + 1, iy) * fx * (1 - fy) +
                           at(ix, iy + 1) * (1 - fx) * fy + at(ix + 1, iy + 1) * fx * fy;
                if (flip) v = 255.0 - v;
                s.image[static_cast<std::size_t>(y0 + y) * out_size + (x0 + x)] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
            }
        s.class_id = static_cast<std::uint32_t>(raw.class_id);
        s.split = data::Split::test_seen;
        s.caption = grammar::serialize(dict.trees[static_cast<std::size_t>(raw.class_id)], dict.vocab);
        out.push_back(std::move(s));
        ++stats.ingested;
    }
    return {std::move(out), stats};
}

// ---- attention export and small text formats --------------------------------

struct PgmImage {
    int w = 0, h = 0;
    std::vector<std::uint8_t> pixels;
};

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw IoError(path + ": not a P5 PGM");
    auto next_int = [&in, &path]() {
        // Skip whitespace and `#` comment lines between header fields.
        int c;
        while ((c = in.peek()) != EOF) {
            if (c == '#') {
                std::string comment;
                std::getline(in, comment);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        int v;
        if (!(in >> v)) throw IoError(path + ": malformed PGM header");
        return v;
    };
    PgmImage img;
    img.w = next_int();
    img.h = next_int();
    const int maxval = next_int();
    if (img.w < 1 || img.h < 1 || maxval != 255) throw IoError(path + ": unsupported PGM header");
    in.get(); // single whitespace after maxval
    img.pixels.resize(static_cast<std::size_t>(img.w) * img.h);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw IoError(path + ": truncated PGM payload");
    return img;
}

inline void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int w, int h) {
    if (pixels.size() != static_cast<std::size_t>(w) * h) throw ValueError("write_pgm: size mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("short write: " + path);
}

// One PGM per decoding step (attention bilinearly upsampled onto the
// input) plus a CSV of the raw alpha rows.
template <typename T>
void export_attention(const std::vector<std::vector<T>>& trace, const std::vector<std::uint8_t>& image,
                      int image_size, int grid_h, int grid_w, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / "attention.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot open for writing: " + dir + "/attention.csv");
    for (std::size_t step = 0; step < trace.size(); ++step) {
        const auto& alpha = trace[step];
        if (alpha.size() != static_cast<std::size_t>(grid_h) * grid_w)
            throw ValueError("export_attention: alpha length mismatch");
        for (std::size_t i = 0; i < alpha.size(); ++i)
            csv << (i ? "," : "") << static_cast<double>(alpha[i]);
        csv << "\n";
        T amax = alpha[0];
        for (T a : alpha) amax = std::max(amax, a);
        std::vector<std::uint8_t> frame(static_cast<std::size_t>(image_size) * image_size);
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                const double gy = (y + 0.5) * grid_h / image_size - 0.5;
                const double gx = (x + 0.5) * grid_w / image_size - 0.5;
                const int ix = static_cast<int>(std::floor(gx));
                const int iy = static_cast<int>(std::floor(gy));
                const double fx = gx - ix, fy = gy - iy;
                auto at = [&alpha, grid_h, grid_w](int xx, int yy) {
                    xx = std::clamp(xx, 0, grid_w - 1);
                    yy = std::clamp(yy, 0, grid_h - 1);
                    return static_cast<double>(alpha[static_cast<std::size_t>(yy) * grid_w + xx]);
                };
                const double a = at(ix, iy) * (1 - fx) * (1 - fy) + at(ix + 1, iy) * fx * (1 - fy) +
                                 at(ix, iy + 1) * (1 - fx) * fy + at(ix + 1, iy + 1) * fx * fy;
                const double anorm = amax > T(0) ? a / static_cast<double>(amax) : 0.0;
                const double img = image[static_cast<std::size_t>(y) * image_size + x] / 255.0;
                frame[static_cast<std::size_t>(y) * image_size + x] =
                    static_cast<std::uint8_t>(std::lround(255.0 * (0.5 * img + 0.5 * anorm)));
            }
        char name[32];
        std::snprintf(name, sizeof name, "step_%03zu.pgm", step);
        write_pgm((fs::path(dir) / name).string(), frame, image_size, image_size);
    }
    if (!csv) throw IoError("short write: " + dir + "/attention.csv");
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
    if (!out) throw IoError("short write: " + path);
}

} // namespace radcap::io
