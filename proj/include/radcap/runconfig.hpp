#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "radcap/beam.hpp"
#include "radcap/config.hpp"
#include "radcap/error.hpp"

namespace radcap {

// Declarative run configuration: `key = value` lines, `#` comments.
// Anything that affects the science lives here; command-line flags carry
// only paths and seed overrides. Unknown keys are rejected so a typo
// cannot silently fall back to a default.
struct RunConfig {
    std::string preset = "desk";
    EncoderConfig enc = EncoderConfig::desk();
    DecoderDims dims = DecoderDims::desk();
    TrainConfig train;
    BeamConfig beam;

    static RunConfig from_lines(const std::vector<std::string>& lines) {
        RunConfig rc;
        int lineno = 0;
        for (const auto& raw : lines) {
            ++lineno;
            std::string line = raw;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t");
                return s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ValueError("config line " + std::to_string(lineno) + ": expected key=value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            try {
                rc.set(key, value);
            } catch (const Error& e) {
                throw ValueError("config line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        rc.enc.validate();
        rc.dims.validate();
        rc.train.validate();
        return rc;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        return from_lines(lines);
    }

    // `preset` resets encoder and decoder dims, so it must precede any
    // encoder./decoder. override it should not clobber.
    void set(const std::string& key, const std::string& value) {
        if (key == "preset") {
            preset = value;
            if (value == "paper") {
                enc = EncoderConfig::paper();
                dims = DecoderDims::paper();
            } else if (value == "desk") {
                enc = EncoderConfig::desk();
                dims = DecoderDims::desk();
            } else {
                throw ValueError("unknown preset: " + value + " (expected paper|desk)");
            }
        } else if (key == "encoder.growth_rate") enc.growth_rate = parse_int(key, value);
        else if (key == "encoder.block_depth") enc.block_depth = parse_int(key, value);
        else if (key == "encoder.num_blocks") enc.num_blocks = parse_int(key, value);
        else if (key == "encoder.transition_theta") enc.transition_theta = parse_double(key, value);
        else if (key == "encoder.bottleneck_multiplier") enc.bottleneck_multiplier = parse_int(key, value);
        else if (key == "encoder.stem_filters") enc.stem_filters = parse_int(key, value);
        else if (key == "encoder.stem_kernel") enc.stem_kernel = parse_int(key, value);
        else if (key == "encoder.stem_stride") enc.stem_stride = parse_int(key, value);
        else if (key == "encoder.stem_pad") enc.stem_pad = parse_int(key, value);
        else if (key == "encoder.stem_pool") enc.stem_pool = parse_int(key, value);
        else if (key == "encoder.inter_block_pooling") enc.inter_block_pooling = parse_bool(key, value);
        else if (key == "encoder.dropout_rate") enc.dropout_rate = parse_double(key, value);
        else if (key == "encoder.input_size") enc.input_size = parse_int(key, value);
        else if (key == "decoder.m") dims.m = parse_int(key, value);
        else if (key == "decoder.n") dims.n = parse_int(key, value);
        else if (key == "decoder.n_att") dims.n_att = parse_int(key, value);
        else if (key == "decoder.q") dims.q = parse_int(key, value);
        else if (key == "decoder.cov_kernel") dims.cov_kernel = parse_int(key, value);
        else if (key == "train.batch_size") train.batch_size = parse_int(key, value);
        else if (key == "train.rho") train.rho = parse_double(key, value);
        else if (key == "train.eps") train.eps = parse_double(key, value);
        else if (key == "train.clip_norm") train.clip_norm = parse_double(key, value);
        else if (key == "train.weight_decay") train.weight_decay = parse_double(key, value);
        else if (key == "train.max_epochs") train.max_epochs = parse_int(key, value);
        else if (key == "train.seed") train.seed = parse_u64(key, value);
        else if (key == "train.val_fraction") train.val_fraction = parse_double(key, value);
        else if (key == "train.patience") train.patience = parse_int(key, value);
        else if (key == "train.max_len") train.max_len = parse_int(key, value);
        else if (key == "train.quiet") train.quiet = parse_bool(key, value);
        else if (key == "beam.size") beam.beam_size = parse_int(key, value);
        else if (key == "beam.max_len") beam.max_len = parse_int(key, value);
        else if (key == "beam.length_normalize") beam.length_normalize = parse_bool(key, value);
        else throw ValueError("unknown config key: " + key);
    }

    // Every effective value, echoed for the audit trail.
    std::string echo() const {
        char buf[2048];
        std::snprintf(
            buf, sizeof buf,
            "preset = %s\n"
            "encoder.growth_rate = %d\nencoder.block_depth = %d\nencoder.num_blocks = %d\n"
            "encoder.transition_theta = %g\nencoder.bottleneck_multiplier = %d\n"
            "encoder.stem_filters = %d\nencoder.stem_kernel = %d\nencoder.stem_stride = %d\n"
            "encoder.stem_pad = %d\nencoder.stem_pool = %d\nencoder.inter_block_pooling = %s\n"
            "encoder.dropout_rate = %g\nencoder.input_size = %d\n"
            "decoder.m = %d\ndecoder.n = %d\ndecoder.n_att = %d\ndecoder.q = %d\n"
            "decoder.cov_kernel = %d\n"
            "train.batch_size = %d\ntrain.rho = %g\ntrain.eps = %g\ntrain.clip_norm = %g\n"
            "train.weight_decay = %g\ntrain.max_epochs = %d\ntrain.seed = %llu\n"
            "train.val_fraction = %g\ntrain.patience = %d\ntrain.max_len = %d\ntrain.quiet = %s\n"
            "beam.size = %d\nbeam.max_len = %d\nbeam.length_normalize = %s\n",
            preset.c_str(), enc.growth_rate, enc.block_depth, enc.num_blocks, enc.transition_theta,
            enc.bottleneck_multiplier, enc.stem_filters, enc.stem_kernel, enc.stem_stride,
            enc.stem_pad, enc.stem_pool, enc.inter_block_pooling ? "true" : "false",
            enc.dropout_rate, enc.input_size, dims.m, dims.n, dims.n_att, dims.q, dims.cov_kernel,
            train.batch_size, train.rho, train.eps, train.clip_norm, train.weight_decay,
            train.max_epochs, static_cast<unsigned long long>(train.seed), train.val_fraction,
            train.patience, train.max_len, train.quiet ? "true" : "false", beam.beam_size,
            beam.max_len, beam.length_normalize ? "true" : "false");
        return buf;
    }

private:
    static int parse_int(const std::string& key, const std::string& v) {
        std::size_t used = 0;
        int out;
        try {
            out = std::stoi(v, &used);
        } catch (const std::exception&) {
            throw ValueError(key + ": not an integer: " + v);
        }
        if (used != v.size()) throw ValueError(key + ": not an integer: " + v);
        return out;
    }
    static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
        std::size_t used = 0;
        unsigned long long out;
        try {
            out = std::stoull(v, &used);
        } catch (const std::exception&) {
            throw ValueError(key + ": not an unsigned integer: " + v);
        }
        if (used != v.size()) throw ValueError(key + ": not an unsigned integer: " + v);
        return out;
    }
    static double parse_double(const std::string& key, const std::string& v) {
        std::size_t used = 0;
        double out;
        try {
            out = std::stod(v, &used);
        } catch (const std::exception&) {
            throw ValueError(key + ": not a number: " + v);
        }
        if (used != v.size()) throw ValueError(key + ": not a number: " + v);
        return out;
    }
    static bool parse_bool(const std::string& key, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ValueError(key + ": not a boolean (true|false): " + v);
    }
};

} // namespace radcap
