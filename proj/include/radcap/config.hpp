#pragma once

#include <cstdint>
#include <string>

#include "radcap/error.hpp"

namespace radcap {

// Dense encoder hyperparameters. paper() is the full-scale network;
// desk() is a small configuration that trains on a CPU in minutes and is
// the default for tests and experiments.
struct EncoderConfig {
    int growth_rate = 64;
    int block_depth = 16;
    int num_blocks = 3;
    double transition_theta = 0.5;
    int bottleneck_multiplier = 4;
    int stem_filters = 64;
    int stem_kernel = 7;
    int stem_stride = 2;
    int stem_pad = 3;
    int stem_pool = 2;
    bool inter_block_pooling = false;
    double dropout_rate = 0.2;
    int input_size = 32;

    static EncoderConfig paper() { return {}; }

    static EncoderConfig desk() {
        EncoderConfig c;
        c.growth_rate = 12;
        c.block_depth = 4;
        c.num_blocks = 2;
        return c;
    }

    void validate() const {
        if (growth_rate < 1 || block_depth < 1 || num_blocks < 1)
            throw ValueError("encoder config: sizes must be positive");
        if (!(transition_theta > 0.0 && transition_theta <= 1.0))
            throw ValueError("encoder config: transition_theta must be in (0,1]");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ValueError("encoder config: dropout_rate must be in [0,1)");
    }

    // Channel count after each block's transition:
    // c <- floor(theta * (c + D*k)) repeated per block.
    int out_channels() const {
        int c = stem_filters;
        for (int b = 0; b < num_blocks; ++b) {
            c += block_depth * growth_rate;
            c = static_cast<int>(c * transition_theta);
        }
        return c;
    }

    int out_hw() const { return input_size / stem_stride / stem_pool; }
};

// Decoder dimensions: m embedding, n GRU hidden, n_att attention, q
// coverage feature maps (5x5 kernel, pad 2).
struct DecoderDims {
    int m = 256;
    int n = 256;
    int n_att = 256;
    int q = 128;
    int cov_kernel = 5;

    static DecoderDims paper() { return {}; }

    static DecoderDims desk() {
        DecoderDims d;
        d.m = 64;
        d.n = 64;
        d.n_att = 64;
        d.q = 32;
        return d;
    }

    void validate() const {
        if (m < 1 || n < 1 || n_att < 1 || q < 1) throw ValueError("decoder dims: must be positive");
        if (cov_kernel < 1 || cov_kernel % 2 == 0)
            throw ValueError("decoder dims: coverage kernel must be odd");
    }
};

struct TrainConfig {
    int batch_size = 32;
    double rho = 0.95;
    double eps = 1e-8;
    double clip_norm = 100.0;
    double weight_decay = 1e-4;
    int max_epochs = 30;
    std::uint64_t seed = 1;
    double val_fraction = 0.1;
    int patience = 0;       // epochs without val-WER improvement before stopping; 0 = off
    int max_len = 64;       // decode cap for validation and inference
    bool quiet = false;

    void validate() const {
        if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
        if (weight_decay < 0.0) throw ValueError("train config: weight_decay must be >= 0");
        if (!(rho > 0.0 && rho < 1.0)) throw ValueError("train config: rho must be in (0,1)");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw ValueError("train config: val_fraction must be in [0,1)");
        if (max_epochs < 1) throw ValueError("train config: max_epochs must be >= 1");
    }
};

} // namespace radcap
