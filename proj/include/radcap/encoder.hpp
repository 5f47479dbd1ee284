#pragma once

#include <string>
#include <vector>

#include "radcap/config.hpp"
#include "radcap/ops.hpp"
#include "radcap/params.hpp"

namespace radcap {

// Encoder output: annotation vectors a_1..a_L laid out as [N, L, Dv] with
// L = H*W of the final feature map.
template <typename T>
struct AnnotationGrid {
    Tensor<T> a;
    int H = 0;
    int W = 0;

    int batch() const { return a.dim(0); }
    int L() const { return a.dim(1); }
    int Dv() const { return a.dim(2); }
};

namespace detail {

// conv -> batchnorm -> relu (-> dropout in training).
template <typename T>
struct ConvBn {
    Tensor<T> w;
    Tensor<T> gamma, beta, run_mean, run_var;
    int stride = 1;
    int pad = 0;

    void init(int c_out, int c_in, int k, int stride_, int pad_, Rng& rng) {
        stride = stride_;
        pad = pad_;
        w = uniform_param<T>({c_out, c_in, k, k}, c_in * k * k, rng);
        gamma = const_param<T>({c_out}, T(1));
        beta = const_param<T>({c_out}, T(0));
        run_mean = Tensor<T>({c_out}, T(0));
        run_var = Tensor<T>({c_out}, T(1));
    }

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training, double dropout_rate,
                      Rng& dropout_rng) {
        Tensor<T> y = ops::conv2d(tape, x, w, stride, pad);
        y = ops::batchnorm2d(tape, y, gamma, beta, run_mean, run_var, training);
        y = ops::relu(tape, y);
        return ops::dropout(tape, y, static_cast<T>(dropout_rate), training, dropout_rng);
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
        out.push_back({prefix + ".w", w, true});
        out.push_back({prefix + ".gamma", gamma, false});
        out.push_back({prefix + ".beta", beta, false});
    }

    void collect_buffers(const std::string& prefix, std::vector<ParamRef<T>>& out) {
        out.push_back({prefix + ".run_mean", run_mean, false});
        out.push_back({prefix + ".run_var", run_var, false});
    }
};

// One densely connected layer: 1x1 bottleneck to 4k maps, then 3x3 to k
// maps; the k maps are concatenated onto the running feature stack.
template <typename T>
struct DenseLayer {
    ConvBn<T> bottleneck;
    ConvBn<T> conv;

    void init(int c_in, int growth, int bottleneck_mult, Rng& rng) {
        bottleneck.init(bottleneck_mult * growth, c_in, 1, 1, 0, rng);
        conv.init(growth, bottleneck_mult * growth, 3, 1, 1, rng);
    }
};

} // namespace detail

// Dense convolutional encoder: 7x7/stride-2 stem with 2x2 max pooling,
// then dense blocks each followed by a 1x1 transition that compresses
// channels by theta. Spatial size is preserved after the stem.
template <typename T>
class DenseEncoder {
public:
    DenseEncoder() = default;

    DenseEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        stem_.init(cfg.stem_filters, 1, cfg.stem_kernel, cfg.stem_stride, cfg.stem_pad, rng);
        int c = cfg.stem_filters;
        blocks_.resize(static_cast<std::size_t>(cfg.num_blocks));
        transitions_.resize(static_cast<std::size_t>(cfg.num_blocks));
        for (int b = 0; b < cfg.num_blocks; ++b) {
            auto& layers = blocks_[static_cast<std::size_t>(b)];
            layers.resize(static_cast<std::size_t>(cfg.block_depth));
            for (int l = 0; l < cfg.block_depth; ++l) {
                layers[static_cast<std::size_t>(l)].init(c, cfg.growth_rate, cfg.bottleneck_multiplier,
                                                         rng);
                c += cfg.growth_rate;
            }
            const int c_out = static_cast<int>(c * cfg.transition_theta);
            transitions_[static_cast<std::size_t>(b)].init(c_out, c, 1, 1, 0, rng);
            c = c_out;
        }
    }

    const EncoderConfig& config() const { return cfg_; }

    AnnotationGrid<T> encode(Tape<T>* tape, const Tensor<T>& x, bool training, Rng& dropout_rng) {
        if (x.rank() != 4 || x.dim(1) != 1)
            throw ShapeError("encoder: expected [N,1,H,W], got " + shape_str(x.shape()));
        if (x.dim(2) != cfg_.input_size || x.dim(3) != cfg_.input_size)
            throw ShapeError("encoder: expected " + std::to_string(cfg_.input_size) + "x" +
                             std::to_string(cfg_.input_size) + " input, got " + shape_str(x.shape()));
        Tensor<T> h = stem_.forward(tape, x, training, cfg_.dropout_rate, dropout_rng);
        h = ops::maxpool2d(tape, h, cfg_.stem_pool, cfg_.stem_pool);
        for (int b = 0; b < cfg_.num_blocks; ++b) {
            for (auto& layer : blocks_[static_cast<std::size_t>(b)]) {
                Tensor<T> y = layer.bottleneck.forward(tape, h, training, cfg_.dropout_rate, dropout_rng);
                y = layer.conv.forward(tape, y, training, cfg_.dropout_rate, dropout_rng);
                h = ops::concat_channels(tape, {h, y});
            }
            h = transitions_[static_cast<std::size_t>(b)].forward(tape, h, training, cfg_.dropout_rate,
                                                                  dropout_rng);
            if (cfg_.inter_block_pooling && b + 1 < cfg_.num_blocks) h = ops::maxpool2d(tape, h, 2, 2);
        }
        AnnotationGrid<T> grid;
        grid.H = h.dim(2);
        grid.W = h.dim(3);
        grid.a = ops::channels_last(tape, h);
        return grid;
    }

    void collect_params(std::vector<ParamRef<T>>& out) {
        stem_.collect_params("enc.stem", out);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (std::size_t l = 0; l < blocks_[b].size(); ++l) {
                const std::string p =
                    "enc.block" + std::to_string(b) + ".layer" + std::to_string(l);
                blocks_[b][l].bottleneck.collect_params(p + ".bottleneck", out);
                blocks_[b][l].conv.collect_params(p + ".conv", out);
            }
            transitions_[b].collect_params("enc.transition" + std::to_string(b), out);
        }
    }

    void collect_buffers(std::vector<ParamRef<T>>& out) {
        stem_.collect_buffers("enc.stem", out);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (std::size_t l = 0; l < blocks_[b].size(); ++l) {
                const std::string p =
                    "enc.block" + std::to_string(b) + ".layer" + std::to_string(l);
                blocks_[b][l].bottleneck.collect_buffers(p + ".bottleneck", out);
                blocks_[b][l].conv.collect_buffers(p + ".conv", out);
            }
            transitions_[b].collect_buffers("enc.transition" + std::to_string(b), out);
        }
    }

private:
    EncoderConfig cfg_;
    detail::ConvBn<T> stem_;
    std::vector<std::vector<detail::DenseLayer<T>>> blocks_;
    std::vector<detail::ConvBn<T>> transitions_;
};

} // namespace radcap
