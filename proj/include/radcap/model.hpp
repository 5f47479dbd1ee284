#pragma once

#include <utility>
#include <vector>

#include "radcap/config.hpp"
#include "radcap/decoder.hpp"
#include "radcap/encoder.hpp"
#include "radcap/grammar.hpp"
#include "radcap/params.hpp"
#include "radcap/rng.hpp"

namespace radcap {

// Encoder + decoder + vocabulary. All parameter initialization draws from
// the `init` substream of the run seed, in construction order, so a seed
// pins every weight.
template <typename T>
class Model {
public:
    Model() = default;

    Model(EncoderConfig enc_cfg, DecoderDims dims, grammar::Vocabulary vocab, std::uint64_t seed)
        : vocab_(std::move(vocab)) {
        Rng rng = Rng::substream(seed, stream::init);
        encoder_ = DenseEncoder<T>(enc_cfg, rng);
        decoder_ = AttnDecoder<T>(dims, vocab_.size(), enc_cfg.out_channels(), rng);
    }

    DenseEncoder<T>& encoder() { return encoder_; }
    const DenseEncoder<T>& encoder() const { return encoder_; }
    AttnDecoder<T>& decoder() { return decoder_; }
    const AttnDecoder<T>& decoder() const { return decoder_; }
    const grammar::Vocabulary& vocab() const { return vocab_; }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        encoder_.collect_params(out);
        decoder_.collect_params(out);
        return out;
    }

    std::vector<ParamRef<T>> buffers() {
        std::vector<ParamRef<T>> out;
        encoder_.collect_buffers(out);
        return out;
    }

    void zero_grads() {
        for (auto& p : params()) p.t.zero_grad();
    }

    // Teacher-forced batch objective: mean over batch rows of the summed
    // per-sequence NLL. images [B,1,S,S]; targets end with <eos>.
    Tensor<T> batch_loss(Tape<T>* tape, const Tensor<T>& images,
                         const std::vector<grammar::TokenSequence>& targets, bool training,
                         Rng& dropout_rng) {
        AnnotationGrid<T> grid = encoder_.encode(tape, images, training, dropout_rng);
        AttendCache<T> cache = decoder_.make_cache(tape, grid);
        return decoder_.batch_nll(tape, cache, targets, vocab_.sos(), vocab_.eos());
    }

    // Eval-mode encoding of one or more images for decoding.
    AttendCache<T> encode_eval(const Tensor<T>& images) {
        Rng dummy(0);
        AnnotationGrid<T> grid = encoder_.encode(nullptr, images, false, dummy);
        return decoder_.make_cache(nullptr, grid);
    }

    // -sum_t log p(y_t | y_<t, X) for a single image, eval mode. The
    // target must end with <eos>.
    double sequence_nll(const Tensor<T>& image, const grammar::TokenSequence& target) {
        AttendCache<T> cache = encode_eval(image);
        Tensor<T> loss = decoder_.batch_nll(nullptr, cache, {target}, vocab_.sos(), vocab_.eos());
        return static_cast<double>(loss.item());
    }

private:
    grammar::Vocabulary vocab_;
    DenseEncoder<T> encoder_;
    AttnDecoder<T> decoder_;
};

} // namespace radcap
