#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radcap/error.hpp"
#include "radcap/grammar.hpp"
#include "radcap/tensor.hpp"

namespace radcap::data {

enum class Split : std::uint8_t {
    train = 0,       // training images of seen classes
    test_seen = 1,   // held-out images of seen classes
    test_unseen = 2, // images of classes whose captions never appear in training
};

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test_seen: return "test_seen";
        case Split::test_unseen: return "test_unseen";
    }
    return "?";
}

struct Sample {
    std::vector<std::uint8_t> image; // image_size^2 grayscale, ink = high
    grammar::TokenSequence caption;  // serialized caption, sentinels excluded
    std::uint32_t class_id = 0;
    Split split = Split::train;
};

struct ClassInfo {
    std::string label;
    grammar::CaptionTree tree;
    bool seen = false;
};

struct Dataset {
    int image_size = 32;
    grammar::Vocabulary vocab;
    std::vector<ClassInfo> classes;
    std::vector<Sample> samples;

    std::vector<int> indices_of(Split s) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].split == s) out.push_back(static_cast<int>(i));
        return out;
    }

    void validate() const {
        for (const auto& s : samples) {
            if (static_cast<int>(s.image.size()) != image_size * image_size)
                throw ValueError("dataset: image byte count mismatch");
            if (s.class_id >= classes.size() && !classes.empty())
                throw ValueError("dataset: class id out of range");
            for (int tk : s.caption)
                if (!vocab.contains(tk)) throw ValueError("dataset: caption token out of range");
        }
    }
};

// Pack selected samples as [B,1,S,S] in [0,1].
template <typename T>
Tensor<T> images_to_tensor(const Dataset& ds, const std::vector<int>& idx) {
    const int S = ds.image_size;
    Tensor<T> t({static_cast<int>(idx.size()), 1, S, S});
    T* v = t.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& img = ds.samples[static_cast<std::size_t>(idx[b])].image;
        for (int i = 0; i < S * S; ++i)
            v[static_cast<std::int64_t>(b) * S * S + i] =
                static_cast<T>(img[static_cast<std::size_t>(i)]) / T(255);
    }
    return t;
}

// Caption with <eos> appended: the teacher-forcing target.
inline grammar::TokenSequence target_of(const Dataset& ds, int sample_idx) {
    grammar::TokenSequence t = ds.samples[static_cast<std::size_t>(sample_idx)].caption;
    t.push_back(ds.vocab.eos());
    return t;
}

} // namespace radcap::data
