#pragma once

#include <random>

#include "touchformer/gradcheck.hpp"
#include "touchformer/model.hpp"

namespace touchformer {

// Smallest model that still exercises every block: d = 8, one cross and one
// intra layer, sequences of at most 6 steps.
inline TouchFormerConfig tiny_config() {
    TouchFormerConfig c;
    c.d = 8;
    c.heads = 2;
    c.cross_blocks = 1;
    c.intra_blocks = 1;
    c.kernel_sizes = {3, 3, 1, 3};
    c.channels = {1, 2, 2, 3};
    c.gate_hidden = 4;
    c.ffn_hidden = 16;
    c.num_classes = 3;
    c.embed_dim = 4;
    return c;
}

inline ModalityBundle tiny_bundle(const TouchFormerConfig& cfg, std::uint64_t seed,
                                  std::array<Index, kNumModalities> lengths = {6, 5, 4, 3}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    ModalityBundle b;
    for (Modality m : kModalities) {
        const auto i = index_of(m);
        Tensor<float> x({lengths[i], cfg.channels[i]});
        for (Index k = 0; k < x.size(); ++k) x[k] = dist(rng);
        b.set(m, std::move(x));
    }
    return b;
}

// Central-difference check of every parameter of a float64 model on one
// sample. The scalar probed is a fixed random weighting of logits and
// embedding, so every output entry feeds a distinct upstream gradient.
inline GradcheckReport model_gradcheck(const TouchFormerConfig& cfg, const ModalityBundle& bundle, std::uint64_t seed,
                                       const GradcheckOptions& opts = {}) {
    TouchFormer<double> model(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor<double> w_logits(Shape{cfg.num_classes});
    Tensor<double> w_embed(Shape{cfg.embed_dim});
    for (Index i = 0; i < w_logits.size(); ++i) w_logits[i] = dist(rng);
    for (Index i = 0; i < w_embed.size(); ++i) w_embed[i] = dist(rng);
    auto loss = [&](Tape<double>& tape) {
        ModelOutputs<double> out = model.forward(tape, bundle);
        return add(sum(mul(out.logits, tape.constant(w_logits))), sum(mul(out.embedding, tape.constant(w_embed))));
    };
    return gradcheck(loss, model.params().named(), opts);
}

}  // namespace touchformer
