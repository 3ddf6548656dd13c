#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "touchformer/bundle.hpp"
#include "touchformer/gating.hpp"
#include "touchformer/layers.hpp"

namespace touchformer {

struct TouchFormerConfig {
    Index d = 40;
    Index heads = 4;
    Index cross_blocks = 2;
    Index intra_blocks = 2;
    std::array<Index, kNumModalities> kernel_sizes{9, 3, 3, 5};  // S, N, F, A
    std::array<Index, kNumModalities> channels{1, 16, 16, 3};
    Index gate_hidden = 32;
    Index ffn_hidden = 0;  // 0 selects 4 * d
    double gate_th = 0.5;
    double gate_bias_init = 2.0;  // initial gate logit offset; g starts near 0.88
    double tau = 0.07;
    double lambda = 0.1;
    Index num_classes = 8;
    Index embed_dim = 64;
    bool mag_enabled = true;
    bool cer_enabled = true;
    double dropout = 0.0;

    Index ffn_width() const { return ffn_hidden > 0 ? ffn_hidden : 4 * d; }

    void validate() const {
        if (d <= 0 || d % 2 != 0) throw ValidationError("config: d must be a positive even number");
        if (heads <= 0 || d % heads != 0) throw ValidationError("config: heads must divide d");
        if (cross_blocks < 0 || intra_blocks < 0) throw ValidationError("config: block depths must be >= 0");
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            if (kernel_sizes[m] <= 0 || kernel_sizes[m] % 2 == 0) {
                throw ValidationError("config: kernel sizes must be odd and positive");
            }
            if (channels[m] <= 0) throw ValidationError("config: channel counts must be positive");
        }
        if (gate_hidden <= 0 || embed_dim <= 0 || num_classes < 2) {
            throw ValidationError("config: gate_hidden, embed_dim must be positive and num_classes >= 2");
        }
        if (gate_th < 0.0 || gate_th > 1.0) throw ValidationError("config: gate_th must lie in [0, 1]");
        if (!std::isfinite(gate_bias_init)) throw ValidationError("config: gate_bias_init must be finite");
        if (!(tau > 0.0)) throw ValidationError("config: tau must be > 0");
        if (lambda < 0.0) throw ValidationError("config: lambda must be >= 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("config: dropout must lie in [0, 1)");
    }
};

struct ForwardOptions {
    // Modalities treated as absent regardless of bundle contents.
    ModalityMask force_discard{};
    // Non-null enables training-mode dropout drawing from this generator.
    Rng* dropout_rng = nullptr;
};

template <typename Scalar>
struct ModelOutputs {
    Var<Scalar> logits;     // [num_classes]
    Var<Scalar> embedding;  // [embed_dim], unit l2 norm
    GateDecision gates;
};

template <typename Scalar>
struct ForwardOutput {
    Tensor<Scalar> logits;
    Tensor<Scalar> embedding;
    GateDecision gates;
};

template <typename Scalar>
using ModalityVars = std::array<std::optional<Var<Scalar>>, kNumModalities>;

// One cross-modal layer for a directed (target <- source) pair.
template <typename Scalar>
struct CrossLayer {
    LayerNormBlock<Scalar> norm_q;
    LayerNormBlock<Scalar> norm_kv;
    MultiHeadAttention<Scalar> attn;

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        norm_q.for_each_parameter(prefix + ".norm_q", fn);
        norm_kv.for_each_parameter(prefix + ".norm_kv", fn);
        attn.for_each_parameter(prefix + ".attn", fn);
    }
};

template <typename Scalar>
struct FeedForwardLayer {
    LayerNormBlock<Scalar> norm;
    FeedForward<Scalar> ffn;

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        norm.for_each_parameter(prefix + ".norm", fn);
        ffn.for_each_parameter(prefix + ".ffn", fn);
    }
};

template <typename Scalar>
struct SelfAttentionLayer {
    LayerNormBlock<Scalar> norm;
    MultiHeadAttention<Scalar> attn;
    FeedForwardLayer<Scalar> ff;

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        norm.for_each_parameter(prefix + ".norm", fn);
        attn.for_each_parameter(prefix + ".attn", fn);
        ff.for_each_parameter(prefix + ".ff", fn);
    }
};

template <typename Scalar>
struct TouchFormerParams {
    std::array<GateNet<Scalar>, kNumModalities> gates;
    std::array<TemporalConv<Scalar>, kNumModalities> convs;
    // cross[target][source]; the diagonal stays empty.
    std::array<std::array<std::vector<CrossLayer<Scalar>>, kNumModalities>, kNumModalities> cross;
    std::array<std::vector<FeedForwardLayer<Scalar>>, kNumModalities> cross_ff;
    std::array<std::vector<SelfAttentionLayer<Scalar>>, kNumModalities> intra;
    LinearLayer<Scalar> classifier;  // 4d -> num_classes
    LinearLayer<Scalar> projection;  // 4d -> embed_dim

    TouchFormerParams() = default;

    TouchFormerParams(const TouchFormerConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        for (Modality m : kModalities) {
            const auto i = index_of(m);
            gates[i] = GateNet<Scalar>(cfg.channels[i], cfg.gate_hidden, rng, cfg.gate_bias_init);
            convs[i] = TemporalConv<Scalar>(cfg.kernel_sizes[i], cfg.channels[i], cfg.d, rng);
        }
        for (Modality t : kModalities) {
            for (Modality s : kModalities) {
                if (t == s) continue;
                auto& stack = cross[index_of(t)][index_of(s)];
                for (Index l = 0; l < cfg.cross_blocks; ++l) {
                    stack.push_back({LayerNormBlock<Scalar>(cfg.d), LayerNormBlock<Scalar>(cfg.d),
                                     MultiHeadAttention<Scalar>(cfg.d, cfg.heads, rng)});
                }
            }
            for (Index l = 0; l < cfg.cross_blocks; ++l) {
                cross_ff[index_of(t)].push_back(
                    {LayerNormBlock<Scalar>(cfg.d), FeedForward<Scalar>(cfg.d, cfg.ffn_width(), rng)});
            }
            for (Index l = 0; l < cfg.intra_blocks; ++l) {
                intra[index_of(t)].push_back({LayerNormBlock<Scalar>(cfg.d),
                                              MultiHeadAttention<Scalar>(cfg.d, cfg.heads, rng),
                                              {LayerNormBlock<Scalar>(cfg.d),
                                               FeedForward<Scalar>(cfg.d, cfg.ffn_width(), rng)}});
            }
        }
        const Index fused = static_cast<Index>(kNumModalities) * cfg.d;
        classifier = LinearLayer<Scalar>(fused, cfg.num_classes, rng);
        projection = LinearLayer<Scalar>(fused, cfg.embed_dim, rng);
    }

    // Visits every learnable tensor with a unique dotted name, in a fixed order.
    template <typename Fn>
    void for_each_parameter(Fn&& fn) {
        for (Modality m : kModalities) gates[index_of(m)].for_each_parameter("gate." + modality_name(m), fn);
        for (Modality m : kModalities) convs[index_of(m)].for_each_parameter("conv." + modality_name(m), fn);
        for (Modality t : kModalities) {
            for (Modality s : kModalities) {
                auto& stack = cross[index_of(t)][index_of(s)];
                for (std::size_t l = 0; l < stack.size(); ++l) {
                    stack[l].for_each_parameter(
                        "cross." + modality_name(t) + "_from_" + modality_name(s) + "." + std::to_string(l), fn);
                }
            }
            auto& ff = cross_ff[index_of(t)];
            for (std::size_t l = 0; l < ff.size(); ++l) {
                ff[l].for_each_parameter("cross." + modality_name(t) + ".ff." + std::to_string(l), fn);
            }
            auto& self = intra[index_of(t)];
            for (std::size_t l = 0; l < self.size(); ++l) {
                self[l].for_each_parameter("intra." + modality_name(t) + "." + std::to_string(l), fn);
            }
        }
        classifier.for_each_parameter("head.classifier", fn);
        projection.for_each_parameter("head.projection", fn);
    }

    std::vector<std::pair<std::string, Tensor<Scalar>*>> named() {
        std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
        for_each_parameter([&](const std::string& name, Tensor<Scalar>& t) { out.emplace_back(name, &t); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for_each_parameter([&](const std::string&, Tensor<Scalar>& t) { n += static_cast<std::size_t>(t.size()); });
        return n;
    }
};

template <typename Scalar>
class TouchFormer {
   public:
    TouchFormer(TouchFormerConfig config, std::uint64_t seed) : config_(std::move(config)), params_(config_, seed) {}

    const TouchFormerConfig& config() const noexcept { return config_; }
    TouchFormerParams<Scalar>& params() noexcept { return params_; }
    const TouchFormerParams<Scalar>& params() const noexcept { return params_; }

    // Z_m^[0] = Conv1D(X_m, k_m) + PE(T_m, d) for each present modality.
    ModalityVars<Scalar> temporal_embed(Tape<Scalar>& tape, const ModalityBundle& bundle) const {
        ModalityVars<Scalar> out;
        for (Modality m : kModalities) {
            if (!bundle.present(m)) continue;
            Var<Scalar> conv = conv_input(tape, bundle, m);
            const Shape& s = conv.shape();
            out[index_of(m)] = add(conv, tape.constant(positional_embedding<Scalar>(s[0], s[1])));
        }
        return out;
    }

    // Cross-modal stack for one target. Each kept source contributes its
    // attention output scaled by that source's importance weight; all source
    // contributions of a layer are summed into the residual stream.
    Var<Scalar> crossmodal_block(Modality target, const ModalityVars<Scalar>& embedded, const GateVars<Scalar>& gates,
                                 const ForwardOptions& opts = {}) const {
        const auto t = index_of(target);
        if (!embedded[t]) throw ValidationError("crossmodal_block: target " + modality_name(target) + " missing");
        Var<Scalar> z = *embedded[t];
        for (Index l = 0; l < config_.cross_blocks; ++l) {
            const auto layer = static_cast<std::size_t>(l);
            std::optional<Var<Scalar>> cross;
            for (Modality source : kModalities) {
                const auto s = index_of(source);
                if (s == t || !gates.decision.kept[s] || !embedded[s]) continue;
                const CrossLayer<Scalar>& cl = params_.cross[t][s][layer];
                Var<Scalar> y = cl.attn(cl.norm_q(z), cl.norm_kv(*embedded[s]));
                y = mul(y, *gates.alpha[s]);
                cross = cross ? add(*cross, y) : y;
            }
            if (cross) z = add(z, maybe_dropout(*cross, opts));
            const FeedForwardLayer<Scalar>& ff = params_.cross_ff[t][layer];
            z = add(z, maybe_dropout(ff.ffn(ff.norm(z)), opts));
        }
        return z;
    }

    // Self-attention stack over one modality's fused sequence.
    Var<Scalar> intra_block(Modality m, const Var<Scalar>& z_tilde, const ForwardOptions& opts = {}) const {
        Var<Scalar> z = z_tilde;
        for (const auto& layer : params_.intra[index_of(m)]) {
            Var<Scalar> h = layer.norm(z);
            z = add(z, maybe_dropout(layer.attn(h, h), opts));
            z = add(z, maybe_dropout(layer.ff.ffn(layer.ff.norm(z)), opts));
        }
        return z;
    }

    // Mean-pools each modality over its own time axis, weights by alpha and
    // concatenates in S, N, F, A order (zeros for discarded modalities).
    ModelOutputs<Scalar> fuse_and_head(Tape<Scalar>& tape, const ModalityVars<Scalar>& intra,
                                       const GateVars<Scalar>& gates) const {
        std::vector<Var<Scalar>> parts;
        for (Modality m : kModalities) {
            const auto i = index_of(m);
            if (gates.decision.kept[i] && intra[i]) {
                parts.push_back(mul(reduce(Reduction::Mean, *intra[i], 0), *gates.alpha[i]));
            } else {
                parts.push_back(tape.constant(Tensor<Scalar>(Shape{config_.d})));
            }
        }
        Var<Scalar> fused = concat(parts, 0);
        return {params_.classifier(fused), l2_normalize(params_.projection(fused)), gates.decision};
    }

    ModelOutputs<Scalar> forward(Tape<Scalar>& tape, const ModalityBundle& bundle, const ForwardOptions& opts = {}) const {
        bundle.validate();
        ModalityMask eligible{};
        for (Modality m : kModalities) {
            const auto i = index_of(m);
            eligible[i] = bundle.present(m) && !opts.force_discard[i];
            if (eligible[i] && bundle[m].dim(1) != config_.channels[i]) {
                throw ShapeError("forward", "modality " + modality_name(m) + " has " +
                                                std::to_string(bundle[m].dim(1)) + " channels, config expects " +
                                                std::to_string(config_.channels[i]));
            }
        }
        bool any = false;
        for (bool e : eligible) any = any || e;
        if (!any) throw ValidationError("forward: every modality is absent or discarded");

        ModalityVars<Scalar> raw;
        for (Modality m : kModalities) {
            if (eligible[index_of(m)]) raw[index_of(m)] = tape.constant(bundle[m].template cast<Scalar>());
        }
        GateVars<Scalar> gates = config_.mag_enabled
                                     ? gate_forward(raw, params_.gates, config_.gate_th, eligible)
                                     : uniform_gate_vars(tape, eligible);

        ModalityVars<Scalar> gated;
        for (Modality m : kModalities) {
            const auto i = index_of(m);
            if (!gates.decision.kept[i]) continue;
            gated[i] = apply_gate(params_.convs[i](*raw[i]), *gates.alpha[i]);
        }
        ModalityVars<Scalar> intra;
        for (Modality m : kModalities) {
            const auto i = index_of(m);
            if (!gates.decision.kept[i]) continue;
            intra[i] = intra_block(m, crossmodal_block(m, gated, gates, opts), opts);
        }
        return fuse_and_head(tape, intra, gates);
    }

    // Untracked forward returning plain tensors.
    ForwardOutput<Scalar> infer(const ModalityBundle& bundle, const ForwardOptions& opts = {}) const {
        Tape<Scalar> tape(false);
        auto out = forward(tape, bundle, opts);
        return {out.logits.value(), out.embedding.value(), out.gates};
    }

   private:
    Var<Scalar> conv_input(Tape<Scalar>& tape, const ModalityBundle& bundle, Modality m) const {
        return params_.convs[index_of(m)](tape.constant(bundle[m].template cast<Scalar>()));
    }

    Var<Scalar> maybe_dropout(const Var<Scalar>& x, const ForwardOptions& opts) const {
        if (opts.dropout_rng == nullptr || config_.dropout == 0.0) return x;
        return dropout(x, config_.dropout, *opts.dropout_rng);
    }

    TouchFormerConfig config_;
    TouchFormerParams<Scalar> params_;
};

}  // namespace touchformer
