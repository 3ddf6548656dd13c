#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "touchformer/bundle.hpp"
#include "touchformer/layers.hpp"

namespace touchformer {

// Per-modality reliability scorer: g = sigmoid(lin2(mean_t ReLU(lin1(x_t)))).
template <typename Scalar>
struct GateNet {
    LinearLayer<Scalar> lin1;  // C_m -> d_g
    LinearLayer<Scalar> lin2;  // d_g -> 1

    GateNet() = default;
    // bias_init sets the output bias, so g starts near sigmoid(bias_init).
    GateNet(Index in_channels, Index hidden, Rng& rng, double bias_init = 0.0)
        : lin1(in_channels, hidden, rng), lin2(hidden, 1, rng) {
        lin2.bias[0] = static_cast<Scalar>(bias_init);
    }

    // x: raw [T x C_m] sequence. Returns g with shape [1].
    Var<Scalar> operator()(const Var<Scalar>& x) const {
        Var<Scalar> hidden = relu(lin1(x));
        return sigmoid(lin2(reduce(Reduction::Mean, hidden, 0)));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        lin1.for_each_parameter(prefix + ".lin1", fn);
        lin2.for_each_parameter(prefix + ".lin2", fn);
    }
};

struct GateDecision {
    std::array<double, kNumModalities> g{};      // 0 for modalities that were never scored
    ModalityMask kept{};
    std::array<double, kNumModalities> alpha{};  // 0 for discarded modalities

    bool is_kept(Modality m) const { return kept[index_of(m)]; }
    double weight(Modality m) const { return alpha[index_of(m)]; }
};

// Threshold-then-renormalise on gate values. `eligible` marks modalities that
// are present and not force-discarded. Survivors get softmax(g) over the
// survivors only; if every eligible gate is below threshold the single
// largest one is kept with weight 1.
inline GateDecision decide_gates(const std::array<double, kNumModalities>& g, const ModalityMask& eligible,
                                 double gate_th) {
    GateDecision out;
    std::optional<std::size_t> best;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (!eligible[m]) continue;
        out.g[m] = g[m];
        out.kept[m] = g[m] >= gate_th;
        if (!best || g[m] > g[*best]) best = m;
    }
    if (!best) throw ValidationError("gating: no modality is available");
    bool any = false;
    for (bool k : out.kept) any = any || k;
    if (!any) out.kept[*best] = true;

    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (out.kept[m]) peak = std::max(peak, g[m]);
    }
    double total = 0.0;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (out.kept[m]) total += std::exp(g[m] - peak);
    }
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        out.alpha[m] = out.kept[m] ? std::exp(g[m] - peak) / total : 0.0;
    }
    return out;
}

// Uniform weights over eligible modalities (the gating-disabled ablation).
inline GateDecision uniform_gates(const ModalityMask& eligible) {
    GateDecision out;
    std::size_t n = 0;
    for (bool e : eligible) n += e ? 1 : 0;
    if (n == 0) throw ValidationError("gating: no modality is available");
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        out.kept[m] = eligible[m];
        out.g[m] = eligible[m] ? 1.0 : 0.0;
        out.alpha[m] = eligible[m] ? 1.0 / static_cast<double>(n) : 0.0;
    }
    return out;
}

// Gate decision plus differentiable importance weights (shape [1]) for the
// kept modalities.
template <typename Scalar>
struct GateVars {
    GateDecision decision;
    std::array<std::optional<Var<Scalar>>, kNumModalities> alpha;
};

template <typename Scalar>
GateVars<Scalar> gate_forward(const std::array<std::optional<Var<Scalar>>, kNumModalities>& raw,
                              const std::array<GateNet<Scalar>, kNumModalities>& nets, double gate_th,
                              const ModalityMask& eligible) {
    std::array<std::optional<Var<Scalar>>, kNumModalities> g;
    std::array<double, kNumModalities> values{};
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (!eligible[m]) continue;
        g[m] = nets[m](*raw[m]);
        values[m] = static_cast<double>(g[m]->value().item());
    }
    GateVars<Scalar> out{decide_gates(values, eligible, gate_th), {}};

    std::vector<Var<Scalar>> kept;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (out.decision.kept[m]) kept.push_back(*g[m]);
    }
    Var<Scalar> alpha = softmax(concat(kept, 0), 0);
    Index k = 0;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (out.decision.kept[m]) out.alpha[m] = slice(alpha, 0, k++, 1);
    }
    return out;
}

template <typename Scalar>
GateVars<Scalar> uniform_gate_vars(Tape<Scalar>& tape, const ModalityMask& eligible) {
    GateVars<Scalar> out{uniform_gates(eligible), {}};
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (out.decision.kept[m]) {
            out.alpha[m] = tape.constant(Tensor<Scalar>(Shape{1}, {static_cast<Scalar>(out.decision.alpha[m])}));
        }
    }
    return out;
}

// Value-level gate computation for one bundle. `force_discard` removes
// modalities before scoring, exactly like an absent sensor.
template <typename Scalar>
GateDecision compute_gates(const ModalityBundle& bundle, const std::array<GateNet<Scalar>, kNumModalities>& nets,
                           double gate_th, const ModalityMask& force_discard = {}) {
    if (gate_th < 0.0 || gate_th > 1.0) throw ValidationError("gate_th must lie in [0, 1]");
    Tape<Scalar> tape(false);
    std::array<std::optional<Var<Scalar>>, kNumModalities> raw;
    ModalityMask eligible{};
    for (Modality m : kModalities) {
        const auto i = index_of(m);
        eligible[i] = bundle.present(m) && !force_discard[i];
        if (eligible[i]) raw[i] = tape.constant(bundle[m].template cast<Scalar>());
    }
    return gate_forward(raw, nets, gate_th, eligible).decision;
}

// Z_m = alpha_m * (x + PE(T, d)) for an embedded [T x d] sequence.
template <typename Scalar>
Var<Scalar> apply_gate(const Var<Scalar>& x_embedded, const Var<Scalar>& alpha_m) {
    const Shape& s = x_embedded.shape();
    if (s.size() != 2) throw ShapeError("apply_gate", "expected [T x d], got " + to_string(s));
    Tape<Scalar>& tape = x_embedded.tape();
    Var<Scalar> pe = tape.constant(positional_embedding<Scalar>(s[0], s[1]));
    return mul(add(x_embedded, pe), alpha_m);
}

template <typename Scalar>
Var<Scalar> apply_gate(const Var<Scalar>& x_embedded, Scalar alpha_m) {
    if (alpha_m < Scalar(0) || alpha_m > Scalar(1)) throw ValidationError("apply_gate: alpha must lie in [0, 1]");
    return apply_gate(x_embedded, x_embedded.tape().constant(Tensor<Scalar>::scalar(alpha_m)));
}

}  // namespace touchformer
