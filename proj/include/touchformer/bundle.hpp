#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>

#include "touchformer/tensor.hpp"

namespace touchformer {

// Sound, normal force, friction force, acceleration. The enumerator order is
// the fixed fusion order.
enum class Modality : std::size_t { S = 0, N = 1, F = 2, A = 3 };

inline constexpr std::size_t kNumModalities = 4;
inline constexpr std::array<Modality, kNumModalities> kModalities{Modality::S, Modality::N, Modality::F,
                                                                  Modality::A};

using ModalityMask = std::array<bool, kNumModalities>;

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

constexpr char modality_code(Modality m) { return "SNFA"[index_of(m)]; }

inline std::string modality_name(Modality m) { return std::string(1, modality_code(m)); }

inline Modality parse_modality(const std::string& code) {
    if (code.size() == 1) {
        for (Modality m : kModalities) {
            if (code[0] == modality_code(m)) return m;
        }
    }
    throw ValidationError("unknown modality '" + code + "' (expected one of S, N, F, A)");
}

// One sample's raw sequences, each [T_m x C_m]; lengths may differ across
// modalities. An empty slot means the modality is absent.
struct ModalityBundle {
    std::array<std::optional<Tensor<float>>, kNumModalities> sequences;

    bool present(Modality m) const { return sequences[index_of(m)].has_value(); }

    const Tensor<float>& operator[](Modality m) const {
        const auto& s = sequences[index_of(m)];
        if (!s) throw ValidationError("modality " + modality_name(m) + " is absent");
        return *s;
    }

    void set(Modality m, Tensor<float> x) { sequences[index_of(m)] = std::move(x); }
    void drop(Modality m) { sequences[index_of(m)].reset(); }

    ModalityMask present_mask() const {
        ModalityMask mask{};
        for (Modality m : kModalities) mask[index_of(m)] = present(m);
        return mask;
    }

    std::size_t present_count() const {
        std::size_t n = 0;
        for (Modality m : kModalities) n += present(m) ? 1 : 0;
        return n;
    }

    void validate() const {
        if (present_count() == 0) throw ValidationError("modality bundle has no present modalities");
        for (Modality m : kModalities) {
            if (!present(m)) continue;
            const auto& x = (*this)[m];
            if (x.rank() != 2) {
                throw ShapeError("bundle", "modality " + modality_name(m) + " must be [T x C], got " +
                                               to_string(x.shape()));
            }
            if (!x.all_finite()) throw ValidationError("modality " + modality_name(m) + " has non-finite values");
        }
    }

    friend bool operator==(const ModalityBundle&, const ModalityBundle&) = default;
};

}  // namespace touchformer
