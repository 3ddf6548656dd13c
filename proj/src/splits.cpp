#include "touchformer/splits.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace touchformer {

HoldoutSplit split_holdout(const SampleManifest& manifest, double ratio, std::uint64_t seed, bool stratify) {
    if (manifest.samples.empty()) throw ValidationError("split_holdout: manifest has no samples");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split_holdout: ratio must lie in (0, 1)");

    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        strata[stratify ? manifest.samples[i].cls : 0].push_back(i);
    }
    std::mt19937_64 rng(seed);
    HoldoutSplit split;
    for (auto& [cls, members] : strata) {
        const auto n = static_cast<long>(members.size());
        if (n < 2) {
            split.warnings.push_back("class " + std::to_string(cls) + " has fewer than 2 samples; all go to train");
            split.train.insert(split.train.end(), members.begin(), members.end());
            continue;
        }
        std::shuffle(members.begin(), members.end(), rng);
        const long n_train = std::clamp(std::lround(ratio * static_cast<double>(n)), 1L, n - 1);
        split.train.insert(split.train.end(), members.begin(), members.begin() + n_train);
        split.test.insert(split.test.end(), members.begin() + n_train, members.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

FoldPlan split_kfold_grouped(const SampleManifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("split_kfold_grouped: k must be >= 2");
    // A material belongs to the class of its first sample.
    std::map<int, int> material_class;
    for (const auto& e : manifest.samples) material_class.try_emplace(e.material, e.cls);
    if (static_cast<int>(material_class.size()) < k) {
        throw ValidationError("split_kfold_grouped: " + std::to_string(material_class.size()) +
                              " materials cannot fill " + std::to_string(k) + " folds");
    }
    std::map<int, std::vector<int>> by_class;
    for (const auto& [material, cls] : material_class) by_class[cls].push_back(material);

    std::mt19937_64 rng(seed);
    FoldPlan plan;
    plan.k = k;
    plan.materials.resize(k);
    std::map<int, int> fold_of;
    std::size_t next = 0;
    for (auto& [cls, materials] : by_class) {
        std::shuffle(materials.begin(), materials.end(), rng);
        for (int m : materials) {
            const int f = static_cast<int>(next++ % static_cast<std::size_t>(k));
            plan.materials[f].push_back(m);
            fold_of[m] = f;
        }
    }
    for (auto& fold : plan.materials) std::sort(fold.begin(), fold.end());

    plan.train.resize(k);
    plan.test.resize(k);
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        const int f = fold_of.at(manifest.samples[i].material);
        for (int j = 0; j < k; ++j) (j == f ? plan.test : plan.train)[j].push_back(i);
    }
    return plan;
}

}  // namespace touchformer
