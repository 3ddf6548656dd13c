#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "touchformer/dataio.hpp"

namespace touchformer {

struct HoldoutSplit {
    std::vector<std::size_t> train;  // indices into manifest.samples, ascending
    std::vector<std::size_t> test;
    std::vector<std::string> warnings;
};

// Shuffled split keeping `ratio` of the samples for training. With
// stratification each class is split on its own; a class with fewer than two
// samples goes entirely to train and is reported in `warnings`.
HoldoutSplit split_holdout(const SampleManifest& manifest, double ratio, std::uint64_t seed, bool stratify = true);

struct FoldPlan {
    int k = 0;
    std::vector<std::vector<int>> materials;  // material ids per fold, ascending
    std::vector<std::vector<std::size_t>> train;
    std::vector<std::vector<std::size_t>> test;
};

// Partitions materials (never individual samples) into k folds. Materials are
// shuffled within each class and dealt round-robin, so every fold gets a near
// equal share of each class.
FoldPlan split_kfold_grouped(const SampleManifest& manifest, int k, std::uint64_t seed);

}  // namespace touchformer
