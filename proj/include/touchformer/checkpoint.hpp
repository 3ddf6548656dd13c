#pragma once

#include <cstdint>
#include <filesystem>

#include "touchformer/model.hpp"

namespace touchformer {

// Layout (little-endian): "TFCK" | u32 version | u32 header length | JSON
// header {"config": ..., "tensors": [{"name", "shape"}, ...]} | f32 blobs in
// header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TouchFormer<float>& model);

// Rebuilds the model from the stored config, then fills every parameter.
// Nothing is returned unless the whole file checks out.
TouchFormer<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace touchformer
