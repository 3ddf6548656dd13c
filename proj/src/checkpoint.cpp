#include "touchformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "touchformer/config.hpp"

namespace touchformer {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'T', 'F', 'C', 'K'};

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void put_u32(std::string& out, std::uint32_t v) {
    v = to_le(v);
    out.append(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(const char* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return to_le(v);
}

}  // namespace

void save_checkpoint(const fs::path& path, const TouchFormer<float>& model) {
    // for_each_parameter is non-const; the copy keeps the caller's model untouched.
    TouchFormerParams<float> params = model.params();
    json tensors = json::array();
    for (const auto& [name, t] : params.named()) tensors.push_back({{"name", name}, {"shape", t->shape()}});
    const std::string header = json{{"config", to_json(model.config())}, {"tensors", tensors}}.dump();

    std::string buf(kMagic, 4);
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<std::uint32_t>(header.size()));
    buf += header;
    for (const auto& [name, t] : params.named()) {
        for (float v : t->data()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

TouchFormer<float> load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string();

    if (buf.size() < 12) throw FormatError(where, "file shorter than the 12-byte preamble");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError(where, "bad magic (expected TFCK)");
    const std::uint32_t version = get_u32(buf.data() + 4);
    if (version != kCheckpointVersion) throw FormatError(where, "unsupported version " + std::to_string(version));
    const std::uint64_t header_len = get_u32(buf.data() + 8);
    if (buf.size() < 12 + header_len) throw FormatError(where, "truncated header");

    json header;
    try {
        header = json::parse(buf.begin() + 12, buf.begin() + 12 + static_cast<long>(header_len));
    } catch (const json::parse_error& e) {
        throw FormatError(where, std::string("invalid header JSON: ") + e.what());
    }
    if (!header.contains("config") || !header.contains("tensors") || !header["tensors"].is_array()) {
        throw FormatError(where, "header lacks config or tensors");
    }
    TouchFormer<float> model(model_config_from_json(header["config"]), 0);
    auto expected = model.params().named();
    const json& listed = header["tensors"];
    if (listed.size() != expected.size()) {
        throw ShapeError("load_checkpoint", "file lists " + std::to_string(listed.size()) + " tensors, config implies " +
                                                std::to_string(expected.size()));
    }

    std::vector<Tensor<float>> loaded;
    loaded.reserve(expected.size());
    std::uint64_t offset = 12 + header_len;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& [name, target] = expected[i];
        std::string file_name;
        Shape file_shape;
        try {
            file_name = listed[i].at("name").get<std::string>();
            file_shape = listed[i].at("shape").get<Shape>();
        } catch (const json::exception&) {
            throw FormatError(where, "malformed tensor entry " + std::to_string(i));
        }
        if (file_name != name) {
            throw ShapeError("load_checkpoint", "tensor " + std::to_string(i) + " is '" + file_name + "', expected '" +
                                                    name + "'");
        }
        if (file_shape != target->shape()) {
            throw ShapeError("load_checkpoint", "tensor '" + name + "' has shape " + to_string(file_shape) +
                                                    " in the file, config expects " + to_string(target->shape()));
        }
        const std::uint64_t bytes = 4ULL * static_cast<std::uint64_t>(target->size());
        if (buf.size() < offset + bytes) throw FormatError(where, "truncated at tensor '" + name + "'");
        Tensor<float> t(target->shape());
        for (Index k = 0; k < t.size(); ++k) {
            t[k] = std::bit_cast<float>(get_u32(buf.data() + offset + 4 * static_cast<std::uint64_t>(k)));
        }
        offset += bytes;
        loaded.push_back(std::move(t));
    }
    if (offset != buf.size()) throw FormatError(where, std::to_string(buf.size() - offset) + " trailing bytes");
    for (std::size_t i = 0; i < expected.size(); ++i) *expected[i].second = std::move(loaded[i]);
    return model;
}

}  // namespace touchformer
