#include "touchformer/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "json.hpp"

namespace touchformer {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMseqMagic[4] = {'M', 'S', 'E', 'Q'};

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

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Purposes for stream_key.
constexpr std::uint64_t kSelectStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kShiftStream = 3;
constexpr std::uint64_t kSynthStream = 4;
constexpr std::uint64_t kMaterialStream = 5;

}  // namespace

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t sample, std::uint64_t modality, std::uint64_t purpose) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ sample);
    h = splitmix64(h ^ (modality + 0x100));
    return splitmix64(h ^ (purpose << 32));
}

// --- Sequence files ----------------------------------------------------------

void write_sequence(const fs::path& path, const Tensor<float>& x) {
    if (x.rank() != 2) throw ShapeError("write_sequence", "expected [T x C], got " + to_string(x.shape()));
    std::string buf;
    buf.reserve(16 + 4 * static_cast<std::size_t>(x.size()));
    buf.append(kMseqMagic, 4);
    put_u32(buf, kMseqVersion);
    put_u32(buf, static_cast<std::uint32_t>(x.dim(0)));
    put_u32(buf, static_cast<std::uint32_t>(x.dim(1)));
    for (float v : x.data()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Tensor<float> read_sequence(const fs::path& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 16) throw FormatError(path.string(), "file shorter than the 16-byte header");
    if (std::memcmp(buf.data(), kMseqMagic, 4) != 0) throw FormatError(path.string(), "bad magic (expected MSEQ)");
    const std::uint32_t version = get_u32(buf.data() + 4);
    if (version != kMseqVersion) throw FormatError(path.string(), "unsupported version " + std::to_string(version));
    const std::uint32_t T = get_u32(buf.data() + 8);
    const std::uint32_t C = get_u32(buf.data() + 12);
    if (T == 0 || C == 0) throw FormatError(path.string(), "T and C must be >= 1");
    const std::uint64_t expected = 16 + 4ULL * T * C;
    if (buf.size() != expected) {
        throw FormatError(path.string(), "size " + std::to_string(buf.size()) + " bytes, header implies " +
                                             std::to_string(expected));
    }
    Tensor<float> x({static_cast<Index>(T), static_cast<Index>(C)});
    for (Index i = 0; i < x.size(); ++i) {
        x[i] = std::bit_cast<float>(get_u32(buf.data() + 16 + 4 * i));
    }
    return x;
}

// --- Manifest ------------------------------------------------------------------

void SampleManifest::validate() const {
    const int nc = static_cast<int>(classes.size());
    const int ns = static_cast<int>(subclasses.size());
    for (const auto& s : subclasses) {
        if (s.parent < 0 || s.parent >= nc) throw ValidationError("manifest: subclass '" + s.name + "' has bad parent");
    }
    std::set<std::string> ids;
    for (const auto& e : samples) {
        if (!ids.insert(e.id).second) throw ValidationError("manifest: duplicate sample id '" + e.id + "'");
        if (e.cls < 0 || e.cls >= nc) throw ValidationError("manifest: sample '" + e.id + "' has bad class index");
        if (ns > 0) {
            if (e.subclass < 0 || e.subclass >= ns) {
                throw ValidationError("manifest: sample '" + e.id + "' has bad subclass index");
            }
            if (subclasses[e.subclass].parent != e.cls) {
                throw ValidationError("manifest: sample '" + e.id + "' subclass parent does not match its class");
            }
        }
        if (e.material < 0) throw ValidationError("manifest: sample '" + e.id + "' has negative material id");
    }
}

int SampleManifest::num_materials() const {
    std::set<int> m;
    for (const auto& e : samples) m.insert(e.material);
    return static_cast<int>(m.size());
}

SampleManifest read_manifest(const fs::path& path) {
    const std::string text = read_file(path);
    SampleManifest m;
    try {
        const json j = json::parse(text);
        m.classes = j.at("classes").get<std::vector<std::string>>();
        for (const auto& s : j.at("subclasses")) {
            m.subclasses.push_back({s.at(0).get<std::string>(), s.at(1).get<int>()});
        }
        for (const auto& s : j.at("samples")) {
            m.samples.push_back({s.at("id").get<std::string>(), s.at("path").get<std::string>(), s.at("class").get<int>(),
                                 s.at("subclass").get<int>(), s.at("material").get<int>()});
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string(), std::string("invalid manifest: ") + e.what());
    }
    m.root = path.parent_path();
    m.validate();
    return m;
}

void write_manifest(const SampleManifest& manifest, const fs::path& path) {
    json j;
    j["classes"] = manifest.classes;
    j["subclasses"] = json::array();
    for (const auto& s : manifest.subclasses) j["subclasses"].push_back(json::array({s.name, s.parent}));
    j["samples"] = json::array();
    for (const auto& e : manifest.samples) {
        j["samples"].push_back(
            {{"id", e.id}, {"path", e.path}, {"class", e.cls}, {"subclass", e.subclass}, {"material", e.material}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

ModalityBundle load_sample(const SampleManifest& manifest, const SampleEntry& entry) {
    const fs::path dir = manifest.sample_dir(entry);
    ModalityBundle bundle;
    for (Modality m : kModalities) {
        const fs::path file = dir / (modality_name(m) + ".mseq");
        if (fs::exists(file)) bundle.set(m, read_sequence(file));
    }
    if (bundle.present_count() == 0) {
        throw ValidationError("sample '" + entry.id + "' has no modality files in " + dir.string());
    }
    return bundle;
}

// --- Synthetic data ----------------------------------------------------------

Modality SyntheticSpec::informative_modality(int cls) const {
    if (!informative.empty()) return informative.at(static_cast<std::size_t>(cls));
    return kModalities[static_cast<std::size_t>(cls) % kNumModalities];
}

void SyntheticSpec::validate() const {
    if (num_classes < 1 || num_subclasses_per_class < 1 || samples_per_class < 1 || samples_per_material < 1) {
        throw ValidationError("synthetic spec: counts must be >= 1");
    }
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (lengths[m] < 1 || channels[m] < 1) throw ValidationError("synthetic spec: lengths and channels must be >= 1");
    }
    if (!informative.empty() && static_cast<int>(informative.size()) != num_classes) {
        throw ValidationError("synthetic spec: informative assignment must cover every class");
    }
    if (base_cycles <= 0.0 || amplitude < 0.0) throw ValidationError("synthetic spec: bad base_cycles/amplitude");
}

namespace {

struct SyntheticLayout {
    int materials_per_class;
    int material_in_class;
    int material;
    int subclass_in_class;
};

SyntheticLayout layout_of(const SyntheticSpec& spec, int cls, int index_in_class) {
    SyntheticLayout l{};
    l.materials_per_class = (spec.samples_per_class + spec.samples_per_material - 1) / spec.samples_per_material;
    l.material_in_class = index_in_class / spec.samples_per_material;
    l.material = cls * l.materials_per_class + l.material_in_class;
    l.subclass_in_class = l.material_in_class % spec.num_subclasses_per_class;
    return l;
}

}  // namespace

ModalityBundle synthetic_sample(const SyntheticSpec& spec, int cls, int index_in_class) {
    const SyntheticLayout l = layout_of(spec, cls, index_in_class);
    // Subclasses scale the amplitude; each material adds a fixed +-10% jitter.
    std::mt19937_64 material_rng(stream_key(spec.seed, static_cast<std::uint64_t>(l.material), 0, kMaterialStream));
    const double jitter = std::uniform_real_distribution<double>(0.9, 1.1)(material_rng);
    const double sub_scale =
        1.0 + 0.5 * l.subclass_in_class / std::max(1, spec.num_subclasses_per_class - 1);
    const double amp = spec.amplitude * sub_scale * jitter;
    const double cycles = spec.base_cycles * (cls + 1);

    const auto sample = static_cast<std::uint64_t>(cls) * static_cast<std::uint64_t>(spec.samples_per_class) +
                        static_cast<std::uint64_t>(index_in_class);
    std::mt19937_64 rng(stream_key(spec.seed, sample, 0, kSynthStream));
    std::normal_distribution<double> noise(0.0, 1.0);
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    const Modality informative = spec.informative_modality(cls);

    ModalityBundle bundle;
    for (Modality m : kModalities) {
        const auto i = index_of(m);
        const Index T = spec.lengths[i];
        Tensor<float> x({T, spec.channels[i]});
        for (Index t = 0; t < T; ++t) {
            const double signal =
                m == informative ? amp * std::sin(2.0 * std::numbers::pi * cycles * static_cast<double>(t) /
                                                          static_cast<double>(T) +
                                                      phase)
                                 : 0.0;
            for (Index c = 0; c < spec.channels[i]; ++c) {
                x.matrix()(t, c) = static_cast<float>(signal + noise(rng));
            }
        }
        bundle.set(m, std::move(x));
    }
    return bundle;
}

SampleManifest synthetic_manifest(const SyntheticSpec& spec) {
    spec.validate();
    SampleManifest manifest;
    for (int c = 0; c < spec.num_classes; ++c) {
        manifest.classes.push_back("class" + std::to_string(c));
        for (int s = 0; s < spec.num_subclasses_per_class; ++s) {
            manifest.subclasses.push_back({"class" + std::to_string(c) + "_sub" + std::to_string(s), c});
        }
    }
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int i = 0; i < spec.samples_per_class; ++i) {
            const SyntheticLayout l = layout_of(spec, c, i);
            char id[32];
            std::snprintf(id, sizeof(id), "c%02d_s%04d", c, i);
            manifest.samples.push_back({id, std::string("samples/") + id, c,
                                        c * spec.num_subclasses_per_class + l.subclass_in_class, l.material});
        }
    }
    return manifest;
}

SampleManifest gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
    SampleManifest manifest = synthetic_manifest(spec);
    manifest.root = out_dir;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    // Samples are listed class-major, so the running index recovers (class, index).
    for (std::size_t k = 0; k < manifest.samples.size(); ++k) {
        const SampleEntry& e = manifest.samples[k];
        const fs::path dir = out_dir / e.path;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        const int index_in_class = static_cast<int>(k % static_cast<std::size_t>(spec.samples_per_class));
        const ModalityBundle b = synthetic_sample(spec, e.cls, index_in_class);
        for (Modality m : kModalities) write_sequence(dir / (modality_name(m) + ".mseq"), b[m]);
    }
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

// --- Corruption --------------------------------------------------------------

void CorruptionSpec::validate() const {
    if (p < 0.0 || p > 1.0) throw ValidationError("corruption: p must lie in [0, 1]");
    if (sigma < 0.0) throw ValidationError("corruption: sigma must be >= 0");
    if (misalign_frac < 0.0 || misalign_frac >= 0.5) throw ValidationError("corruption: misalign_frac must lie in [0, 0.5)");
}

bool CorruptionSpec::is_identity() const {
    bool any_drop = false;
    for (bool d : drop) any_drop = any_drop || d;
    return (p == 0.0 || sigma == 0.0) && !any_drop && misalign_frac == 0.0;
}

std::array<ModalityCorruption, kNumModalities> corruption_plan(const CorruptionSpec& spec, std::uint64_t sample_index,
                                                               const ModalityBundle& bundle) {
    spec.validate();
    std::array<ModalityCorruption, kNumModalities> plan{};
    for (Modality m : kModalities) {
        const auto i = index_of(m);
        if (!bundle.present(m)) continue;
        if (spec.drop[i]) {
            plan[i].dropped = true;
            continue;
        }
        std::mt19937_64 select(stream_key(spec.seed, sample_index, i, kSelectStream));
        plan[i].noised = std::bernoulli_distribution(spec.p)(select);
        if (spec.misalign_frac > 0.0) {
            const auto max_shift =
                static_cast<Index>(std::floor(spec.misalign_frac * static_cast<double>(bundle[m].dim(0))));
            std::mt19937_64 shift(stream_key(spec.seed, sample_index, i, kShiftStream));
            plan[i].shift = std::uniform_int_distribution<Index>(0, max_shift)(shift);
        }
    }
    return plan;
}

ModalityBundle corrupt(const ModalityBundle& bundle, const CorruptionSpec& spec, std::uint64_t sample_index) {
    const auto plan = corruption_plan(spec, sample_index, bundle);
    ModalityBundle out = bundle;
    for (Modality m : kModalities) {
        const auto i = index_of(m);
        if (!bundle.present(m)) continue;
        if (plan[i].dropped) {
            out.drop(m);
            continue;
        }
        const Tensor<float>& x = bundle[m];
        if (plan[i].noised && spec.sigma > 0.0) {
            const auto& xm = x.matrix();
            const double mu = xm.template cast<double>().mean();
            const double var = (xm.template cast<double>().array() - mu).square().mean();
            const double std_dev = spec.sigma * std::sqrt(var);
            if (std_dev > 0.0) {
                std::mt19937_64 rng(stream_key(spec.seed, sample_index, i, kNoiseStream));
                std::normal_distribution<double> noise(0.0, std_dev);
                Tensor<float> y = x;
                for (Index k = 0; k < y.size(); ++k) y[k] = static_cast<float>(y[k] + noise(rng));
                out.set(m, std::move(y));
            }
        }
        if (plan[i].shift > 0) {
            const Tensor<float>& cur = out[m];
            const Index T = cur.dim(0) - plan[i].shift;
            Matrix<float> cropped = cur.matrix().bottomRows(T);
            out.set(m, Tensor<float>::from_matrix(std::move(cropped)));
        }
    }
    return out;
}

}  // namespace touchformer
