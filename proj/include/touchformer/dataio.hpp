#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "touchformer/bundle.hpp"

namespace touchformer {

// --- Binary sequence files ---------------------------------------------------
//
// Layout (little-endian): "MSEQ" | u32 version | u32 T | u32 C | T*C f32,
// time-major. Total size is exactly 16 + 4*T*C bytes.

inline constexpr std::uint32_t kMseqVersion = 1;

void write_sequence(const std::filesystem::path& path, const Tensor<float>& x);
Tensor<float> read_sequence(const std::filesystem::path& path);

// --- Manifest ------------------------------------------------------------------

struct Subclass {
    std::string name;
    int parent = 0;
};

struct SampleEntry {
    std::string id;
    std::string path;  // sample directory, relative to the manifest directory
    int cls = 0;
    int subclass = 0;
    int material = 0;
};

struct SampleManifest {
    std::vector<std::string> classes;
    std::vector<Subclass> subclasses;
    std::vector<SampleEntry> samples;
    std::filesystem::path root;  // directory that relative sample paths resolve against

    void validate() const;
    std::filesystem::path sample_dir(const SampleEntry& e) const { return root / e.path; }
    int num_materials() const;
};

SampleManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const SampleManifest& manifest, const std::filesystem::path& path);

// Reads S.mseq, N.mseq, F.mseq, A.mseq from the sample directory; a missing
// file leaves that modality absent.
ModalityBundle load_sample(const SampleManifest& manifest, const SampleEntry& entry);

// --- Synthetic data ----------------------------------------------------------

struct SyntheticSpec {
    int num_classes = 4;
    int num_subclasses_per_class = 2;
    int samples_per_class = 40;
    int samples_per_material = 5;
    std::array<Index, kNumModalities> lengths{400, 120, 120, 200};
    std::array<Index, kNumModalities> channels{1, 16, 16, 3};
    // Modality carrying the class signal, per class. Empty selects class c -> modality c mod 4.
    std::vector<Modality> informative;
    // Class c oscillates at base_cycles * (c + 1) cycles over the sequence.
    double base_cycles = 3.0;
    double amplitude = 1.0;
    std::uint64_t seed = 0;

    Modality informative_modality(int cls) const;
    void validate() const;
};

// Deterministic in (spec, class, index within class).
ModalityBundle synthetic_sample(const SyntheticSpec& spec, int cls, int index_in_class);

// Manifest of the samples gen_synthetic writes, without touching the disk.
SampleManifest synthetic_manifest(const SyntheticSpec& spec);

// Writes <out_dir>/manifest.json and one directory of .mseq files per sample.
SampleManifest gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// --- Corruption --------------------------------------------------------------

struct CorruptionSpec {
    double p = 0.0;              // per-modality probability of additive noise
    double sigma = 1.0;          // noise std as a multiple of the modality's own std
    ModalityMask drop{};         // modalities removed outright
    double misalign_frac = 0.0;  // max crop-shift as a fraction of each length
    std::uint64_t seed = 0;

    void validate() const;
    bool is_identity() const;
};

struct ModalityCorruption {
    bool dropped = false;
    bool noised = false;
    Index shift = 0;
};

// What corrupt() will do to each present modality of sample `sample_index`.
std::array<ModalityCorruption, kNumModalities> corruption_plan(const CorruptionSpec& spec, std::uint64_t sample_index,
                                                               const ModalityBundle& bundle);

ModalityBundle corrupt(const ModalityBundle& bundle, const CorruptionSpec& spec, std::uint64_t sample_index);

// Stream key for (seed, sample, modality, purpose); distinct tuples give
// statistically independent generators.
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t sample, std::uint64_t modality, std::uint64_t purpose);

}  // namespace touchformer
