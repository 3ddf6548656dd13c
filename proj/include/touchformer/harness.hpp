#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "touchformer/dataio.hpp"
#include "touchformer/metrics.hpp"
#include "touchformer/model.hpp"
#include "touchformer/optim.hpp"

namespace touchformer {

enum class Task { Ssmc, Usmc, FineGrained };
enum class LabelLevel { Class, Subclass };

std::string task_name(Task t);
Task parse_task(const std::string& s);
std::string label_level_name(LabelLevel l);
LabelLevel parse_label_level(const std::string& s);

struct TrainConfig {
    int batch_size = 32;
    int epochs = 50;
    double lr0 = 0.1;
    double weight_decay = 0.1;
    AdamOptions adam;
    std::uint64_t seed = 0;
    Task task = Task::Ssmc;
    LabelLevel label_level = LabelLevel::Class;
    double split_ratio = 0.7;
    int folds = 5;
    int fold = 0;        // which grouped fold is held out for usmc
    int eval_every = 1;  // evaluate the test split every n epochs (0: final epoch only)

    void validate() const;
};

struct Dataset {
    std::vector<ModalityBundle> bundles;
    std::vector<int> labels;
    std::vector<std::string> ids;
    std::vector<std::string> label_names;

    std::size_t size() const { return bundles.size(); }
    int num_labels() const { return static_cast<int>(label_names.size()); }
    Dataset subset(const std::vector<std::size_t>& indices) const;
};

Dataset load_dataset(const SampleManifest& manifest, LabelLevel level);

// In-memory equivalent of gen_synthetic followed by load_dataset.
Dataset synthetic_dataset(const SyntheticSpec& spec);

struct DataSplit {
    Dataset train;
    Dataset test;
    std::vector<std::string> warnings;
};

// Holdout for ssmc and fine_grained, the configured grouped fold for usmc.
DataSplit split_dataset(const Dataset& data, const SampleManifest& manifest, const TrainConfig& config);

struct EpochLog {
    int epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    double g_mean = 0.0;
};

std::string metrics_csv(const std::vector<EpochLog>& log);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    double g_mean = 0.0;
    ConfusionMatrix confusion;
    std::vector<int> predictions;
    std::vector<Tensor<float>> embeddings;
};

// Corruption applied to evaluation data: the same spec with an independent seed.
CorruptionSpec eval_corruption(const CorruptionSpec& spec);

EvalResult evaluate(const TouchFormer<float>& model, const Dataset& data, const CorruptionSpec& corruption = {});

struct TrainResult {
    TouchFormer<float> model;
    std::vector<EpochLog> log;
    EvalResult final_eval;  // empty when no test set was given
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains from freshly initialised parameters, or from `init` when given.
// Training data is corrupted per sample with key epoch * N + index; test data
// with eval_corruption(corruption).
TrainResult train(const TrainConfig& config, const TouchFormerConfig& model_config, const Dataset& train_set,
                  const Dataset* test_set = nullptr, const CorruptionSpec& corruption = {},
                  const TouchFormer<float>* init = nullptr, const EpochCallback& on_epoch = {});

struct SweepRow {
    double p = 0.0;
    std::vector<double> full;    // test accuracy per seed, MAG enabled
    std::vector<double> no_mag;  // same with MAG disabled
};

std::vector<SweepRow> sweep_corruption(const TrainConfig& config, const TouchFormerConfig& model_config,
                                       const Dataset& train_set, const Dataset& test_set,
                                       const CorruptionSpec& corruption, const std::vector<double>& p_values,
                                       const std::vector<std::uint64_t>& seeds);

std::string sweep_csv(const std::vector<SweepRow>& rows);

struct AblationRow {
    std::string variant;
    std::vector<double> accuracy;  // per seed
    std::vector<double> g_mean;
};

// baseline (no MAG, no CER), +MAG, +MAG+CER.
std::vector<AblationRow> run_ablation(const TrainConfig& config, const TouchFormerConfig& model_config,
                                      const Dataset& train_set, const Dataset& test_set,
                                      const CorruptionSpec& corruption, const std::vector<std::uint64_t>& seeds);

std::string ablation_csv(const std::vector<AblationRow>& rows);

std::string embeddings_csv(const Dataset& data, const std::vector<Tensor<float>>& embeddings);

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);

}  // namespace touchformer
