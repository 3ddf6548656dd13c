#include "touchformer/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "touchformer/objectives.hpp"
#include "touchformer/splits.hpp"

namespace touchformer {

namespace {

constexpr std::uint64_t kShufflePurpose = 11;
constexpr std::uint64_t kDropoutPurpose = 12;
constexpr std::uint64_t kEvalCorruptionPurpose = 13;
constexpr std::uint64_t kSweepCorruptionPurpose = 14;

int argmax(const Tensor<float>& logits) {
    Index best = 0;
    logits.matrix().row(0).maxCoeff(&best);
    return static_cast<int>(best);
}

// Groups a shuffled order into batches; a trailing batch of one is merged into
// the previous batch so every batch has a pair for the contrastive term.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, int batch_size) {
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

Tensor<float> stack_rows(const std::vector<Tensor<float>>& rows) {
    const Index n = static_cast<Index>(rows.size());
    const Index d = rows.front().size();
    Matrix<float> out(n, d);
    for (Index i = 0; i < n; ++i) {
        out.row(i) = Eigen::Map<const Eigen::RowVectorXf>(rows[static_cast<std::size_t>(i)].data().data(), d);
    }
    return Tensor<float>::from_matrix(std::move(out));
}

double objective_value(const TouchFormerConfig& cfg, const std::vector<Tensor<float>>& logits,
                       const std::vector<Tensor<float>>& embeddings, const std::vector<int>& labels) {
    Tape<float> tape(false);
    const bool cer = cfg.cer_enabled && labels.size() >= 2;
    Var<float> loss = total_loss(tape.constant(stack_rows(logits)), labels, tape.constant(stack_rows(embeddings)),
                                 cfg.lambda, cfg.tau, cer);
    return static_cast<double>(loss.value().item());
}

void check_labels(const Dataset& data, Index num_classes, const std::string& what) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] < 0 || data.labels[i] >= num_classes) {
            throw ValidationError(what + ": sample '" + data.ids[i] + "' has label " + std::to_string(data.labels[i]) +
                                  " but the model has " + std::to_string(num_classes) + " classes");
        }
    }
}

}  // namespace

std::string task_name(Task t) {
    switch (t) {
        case Task::Ssmc: return "ssmc";
        case Task::Usmc: return "usmc";
        case Task::FineGrained: return "fine_grained";
    }
    return "?";
}

Task parse_task(const std::string& s) {
    if (s == "ssmc") return Task::Ssmc;
    if (s == "usmc") return Task::Usmc;
    if (s == "fine_grained") return Task::FineGrained;
    throw ValidationError("unknown task '" + s + "' (expected ssmc, usmc or fine_grained)");
}

std::string label_level_name(LabelLevel l) { return l == LabelLevel::Class ? "class" : "subclass"; }

LabelLevel parse_label_level(const std::string& s) {
    if (s == "class") return LabelLevel::Class;
    if (s == "subclass") return LabelLevel::Subclass;
    throw ValidationError("unknown label level '" + s + "' (expected class or subclass)");
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ValidationError("train config: batch_size must be >= 2");
    if (epochs < 0) throw ValidationError("train config: epochs must be >= 0");
    if (!(lr0 > 0.0)) throw ValidationError("train config: lr0 must be > 0");
    if (weight_decay < 0.0) throw ValidationError("train config: weight_decay must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
        throw ValidationError("train config: adam betas must lie in [0, 1) and eps must be > 0");
    }
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ValidationError("train config: split_ratio must lie in (0, 1)");
    if (folds < 2 || fold < 0 || fold >= folds) throw ValidationError("train config: need folds >= 2 and 0 <= fold < folds");
    if (eval_every < 0) throw ValidationError("train config: eval_every must be >= 0");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.label_names = label_names;
    for (std::size_t i : indices) {
        out.bundles.push_back(bundles.at(i));
        out.labels.push_back(labels.at(i));
        out.ids.push_back(ids.at(i));
    }
    return out;
}

Dataset load_dataset(const SampleManifest& manifest, LabelLevel level) {
    manifest.validate();
    Dataset data;
    if (level == LabelLevel::Class) {
        data.label_names = manifest.classes;
    } else {
        if (manifest.subclasses.empty()) throw ValidationError("load_dataset: manifest lists no subclasses");
        for (const auto& s : manifest.subclasses) data.label_names.push_back(s.name);
    }
    for (const auto& e : manifest.samples) {
        data.bundles.push_back(load_sample(manifest, e));
        data.labels.push_back(level == LabelLevel::Class ? e.cls : e.subclass);
        data.ids.push_back(e.id);
    }
    return data;
}

Dataset synthetic_dataset(const SyntheticSpec& spec) {
    const SampleManifest manifest = synthetic_manifest(spec);
    Dataset data;
    data.label_names = manifest.classes;
    for (std::size_t k = 0; k < manifest.samples.size(); ++k) {
        const SampleEntry& e = manifest.samples[k];
        data.bundles.push_back(
            synthetic_sample(spec, e.cls, static_cast<int>(k % static_cast<std::size_t>(spec.samples_per_class))));
        data.labels.push_back(e.cls);
        data.ids.push_back(e.id);
    }
    return data;
}

DataSplit split_dataset(const Dataset& data, const SampleManifest& manifest, const TrainConfig& config) {
    if (data.size() != manifest.samples.size()) {
        throw ValidationError("split_dataset: dataset and manifest sizes differ");
    }
    DataSplit out;
    if (config.task == Task::Usmc) {
        const FoldPlan plan = split_kfold_grouped(manifest, config.folds, config.seed);
        out.train = data.subset(plan.train[static_cast<std::size_t>(config.fold)]);
        out.test = data.subset(plan.test[static_cast<std::size_t>(config.fold)]);
    } else {
        HoldoutSplit split = split_holdout(manifest, config.split_ratio, config.seed);
        out.train = data.subset(split.train);
        out.test = data.subset(split.test);
        out.warnings = std::move(split.warnings);
    }
    return out;
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out << std::setprecision(9) << "epoch,split,loss,accuracy,g_mean\n";
    for (const auto& row : log) {
        out << row.epoch << ',' << row.split << ',' << row.loss << ',' << row.accuracy << ',' << row.g_mean << '\n';
    }
    return out.str();
}

CorruptionSpec eval_corruption(const CorruptionSpec& spec) {
    CorruptionSpec out = spec;
    out.seed = stream_key(spec.seed, 0, 0, kEvalCorruptionPurpose);
    return out;
}

EvalResult evaluate(const TouchFormer<float>& model, const Dataset& data, const CorruptionSpec& corruption) {
    if (data.size() == 0) throw ValidationError("evaluate: empty dataset");
    corruption.validate();
    const TouchFormerConfig& cfg = model.config();
    check_labels(data, cfg.num_classes, "evaluate");
    const bool identity = corruption.is_identity();

    EvalResult result;
    std::vector<Tensor<float>> logits;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto out = identity ? model.infer(data.bundles[i]) : model.infer(corrupt(data.bundles[i], corruption, i));
        if (!out.logits.all_finite()) throw NumericalError("evaluate: non-finite logits for sample '" + data.ids[i] + "'");
        result.predictions.push_back(argmax(out.logits));
        logits.push_back(std::move(out.logits));
        result.embeddings.push_back(std::move(out.embedding));
    }
    result.loss = objective_value(cfg, logits, result.embeddings, data.labels);
    result.accuracy = accuracy(result.predictions, data.labels);
    result.confusion = confusion(result.predictions, data.labels, static_cast<int>(cfg.num_classes));
    result.g_mean = g_mean(result.confusion);
    return result;
}

TrainResult train(const TrainConfig& config, const TouchFormerConfig& model_config, const Dataset& train_set,
                  const Dataset* test_set, const CorruptionSpec& corruption, const TouchFormer<float>* init,
                  const EpochCallback& on_epoch) {
    config.validate();
    corruption.validate();
    TouchFormer<float> model = init ? *init : TouchFormer<float>(model_config, config.seed);
    const TouchFormerConfig& cfg = model.config();
    cfg.validate();
    if (train_set.size() < 2) throw ValidationError("train: need at least 2 training samples");
    check_labels(train_set, cfg.num_classes, "train");
    if (test_set) check_labels(*test_set, cfg.num_classes, "train (test split)");

    const auto params = model.params().named();
    AdamState<float> state;
    const CorruptionSpec test_corruption = eval_corruption(corruption);
    Rng dropout_rng(stream_key(config.seed, 0, 0, kDropoutPurpose));
    ForwardOptions opts;
    if (cfg.dropout > 0.0) opts.dropout_rng = &dropout_rng;

    const std::size_t n = train_set.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const long steps_per_epoch = static_cast<long>(make_batches(order, config.batch_size).size());
    const long total_steps = steps_per_epoch * config.epochs;
    long step = 0;

    std::vector<EpochLog> log;
    EvalResult final_eval;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(stream_key(config.seed, static_cast<std::uint64_t>(epoch), 0, kShufflePurpose));
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::vector<int> preds;
        std::vector<int> seen_labels;
        for (const auto& batch : make_batches(order, config.batch_size)) {
            Tape<float> tape;
            std::vector<Var<float>> logits;
            std::vector<Var<float>> embeddings;
            std::vector<int> labels;
            for (std::size_t idx : batch) {
                const std::uint64_t key = static_cast<std::uint64_t>(epoch) * n + idx;
                ModelOutputs<float> out =
                    corruption.is_identity()
                        ? model.forward(tape, train_set.bundles[idx], opts)
                        : model.forward(tape, corrupt(train_set.bundles[idx], corruption, key), opts);
                logits.push_back(reshape(out.logits, {1, cfg.num_classes}));
                embeddings.push_back(reshape(out.embedding, {1, cfg.embed_dim}));
                labels.push_back(train_set.labels[idx]);
            }
            Var<float> batch_logits = concat(logits, 0);
            Var<float> loss = total_loss(batch_logits, labels, concat(embeddings, 0), cfg.lambda, cfg.tau,
                                         cfg.cer_enabled);
            const float value = loss.value().item();
            if (!std::isfinite(value)) {
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                     std::to_string(step));
            }
            tape.backward(loss);
            std::vector<Matrix<float>> grads;
            grads.reserve(params.size());
            for (const auto& [name, p] : params) grads.push_back(tape.parameter_gradient(*p).matrix());
            adam_step(params, grads, state, lr_at(step, total_steps, config.lr0), config.weight_decay, config.adam);
            ++step;

            loss_sum += static_cast<double>(value) * static_cast<double>(batch.size());
            const auto& lm = batch_logits.matrix();
            for (Index r = 0; r < lm.rows(); ++r) {
                Index best = 0;
                lm.row(r).maxCoeff(&best);
                preds.push_back(static_cast<int>(best));
            }
            seen_labels.insert(seen_labels.end(), labels.begin(), labels.end());
        }
        const ConfusionMatrix cm = confusion(preds, seen_labels, static_cast<int>(cfg.num_classes));
        log.push_back({epoch + 1, "train", loss_sum / static_cast<double>(n), accuracy(preds, seen_labels), g_mean(cm)});
        if (on_epoch) on_epoch(log.back());

        const bool last = epoch + 1 == config.epochs;
        const bool due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        if (test_set && test_set->size() > 0 && (last || due)) {
            EvalResult r = evaluate(model, *test_set, test_corruption);
            log.push_back({epoch + 1, "test", r.loss, r.accuracy, r.g_mean});
            if (on_epoch) on_epoch(log.back());
            if (last) final_eval = std::move(r);
        }
    }
    return {std::move(model), std::move(log), std::move(final_eval)};
}

std::vector<SweepRow> sweep_corruption(const TrainConfig& config, const TouchFormerConfig& model_config,
                                       const Dataset& train_set, const Dataset& test_set,
                                       const CorruptionSpec& corruption, const std::vector<double>& p_values,
                                       const std::vector<std::uint64_t>& seeds) {
    if (p_values.empty() || seeds.empty()) throw ValidationError("sweep_corruption: need p values and seeds");
    TrainConfig cfg = config;
    cfg.eval_every = 0;
    TouchFormerConfig no_mag = model_config;
    no_mag.mag_enabled = false;
    TouchFormerConfig full = model_config;
    full.mag_enabled = true;

    std::vector<SweepRow> rows;
    for (double p : p_values) {
        SweepRow row{p, {}, {}};
        for (std::uint64_t seed : seeds) {
            cfg.seed = seed;
            CorruptionSpec spec = corruption;
            spec.p = p;
            spec.seed = stream_key(corruption.seed, seed, 0, kSweepCorruptionPurpose);
            row.full.push_back(train(cfg, full, train_set, &test_set, spec).final_eval.accuracy);
            row.no_mag.push_back(train(cfg, no_mag, train_set, &test_set, spec).final_eval.accuracy);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << std::setprecision(9) << "p,full_mean,full_std,no_mag_mean,no_mag_std,gap\n";
    for (const auto& r : rows) {
        out << r.p << ',' << mean_of(r.full) << ',' << stddev_of(r.full) << ',' << mean_of(r.no_mag) << ','
            << stddev_of(r.no_mag) << ',' << mean_of(r.full) - mean_of(r.no_mag) << '\n';
    }
    return out.str();
}

std::vector<AblationRow> run_ablation(const TrainConfig& config, const TouchFormerConfig& model_config,
                                      const Dataset& train_set, const Dataset& test_set,
                                      const CorruptionSpec& corruption, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ValidationError("run_ablation: need at least one seed");
    struct Variant {
        const char* name;
        bool mag;
        bool cer;
    };
    const Variant variants[] = {{"baseline", false, false}, {"+MAG", true, false}, {"+MAG+CER", true, true}};
    TrainConfig cfg = config;
    cfg.eval_every = 0;

    std::vector<AblationRow> rows;
    for (const Variant& v : variants) {
        TouchFormerConfig mc = model_config;
        mc.mag_enabled = v.mag;
        mc.cer_enabled = v.cer;
        AblationRow row{v.name, {}, {}};
        for (std::uint64_t seed : seeds) {
            cfg.seed = seed;
            CorruptionSpec spec = corruption;
            spec.seed = stream_key(corruption.seed, seed, 0, kSweepCorruptionPurpose);
            const EvalResult r = train(cfg, mc, train_set, &test_set, spec).final_eval;
            row.accuracy.push_back(r.accuracy);
            row.g_mean.push_back(r.g_mean);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << std::setprecision(9) << "variant,accuracy_mean,accuracy_std,g_mean_mean,g_mean_std\n";
    for (const auto& r : rows) {
        out << r.variant << ',' << mean_of(r.accuracy) << ',' << stddev_of(r.accuracy) << ',' << mean_of(r.g_mean)
            << ',' << stddev_of(r.g_mean) << '\n';
    }
    return out.str();
}

std::string embeddings_csv(const Dataset& data, const std::vector<Tensor<float>>& embeddings) {
    if (embeddings.size() != data.size()) throw ValidationError("embeddings_csv: one embedding per sample required");
    std::ostringstream out;
    out << std::setprecision(9) << "id,label";
    if (!embeddings.empty()) {
        for (Index j = 0; j < embeddings.front().size(); ++j) out << ",e" << j;
    }
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << data.ids[i] << ',' << data.labels[i];
        for (float v : embeddings[i].data()) out << ',' << v;
        out << '\n';
    }
    return out.str();
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace touchformer
