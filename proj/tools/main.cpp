#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "touchformer/checkpoint.hpp"
#include "touchformer/config.hpp"
#include "touchformer/diagnostics.hpp"
#include "touchformer/harness.hpp"
#include "touchformer/splits.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace touchformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Dedicated flags and the config keys they override.
struct FlagSpec {
    const char* flag;
    const char* key;
    const char* help;
};

constexpr FlagSpec kTrainFlags[] = {
    {"--epochs", "train.epochs", "Training epochs"},
    {"--batch-size", "train.batch_size", "Mini-batch size (>= 2)"},
    {"--lr", "train.lr0", "Initial learning rate"},
    {"--weight-decay", "train.weight_decay", "Decoupled weight decay"},
    {"--seed", "train.seed", "Training seed"},
    {"--task", "train.task", "ssmc, usmc or fine_grained"},
    {"--label-level", "train.label_level", "class or subclass"},
    {"--fold", "train.fold", "Held-out fold for usmc"},
    {"--eval-every", "train.eval_every", "Evaluate the test split every n epochs (0: last only)"},
    {"--d", "model.d", "Model width"},
    {"--heads", "model.heads", "Attention heads"},
    {"--gate-th", "model.gate_th", "Gate discard threshold"},
    {"--lambda", "model.lambda", "Contrastive loss weight"},
    {"--tau", "model.tau", "Contrastive temperature"},
    {"--mag", "model.mag_enabled", "Enable modality gating (true/false)"},
    {"--cer", "model.cer_enabled", "Enable the contrastive term (true/false)"},
    {"--p", "corruption.p", "Corruption ratio"},
    {"--sigma", "corruption.sigma", "Noise scale relative to each modality's std"},
    {"--misalign", "corruption.misalign_frac", "Max crop-shift fraction"},
    {"--corruption-seed", "corruption.seed", "Corruption seed"},
};

constexpr FlagSpec kDataFlags[] = {
    {"--classes", "synthetic.num_classes", "Number of classes"},
    {"--subclasses", "synthetic.num_subclasses_per_class", "Subclasses per class"},
    {"--samples-per-class", "synthetic.samples_per_class", "Samples per class"},
    {"--data-seed", "synthetic.seed", "Generator seed"},
};

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::pair<const FlagSpec*, std::string>> flag_values;
    std::string data;
    std::string drop;
};

class Command {
   public:
    Command(CLI::App& app, const char* name, const char* description) : sub_(app.add_subcommand(name, description)) {
        sub_->add_option("-c,--config", args_.config_path, "JSON config file");
        sub_->add_option("--set", args_.sets, "Override any config key: section.key=value");
    }

    Command& train_flags() {
        for (const FlagSpec& f : kTrainFlags) add_flag(f);
        sub_->add_option("--drop", args_.drop, "Comma-separated modalities to remove, e.g. S,A");
        return *this;
    }

    Command& data_flags() {
        for (const FlagSpec& f : kDataFlags) add_flag(f);
        return *this;
    }

    Command& data_option() {
        sub_->add_option("--data", args_.data, "manifest.json (default: in-memory synthetic data)");
        return *this;
    }

    CLI::App* app() { return sub_; }
    const CommonArgs& args() const { return args_; }

    // Config file, then dedicated flags, then --set entries.
    json merged_config() const {
        json j = args_.config_path.empty() ? json::object() : read_json_file(args_.config_path);
        if (!j.is_object()) throw ValidationError("config: top level must be an object");
        for (std::size_t i = 0; i < kMaxFlags; ++i) {
            if (values_[i]) set_config_value(j, specs_[i]->key, *values_[i]);
        }
        if (!args_.drop.empty()) {
            json list = json::array();
            std::size_t start = 0;
            while (start <= args_.drop.size()) {
                const auto comma = args_.drop.find(',', start);
                const auto end = comma == std::string::npos ? args_.drop.size() : comma;
                if (end > start) list.push_back(args_.drop.substr(start, end - start));
                start = end + 1;
            }
            j["corruption"]["drop"] = list;
        }
        for (const auto& s : args_.sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ValidationError("--set expects section.key=value, got '" + s + "'");
            set_config_value(j, s.substr(0, eq), s.substr(eq + 1));
        }
        return j;
    }

   private:
    static constexpr std::size_t kMaxFlags = 32;

    void add_flag(const FlagSpec& f) {
        const std::size_t i = count_++;
        specs_[i] = &f;
        sub_->add_option_function<std::string>(
            f.flag, [this, i](const std::string& v) { values_[i] = v; }, std::string(f.help) + " [" + f.key + "]");
    }

    CLI::App* sub_;
    CommonArgs args_;
    std::size_t count_ = 0;
    std::array<const FlagSpec*, kMaxFlags> specs_{};
    std::array<std::optional<std::string>, kMaxFlags> values_{};
};

struct LoadedData {
    SampleManifest manifest;
    Dataset data;
};

LoadedData load_data(const std::string& path, const ExperimentConfig& cfg) {
    LoadedData out;
    if (path.empty()) {
        out.manifest = synthetic_manifest(cfg.synthetic);
        out.data = synthetic_dataset(cfg.synthetic);
        if (cfg.train.label_level == LabelLevel::Subclass) {
            out.data.label_names.clear();
            for (const auto& s : out.manifest.subclasses) out.data.label_names.push_back(s.name);
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data.labels[i] = out.manifest.samples[i].subclass;
        }
    } else {
        out.manifest = read_manifest(path);
        out.data = load_dataset(out.manifest, cfg.train.label_level);
    }
    return out;
}

// Parses the merged config. Fine-grained runs use subclass labels, and the
// class count follows the data unless the config pins it.
ExperimentConfig resolve_config(const json& j) {
    ExperimentConfig cfg = experiment_from_json(j);
    if (cfg.train.task == Task::FineGrained) cfg.train.label_level = LabelLevel::Subclass;
    return cfg;
}

void fit_model_to_data(ExperimentConfig& cfg, const json& j, const Dataset& data) {
    const bool pinned = j.contains("model") && j["model"].contains("num_classes");
    if (!pinned) cfg.model.num_classes = std::max(2, data.num_labels());
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ValidationError("cannot parse '" + item + "' as a number");
        }
    }
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> out;
    for (double v : parse_doubles(csv)) {
        if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
            throw ValidationError("seeds must be non-negative integers");
        }
        out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
}

void print_epoch(const EpochLog& e) {
    std::printf("epoch %3d %-5s loss %.5f acc %.4f g_mean %.4f\n", e.epoch, e.split.c_str(), e.loss, e.accuracy,
                e.g_mean);
    std::fflush(stdout);
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::Shape:
        case ErrorKind::Domain:
        case ErrorKind::Validation:
        case ErrorKind::Format: return kExitValidation;
        case ErrorKind::Io:
        case ErrorKind::Numerical: return kExitRuntime;
    }
    return kExitRuntime;
}

const char* kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::Domain: return "domain error";
        case ErrorKind::Validation: return "validation error";
        case ErrorKind::Format: return "format error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Numerical: return "numerical error";
    }
    return "error";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TouchFormer multimodal fusion toolkit"};
    app.require_subcommand(1);

    std::string out_path;
    std::string checkpoint;
    std::string init_from;
    std::string split = "test";
    std::string p_values = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
    std::string seeds = "0,1,2";

    Command gen(app, "gen-data", "Write a synthetic dataset to disk");
    gen.data_flags().app()->add_option("-o,--out", out_path, "Output directory")->required();

    Command train_cmd(app, "train", "Train a model and write metrics, confusion matrix and checkpoint");
    train_cmd.train_flags().data_option();
    train_cmd.app()->add_option("-o,--out", out_path, "Output directory")->required();
    train_cmd.app()->add_option("--init-from", init_from, "Checkpoint to fine-tune from");

    Command eval_cmd(app, "eval", "Evaluate a checkpoint");
    eval_cmd.train_flags().data_option();
    eval_cmd.app()->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval_cmd.app()->add_option("-o,--out", out_path, "Output directory for the reports");
    eval_cmd.app()->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));

    Command sweep(app, "sweep-corruption", "Accuracy against corruption ratio, with and without gating");
    sweep.train_flags().data_option();
    sweep.app()->add_option("-o,--out", out_path, "Output CSV")->required();
    sweep.app()->add_option("--p-values", p_values, "Comma-separated corruption ratios");
    sweep.app()->add_option("--seeds", seeds, "Comma-separated training seeds");

    Command ablate(app, "ablate", "Train baseline, +MAG and +MAG+CER variants");
    ablate.train_flags().data_option();
    ablate.app()->add_option("-o,--out", out_path, "Output CSV")->required();
    ablate.app()->add_option("--seeds", seeds, "Comma-separated training seeds");

    std::uint64_t grad_seed = 0;
    double grad_tol = 1e-4;
    Command grad(app, "gradcheck", "Finite-difference check of the tiny float64 model");
    grad.app()->add_option("--seed", grad_seed, "Model and input seed");
    grad.app()->add_option("--tol", grad_tol, "Maximum relative error");

    Command embed(app, "export-embeddings", "Write per-sample embeddings as CSV");
    embed.train_flags().data_option();
    embed.app()->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    embed.app()->add_option("-o,--out", out_path, "Output CSV")->required();
    embed.app()->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*gen.app()) {
            const ExperimentConfig cfg = resolve_config(gen.merged_config());
            const SampleManifest m = gen_synthetic(cfg.synthetic, out_path);
            std::printf("wrote %zu samples to %s\n", m.samples.size(), out_path.c_str());
            return kExitOk;
        }

        if (*grad.app()) {
            const TouchFormerConfig tiny = tiny_config();
            const GradcheckReport r = model_gradcheck(tiny, tiny_bundle(tiny, grad_seed), grad_seed);
            std::printf("checked %zu entries, max relative error %.3e at %s\n", r.checked, r.max_rel_error,
                        r.worst.c_str());
            return r.passed(grad_tol) ? kExitOk : kExitRuntime;
        }

        Command* active = nullptr;
        for (Command* c : {&train_cmd, &eval_cmd, &sweep, &ablate, &embed}) {
            if (*c->app()) active = c;
        }
        const json merged = active->merged_config();
        ExperimentConfig cfg = resolve_config(merged);
        cfg.train.validate();
        cfg.corruption.validate();
        LoadedData loaded = load_data(active->args().data, cfg);
        fit_model_to_data(cfg, merged, loaded.data);
        cfg.model.validate();
        DataSplit parts = split_dataset(loaded.data, loaded.manifest, cfg.train);
        for (const auto& w : parts.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

        if (active == &train_cmd) {
            std::optional<TouchFormer<float>> init;
            if (!init_from.empty()) init = load_checkpoint(init_from);
            TrainResult r = train(cfg.train, cfg.model, parts.train, &parts.test, cfg.corruption,
                                  init ? &*init : nullptr, print_epoch);
            const fs::path dir(out_path);
            write_text(dir / "metrics.csv", metrics_csv(r.log));
            if (!r.final_eval.predictions.empty()) {
                write_text(dir / "confusion.csv", confusion_csv(r.final_eval.confusion, loaded.data.label_names));
            }
            write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
            save_checkpoint(dir / "model.tfck", r.model);
            std::printf("wrote %s\n", (dir / "model.tfck").c_str());
            return kExitOk;
        }

        if (active == &eval_cmd || active == &embed) {
            const TouchFormer<float> model = load_checkpoint(checkpoint);
            const Dataset& data = split == "train" ? parts.train : split == "all" ? loaded.data : parts.test;
            const EvalResult r = evaluate(model, data, eval_corruption(cfg.corruption));
            if (active == &embed) {
                write_text(out_path, embeddings_csv(data, r.embeddings));
                std::printf("wrote %zu embeddings to %s\n", r.embeddings.size(), out_path.c_str());
                return kExitOk;
            }
            std::printf("%s: loss %.5f accuracy %.4f g_mean %.4f (%zu samples)\n", split.c_str(), r.loss, r.accuracy,
                        r.g_mean, data.size());
            if (!out_path.empty()) {
                const fs::path dir(out_path);
                write_text(dir / "metrics.csv", metrics_csv({{0, split, r.loss, r.accuracy, r.g_mean}}));
                write_text(dir / "confusion.csv", confusion_csv(r.confusion, loaded.data.label_names));
            }
            return kExitOk;
        }

        if (active == &sweep) {
            const auto rows = sweep_corruption(cfg.train, cfg.model, parts.train, parts.test, cfg.corruption,
                                               parse_doubles(p_values), parse_seeds(seeds));
            const std::string text = sweep_csv(rows);
            write_text(out_path, text);
            std::fputs(text.c_str(), stdout);
            return kExitOk;
        }

        const auto rows =
            run_ablation(cfg.train, cfg.model, parts.train, parts.test, cfg.corruption, parse_seeds(seeds));
        const std::string text = ablation_csv(rows);
        write_text(out_path, text);
        std::fputs(text.c_str(), stdout);
        return kExitOk;
    } catch (const Error& e) {
        std::fprintf(stderr, "%s: %s\n", kind_name(e.kind()), e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}
