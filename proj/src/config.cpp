#include "touchformer/config.hpp"

#include <fstream>
#include <set>

namespace touchformer {

using json = nlohmann::json;

namespace {

// Reads typed fields out of one JSON object and rejects keys nobody asked for.
class Section {
   public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ValidationError("config: section '" + name_ + "' must be an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError("config: " + name_ + "." + key + " has the wrong type");
        }
    }

    const json* raw(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw ValidationError("config: unknown key " + name_ + "." + key);
        }
    }

   private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

json modality_list(const ModalityMask& mask) {
    json out = json::array();
    for (Modality m : kModalities) {
        if (mask[index_of(m)]) out.push_back(modality_name(m));
    }
    return out;
}

ModalityMask parse_modality_list(const json& j, const std::string& key) {
    if (!j.is_array()) throw ValidationError("config: " + key + " must be a list of modality codes");
    ModalityMask mask{};
    for (const auto& v : j) {
        if (!v.is_string()) throw ValidationError("config: " + key + " must be a list of modality codes");
        mask[index_of(parse_modality(v.get<std::string>()))] = true;
    }
    return mask;
}

void read_model(Section& s, TouchFormerConfig& c) {
    s.read("d", c.d);
    s.read("heads", c.heads);
    s.read("cross_blocks", c.cross_blocks);
    s.read("intra_blocks", c.intra_blocks);
    s.read("kernel_sizes", c.kernel_sizes);
    s.read("channels", c.channels);
    s.read("gate_hidden", c.gate_hidden);
    s.read("ffn_hidden", c.ffn_hidden);
    s.read("gate_th", c.gate_th);
    s.read("gate_bias_init", c.gate_bias_init);
    s.read("tau", c.tau);
    s.read("lambda", c.lambda);
    s.read("num_classes", c.num_classes);
    s.read("embed_dim", c.embed_dim);
    s.read("mag_enabled", c.mag_enabled);
    s.read("cer_enabled", c.cer_enabled);
    s.read("dropout", c.dropout);
    s.finish();
}

}  // namespace

json to_json(const TouchFormerConfig& c) {
    return {{"d", c.d},
            {"heads", c.heads},
            {"cross_blocks", c.cross_blocks},
            {"intra_blocks", c.intra_blocks},
            {"kernel_sizes", c.kernel_sizes},
            {"channels", c.channels},
            {"gate_hidden", c.gate_hidden},
            {"ffn_hidden", c.ffn_hidden},
            {"gate_th", c.gate_th},
            {"gate_bias_init", c.gate_bias_init},
            {"tau", c.tau},
            {"lambda", c.lambda},
            {"num_classes", c.num_classes},
            {"embed_dim", c.embed_dim},
            {"mag_enabled", c.mag_enabled},
            {"cer_enabled", c.cer_enabled},
            {"dropout", c.dropout}};
}

json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"lr0", c.lr0},
            {"weight_decay", c.weight_decay},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"seed", c.seed},
            {"task", task_name(c.task)},
            {"label_level", label_level_name(c.label_level)},
            {"split_ratio", c.split_ratio},
            {"folds", c.folds},
            {"fold", c.fold},
            {"eval_every", c.eval_every}};
}

json to_json(const CorruptionSpec& s) {
    return {{"p", s.p}, {"sigma", s.sigma}, {"drop", modality_list(s.drop)}, {"misalign_frac", s.misalign_frac},
            {"seed", s.seed}};
}

json to_json(const SyntheticSpec& s) {
    json informative = json::array();
    for (Modality m : s.informative) informative.push_back(modality_name(m));
    return {{"num_classes", s.num_classes},
            {"num_subclasses_per_class", s.num_subclasses_per_class},
            {"samples_per_class", s.samples_per_class},
            {"samples_per_material", s.samples_per_material},
            {"lengths", s.lengths},
            {"channels", s.channels},
            {"informative", informative},
            {"base_cycles", s.base_cycles},
            {"amplitude", s.amplitude},
            {"seed", s.seed}};
}

json to_json(const ExperimentConfig& c) {
    return {{"train", to_json(c.train)},
            {"model", to_json(c.model)},
            {"corruption", to_json(c.corruption)},
            {"synthetic", to_json(c.synthetic)}};
}

TouchFormerConfig model_config_from_json(const json& j) {
    TouchFormerConfig c;
    Section s(j, "model");
    read_model(s, c);
    return c;
}

ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig c;
    Section top(j, "config");
    if (const json* t = top.raw("train")) {
        Section s(*t, "train");
        std::string task = task_name(c.train.task);
        std::string level = label_level_name(c.train.label_level);
        s.read("batch_size", c.train.batch_size);
        s.read("epochs", c.train.epochs);
        s.read("lr0", c.train.lr0);
        s.read("weight_decay", c.train.weight_decay);
        s.read("beta1", c.train.adam.beta1);
        s.read("beta2", c.train.adam.beta2);
        s.read("eps", c.train.adam.eps);
        s.read("seed", c.train.seed);
        s.read("task", task);
        s.read("label_level", level);
        s.read("split_ratio", c.train.split_ratio);
        s.read("folds", c.train.folds);
        s.read("fold", c.train.fold);
        s.read("eval_every", c.train.eval_every);
        s.finish();
        c.train.task = parse_task(task);
        c.train.label_level = parse_label_level(level);
    }
    if (const json* m = top.raw("model")) c.model = model_config_from_json(*m);
    if (const json* k = top.raw("corruption")) {
        Section s(*k, "corruption");
        s.read("p", c.corruption.p);
        s.read("sigma", c.corruption.sigma);
        if (const json* drop = s.raw("drop")) c.corruption.drop = parse_modality_list(*drop, "corruption.drop");
        s.read("misalign_frac", c.corruption.misalign_frac);
        s.read("seed", c.corruption.seed);
        s.finish();
    }
    if (const json* y = top.raw("synthetic")) {
        Section s(*y, "synthetic");
        s.read("num_classes", c.synthetic.num_classes);
        s.read("num_subclasses_per_class", c.synthetic.num_subclasses_per_class);
        s.read("samples_per_class", c.synthetic.samples_per_class);
        s.read("samples_per_material", c.synthetic.samples_per_material);
        s.read("lengths", c.synthetic.lengths);
        s.read("channels", c.synthetic.channels);
        if (const json* inf = s.raw("informative")) {
            if (!inf->is_array()) throw ValidationError("config: synthetic.informative must be a list");
            c.synthetic.informative.clear();
            for (const auto& v : *inf) {
                if (!v.is_string()) throw ValidationError("config: synthetic.informative must list modality codes");
                c.synthetic.informative.push_back(parse_modality(v.get<std::string>()));
            }
        }
        s.read("base_cycles", c.synthetic.base_cycles);
        s.read("amplitude", c.synthetic.amplitude);
        s.read("seed", c.synthetic.seed);
        s.finish();
    }
    top.finish();
    return c;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string(), std::string("invalid JSON: ") + e.what());
    }
}

void set_config_value(json& j, const std::string& dotted_key, const std::string& value) {
    const auto dot = dotted_key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == dotted_key.size()) {
        throw ValidationError("config override '" + dotted_key + "' must look like section.key");
    }
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    j[dotted_key.substr(0, dot)][dotted_key.substr(dot + 1)] = std::move(parsed);
}

}  // namespace touchformer
