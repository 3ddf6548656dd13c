#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "json.hpp"
#include "touchformer/checkpoint.hpp"
#include "touchformer/config.hpp"
#include "touchformer/diagnostics.hpp"
#include "touchformer/harness.hpp"
#include "touchformer/splits.hpp"

using namespace touchformer;
namespace fs = std::filesystem;

namespace {

class TempDir {
   public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("tf_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

   private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

// n_materials materials of 5 recordings each; material m belongs to class m % classes.
SampleManifest grouped_manifest(int n_materials, int classes) {
    SampleManifest m;
    for (int c = 0; c < classes; ++c) {
        m.classes.push_back("c" + std::to_string(c));
        m.subclasses.push_back({"c" + std::to_string(c) + "_s", c});
    }
    for (int mat = 0; mat < n_materials; ++mat) {
        for (int r = 0; r < 5; ++r) {
            const std::string id = "m" + std::to_string(mat) + "_" + std::to_string(r);
            m.samples.push_back({id, id, mat % classes, mat % classes, mat});
        }
    }
    return m;
}

SyntheticSpec tiny_spec() {
    SyntheticSpec s;
    s.num_classes = 3;
    s.samples_per_class = 8;
    s.lengths = {24, 12, 12, 16};
    s.channels = {1, 2, 2, 3};
    s.seed = 5;
    return s;
}

TrainConfig tiny_train(int epochs = 3) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 8;
    c.lr0 = 1e-2;
    c.weight_decay = 0.0;
    return c;
}

struct Split {
    Dataset train, test;
};

Split tiny_split() {
    const SyntheticSpec spec = tiny_spec();
    const Dataset data = synthetic_dataset(spec);
    const DataSplit s = split_dataset(data, synthetic_manifest(spec), tiny_train());
    return {s.train, s.test};
}

bool params_bitwise_equal(TouchFormer<float>& a, TouchFormer<float>& b) {
    auto pa = a.params().named();
    auto pb = b.params().named();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto& x = *pa[i].second;
        const auto& y = *pb[i].second;
        if (pa[i].first != pb[i].first || x.shape() != y.shape()) return false;
        if (std::memcmp(x.data().data(), y.data().data(), static_cast<std::size_t>(x.size()) * sizeof(float)) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace

// --- Optimiser ----------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRate) {
    Tensor<double> w = Tensor<double>::scalar(0.5);
    AdamState<double> state;
    adam_step<double>({{"w", &w}}, {Matrix<double>::Constant(1, 1, 1.0)}, state, 1e-3, 0.0);
    EXPECT_NEAR(w.item() - 0.5, -1e-3 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(w.item() - 0.5, -0.000999999, 1e-9);
    EXPECT_EQ(state.t, 1);
}

TEST(Adam, ZeroGradientWithoutDecayLeavesParams) {
    std::mt19937_64 gen(1);
    Tensor<double> w({3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor<double> before = w;
    AdamState<double> state;
    for (int i = 0; i < 5; ++i) adam_step<double>({{"w", &w}}, {Matrix<double>::Zero(3, 2)}, state, 1e-2, 0.0);
    EXPECT_EQ(w, before);
}

TEST(Adam, MatchesReferenceRecurrence) {
    // Kingma & Ba with decoupled decay, written out independently.
    const double lr = 1e-3, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const std::vector<double> grads{1.0, 1.0, -0.5, 2.0, 0.25};
    double p = 0.3, m = 0.0, v = 0.0;
    Tensor<double> w = Tensor<double>::scalar(0.3);
    AdamState<double> state;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        p -= lr * wd * p;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
        const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
        p -= lr * mh / (std::sqrt(vh) + eps);
        adam_step<double>({{"w", &w}}, {Matrix<double>::Constant(1, 1, g)}, state, lr, wd);
        EXPECT_NEAR(w.item(), p, 1e-10) << "step " << t;
    }
}

TEST(Adam, ZeroLearningRateIsBitwiseNoOp) {
    std::mt19937_64 gen(2);
    std::normal_distribution<float> dist;
    Tensor<float> w({4, 3});
    for (Index i = 0; i < w.size(); ++i) w[i] = dist(gen);
    const Tensor<float> before = w;
    AdamState<float> state;
    Matrix<float> g(4, 3);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = dist(gen);
    adam_step<float>({{"w", &w}}, {g}, state, 0.0, 0.0);
    EXPECT_EQ(std::memcmp(w.data().data(), before.data().data(), sizeof(float) * 12), 0);
}

TEST(Adam, StepReducesConvexQuadratic) {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<double> w({5});
        for (Index i = 0; i < 5; ++i) w[i] = dist(gen);
        const double before = w.matrix().squaredNorm();
        AdamState<double> state;
        adam_step<double>({{"w", &w}}, {2.0 * w.matrix()}, state, 1e-3, 0.0);
        EXPECT_LT(w.matrix().squaredNorm(), before);
    }
}

TEST(Adam, RejectsBadGradients) {
    Tensor<double> w = Tensor<double>::scalar(1.0);
    AdamState<double> state;
    try {
        adam_step<double>({{"head.bias", &w}}, {Matrix<double>::Constant(1, 1, std::nan(""))}, state, 1e-3, 0.0);
        ADD_FAILURE() << "no error raised";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("head.bias"), std::string::npos);
    }
    EXPECT_EQ(w.item(), 1.0);
    EXPECT_THROW(adam_step<double>({{"w", &w}}, {Matrix<double>::Zero(2, 1)}, state, 1e-3, 0.0), ShapeError);
}

TEST(CosineSchedule, EndpointsAndMidpoint) {
    EXPECT_EQ(lr_at(0, 100, 0.1), 0.1);
    EXPECT_EQ(lr_at(100, 100, 0.1), 0.0);
    EXPECT_NEAR(lr_at(50, 100, 0.1), 0.05, 1e-15);
    EXPECT_EQ(lr_at(150, 100, 0.1), 0.0);
    EXPECT_EQ(lr_at(0, 0, 0.1), 0.0);
}

TEST(CosineSchedule, NonIncreasingAndMatchesFormula) {
    for (long total : {1L, 7L, 100L, 1563L}) {
        double prev = std::numeric_limits<double>::infinity();
        for (long t = 0; t <= total; ++t) {
            const double lr = lr_at(t, total, 0.1);
            EXPECT_LE(lr, prev);
            EXPECT_NEAR(lr, 0.05 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total))),
                        1e-15);
            prev = lr;
        }
    }
}

// --- Splits -------------------------------------------------------------------

TEST(Holdout, BalancedFortySplitsSevenThree) {
    const SampleManifest m = grouped_manifest(8, 4);  // 40 samples, 10 per class
    const HoldoutSplit s = split_holdout(m, 0.7, 3);
    EXPECT_EQ(s.train.size(), 28u);
    EXPECT_EQ(s.test.size(), 12u);
    std::map<int, int> train_per_class, test_per_class;
    for (auto i : s.train) ++train_per_class[m.samples[i].cls];
    for (auto i : s.test) ++test_per_class[m.samples[i].cls];
    for (int c = 0; c < 4; ++c) {
        EXPECT_EQ(train_per_class[c], 7);
        EXPECT_EQ(test_per_class[c], 3);
    }
}

TEST(Holdout, DeterministicExactPartition) {
    std::mt19937_64 gen(4);
    for (int trial = 0; trial < 50; ++trial) {
        const SampleManifest m = grouped_manifest(static_cast<int>(gen() % 30) + 4, static_cast<int>(gen() % 4) + 1);
        const auto seed = gen();
        const HoldoutSplit a = split_holdout(m, 0.7, seed);
        const HoldoutSplit b = split_holdout(m, 0.7, seed);
        EXPECT_EQ(a.train, b.train);
        EXPECT_EQ(a.test, b.test);
        std::vector<std::size_t> all = a.train;
        all.insert(all.end(), a.test.begin(), a.test.end());
        std::sort(all.begin(), all.end());
        ASSERT_EQ(all.size(), m.samples.size());
        for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
        EXPECT_TRUE(std::is_sorted(a.train.begin(), a.train.end()));
    }
    const SampleManifest m = grouped_manifest(4, 2);
    EXPECT_NE(split_holdout(m, 0.7, 1).test, split_holdout(m, 0.7, 2).test);
}

TEST(Holdout, SingletonClassGoesToTrainWithWarning) {
    SampleManifest m = grouped_manifest(2, 1);
    m.classes.push_back("lonely");
    m.subclasses.push_back({"lonely_s", 1});
    m.samples.push_back({"x", "x", 1, 1, 99});
    const HoldoutSplit s = split_holdout(m, 0.7, 0);
    EXPECT_EQ(s.warnings.size(), 1u);
    EXPECT_NE(std::find(s.train.begin(), s.train.end(), m.samples.size() - 1), s.train.end());
    EXPECT_THROW(split_holdout(m, 1.0, 0), ValidationError);
}

TEST(GroupedKFold, HundredNinetyThreeMaterials) {
    const SampleManifest m = grouped_manifest(193, 8);
    const FoldPlan plan = split_kfold_grouped(m, 5, 7);
    std::vector<std::size_t> sizes;
    for (const auto& f : plan.materials) sizes.push_back(f.size());
    EXPECT_EQ(sizes, (std::vector<std::size_t>{39, 39, 39, 38, 38}));

    std::set<int> seen;
    for (const auto& f : plan.materials) {
        for (int mat : f) EXPECT_TRUE(seen.insert(mat).second) << "material " << mat << " in two folds";
    }
    EXPECT_EQ(seen.size(), 193u);
    for (int k = 0; k < 5; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        std::set<int> train_mats, test_mats;
        for (auto i : plan.train[ku]) train_mats.insert(m.samples[i].material);
        for (auto i : plan.test[ku]) test_mats.insert(m.samples[i].material);
        for (int mat : test_mats) EXPECT_FALSE(train_mats.contains(mat)) << "leak in fold " << k;
        EXPECT_EQ(plan.train[ku].size() + plan.test[ku].size(), m.samples.size());
        EXPECT_EQ(plan.test[ku].size(), 5 * plan.materials[ku].size());
    }
}

TEST(GroupedKFold, FoldsAreClassStratifiedAndDeterministic) {
    const SampleManifest m = grouped_manifest(40, 4);
    const FoldPlan a = split_kfold_grouped(m, 5, 11);
    const FoldPlan b = split_kfold_grouped(m, 5, 11);
    EXPECT_EQ(a.materials, b.materials);
    for (const auto& fold : a.materials) {
        std::map<int, int> per_class;
        for (int mat : fold) ++per_class[mat % 4];
        for (int c = 0; c < 4; ++c) EXPECT_EQ(per_class[c], 2);
    }
    EXPECT_THROW(split_kfold_grouped(m, 1, 0), ValidationError);
    EXPECT_THROW(split_kfold_grouped(grouped_manifest(3, 1), 5, 0), ValidationError);
}

TEST(SplitDataset, UsmcHoldsOutWholeMaterials) {
    SyntheticSpec spec = tiny_spec();
    spec.samples_per_class = 10;
    const SampleManifest m = synthetic_manifest(spec);
    const Dataset data = synthetic_dataset(spec);
    TrainConfig cfg = tiny_train();
    cfg.task = Task::Usmc;
    cfg.folds = 3;
    for (int fold = 0; fold < 3; ++fold) {
        cfg.fold = fold;
        const DataSplit s = split_dataset(data, m, cfg);
        std::map<std::string, int> material_of;
        for (const auto& e : m.samples) material_of[e.id] = e.material;
        std::set<int> train_mats;
        for (const auto& id : s.train.ids) train_mats.insert(material_of[id]);
        for (const auto& id : s.test.ids) EXPECT_FALSE(train_mats.contains(material_of[id]));
        EXPECT_EQ(s.train.size() + s.test.size(), data.size());
    }
}

// --- Training -----------------------------------------------------------------

TEST(Train, ZeroEpochsReturnsInitialParams) {
    const auto [train_set, test_set] = tiny_split();
    const auto cfg = tiny_config();
    TrainResult r = train(tiny_train(0), cfg, train_set, &test_set);
    EXPECT_TRUE(r.log.empty());
    TouchFormer<float> fresh(cfg, 0);
    EXPECT_TRUE(params_bitwise_equal(r.model, fresh));
}

TEST(Train, SameSeedGivesIdenticalTrajectory) {
    const auto [train_set, test_set] = tiny_split();
    CorruptionSpec noisy;
    noisy.p = 0.5;
    noisy.misalign_frac = 0.2;
    TrainResult a = train(tiny_train(), tiny_config(), train_set, &test_set, noisy);
    TrainResult b = train(tiny_train(), tiny_config(), train_set, &test_set, noisy);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].split, b.log[i].split);
        EXPECT_NEAR(a.log[i].loss, b.log[i].loss, 1e-6);
        EXPECT_EQ(a.log[i].accuracy, b.log[i].accuracy);
    }
    EXPECT_TRUE(params_bitwise_equal(a.model, b.model));
    TrainConfig other = tiny_train();
    other.seed = 1;
    TrainResult c = train(other, tiny_config(), train_set, &test_set, noisy);
    EXPECT_NE(a.log.front().loss, c.log.front().loss);
}

TEST(Train, LogsTrainAndTestRowsPerEpoch) {
    const auto [train_set, test_set] = tiny_split();
    TrainConfig cfg = tiny_train(4);
    cfg.eval_every = 2;
    std::vector<EpochLog> streamed;
    TrainResult r = train(cfg, tiny_config(), train_set, &test_set, {}, nullptr,
                          [&](const EpochLog& row) { streamed.push_back(row); });
    std::vector<std::string> layout;
    for (const auto& row : r.log) layout.push_back(std::to_string(row.epoch) + row.split);
    EXPECT_EQ(layout, (std::vector<std::string>{"1train", "2train", "2test", "3train", "4train", "4test"}));
    EXPECT_EQ(streamed.size(), r.log.size());
    EXPECT_EQ(r.final_eval.predictions.size(), test_set.size());
    EXPECT_EQ(r.final_eval.accuracy, r.log.back().accuracy);
    const std::string csv = metrics_csv(r.log);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,split,loss,accuracy,g_mean");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Train, LossFallsOnEasyData) {
    const auto [train_set, test_set] = tiny_split();
    TrainConfig cfg = tiny_train(15);
    cfg.eval_every = 0;
    TrainResult r = train(cfg, tiny_config(), train_set, &test_set);
    std::vector<double> train_loss;
    for (const auto& row : r.log) {
        if (row.split == "train") train_loss.push_back(row.loss);
    }
    ASSERT_EQ(train_loss.size(), 15u);
    EXPECT_LT(train_loss.back(), 0.5 * train_loss.front());
}

TEST(Train, NonFiniteLossAborts) {
    const auto [train_set, test_set] = tiny_split();
    TouchFormer<float> broken(tiny_config(), 0);
    broken.params().classifier.bias[0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(train(tiny_train(), tiny_config(), train_set, &test_set, {}, &broken), NumericalError);
}

TEST(Train, RejectsInvalidConfigs) {
    const auto [train_set, test_set] = tiny_split();
    TrainConfig cfg = tiny_train();
    cfg.batch_size = 1;
    EXPECT_THROW(train(cfg, tiny_config(), train_set), ValidationError);
    cfg = tiny_train();
    cfg.lr0 = 0.0;
    EXPECT_THROW(train(cfg, tiny_config(), train_set), ValidationError);
    auto mc = tiny_config();
    mc.num_classes = 2;
    EXPECT_THROW(train(tiny_train(), mc, train_set), ValidationError);
}

TEST(Train, InitFromContinuesFromGivenWeights) {
    const auto [train_set, test_set] = tiny_split();
    TrainResult first = train(tiny_train(2), tiny_config(), train_set, &test_set);
    TrainResult zero = train(tiny_train(0), tiny_config(), train_set, &test_set, {}, &first.model);
    EXPECT_TRUE(params_bitwise_equal(zero.model, first.model));
}

TEST(Evaluate, EmbeddingsAndConfusionAreConsistent) {
    const auto [train_set, test_set] = tiny_split();
    TouchFormer<float> model(tiny_config(), 3);
    const EvalResult r = evaluate(model, test_set);
    EXPECT_EQ(r.confusion.total(), static_cast<long>(test_set.size()));
    EXPECT_EQ(r.embeddings.size(), test_set.size());
    const std::string csv = embeddings_csv(test_set, r.embeddings);
    std::istringstream lines(csv);
    std::string header, first;
    std::getline(lines, header);
    std::getline(lines, first);
    EXPECT_EQ(header, "id,label,e0,e1,e2,e3");
    EXPECT_EQ(first.substr(0, first.find(',')), test_set.ids[0]);
    EXPECT_EQ(std::count(first.begin(), first.end(), ','), 5);
    // Eval corruption is reproducible and seeded apart from training.
    CorruptionSpec spec;
    spec.p = 1.0;
    EXPECT_NE(eval_corruption(spec).seed, spec.seed);
    EXPECT_EQ(evaluate(model, test_set, spec).predictions, evaluate(model, test_set, spec).predictions);
}

// --- Experiment drivers ----------------------------------------------------------

TEST(Sweep, ZeroCorruptionMatchesPlainTraining) {
    const auto [train_set, test_set] = tiny_split();
    TrainConfig cfg = tiny_train(2);
    CorruptionSpec spec;
    spec.sigma = 1.5;
    const auto rows = sweep_corruption(cfg, tiny_config(), train_set, test_set, spec, {0.0, 0.5}, {4});
    ASSERT_EQ(rows.size(), 2u);
    cfg.seed = 4;
    auto full = tiny_config();
    full.mag_enabled = true;
    const double plain = train(cfg, full, train_set, &test_set).final_eval.accuracy;
    EXPECT_NEAR(rows[0].full[0], plain, 1e-6);
    auto no_mag = full;
    no_mag.mag_enabled = false;
    EXPECT_NEAR(rows[0].no_mag[0], train(cfg, no_mag, train_set, &test_set).final_eval.accuracy, 1e-6);

    const std::string csv = sweep_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "p,full_mean,full_std,no_mag_mean,no_mag_std,gap");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_THROW(sweep_corruption(cfg, full, train_set, test_set, spec, {}, {1}), ValidationError);
}

TEST(Ablation, ThreeLabelledRows) {
    const auto [train_set, test_set] = tiny_split();
    const auto rows = run_ablation(tiny_train(1), tiny_config(), train_set, test_set, {}, {0, 1});
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].variant, "baseline");
    EXPECT_EQ(rows[1].variant, "+MAG");
    EXPECT_EQ(rows[2].variant, "+MAG+CER");
    for (const auto& r : rows) EXPECT_EQ(r.accuracy.size(), 2u);
    const std::string csv = ablation_csv(rows);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Stats, MeanAndSampleStd) {
    EXPECT_EQ(mean_of({1.0, 2.0, 3.0}), 2.0);
    EXPECT_DOUBLE_EQ(stddev_of({1.0, 2.0, 3.0}), 1.0);
    EXPECT_EQ(stddev_of({4.0}), 0.0);
}

// --- Checkpoints ----------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitwise) {
    TempDir dir;
    auto cfg = tiny_config();
    cfg.gate_th = 0.3;
    TouchFormer<float> model(cfg, 9);
    const fs::path p = dir.path() / "m.tfck";
    save_checkpoint(p, model);
    TouchFormer<float> back = load_checkpoint(p);
    EXPECT_TRUE(params_bitwise_equal(model, back));
    EXPECT_EQ(back.config().gate_th, 0.3);
    const auto b = tiny_bundle(cfg, 10);
    const auto x = model.infer(b);
    const auto y = back.infer(b);
    EXPECT_EQ(std::memcmp(x.logits.data().data(), y.logits.data().data(), sizeof(float) * 3), 0);
    EXPECT_EQ(x.embedding, y.embedding);
    EXPECT_EQ(slurp(p).substr(0, 4), "TFCK");
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    TempDir dir;
    TouchFormer<float> model(tiny_config(), 11);
    const fs::path p = dir.path() / "m.tfck";
    save_checkpoint(p, model);
    const std::string good = slurp(p);

    spit(p, good.substr(0, good.size() - 7));
    EXPECT_THROW(load_checkpoint(p), FormatError);
    spit(p, good + "xx");
    EXPECT_THROW(load_checkpoint(p), FormatError);
    spit(p, "XFCK" + good.substr(4));
    EXPECT_THROW(load_checkpoint(p), FormatError);
    std::string version = good;
    version[4] = 9;
    spit(p, version);
    EXPECT_THROW(load_checkpoint(p), FormatError);
    spit(p, good.substr(0, 20));
    EXPECT_THROW(load_checkpoint(p), FormatError);
    EXPECT_THROW(load_checkpoint(dir.path() / "nope.tfck"), IoError);
}

TEST(Checkpoint, EditedShapeNamesTheTensor) {
    TempDir dir;
    TouchFormer<float> model(tiny_config(), 12);
    const fs::path p = dir.path() / "m.tfck";
    save_checkpoint(p, model);
    const std::string good = slurp(p);
    std::uint32_t len = 0;
    std::memcpy(&len, good.data() + 8, 4);
    auto header = nlohmann::json::parse(good.substr(12, len));
    const std::string name = header["tensors"][3]["name"];
    header["tensors"][3]["shape"] = {1, 1};
    const std::string edited = header.dump();
    const auto new_len = static_cast<std::uint32_t>(edited.size());
    std::string bytes = good.substr(0, 8);
    bytes.append(reinterpret_cast<const char*>(&new_len), 4);
    bytes += edited + good.substr(12 + len);
    spit(p, bytes);
    try {
        load_checkpoint(p);
        ADD_FAILURE() << "no error raised";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
    }
}

// --- Config ---------------------------------------------------------------------

TEST(Config, RoundTripsThroughJson) {
    ExperimentConfig c;
    c.train.epochs = 7;
    c.train.task = Task::Usmc;
    c.model.d = 16;
    c.model.mag_enabled = false;
    c.corruption.drop[index_of(Modality::F)] = true;
    c.synthetic.informative = {Modality::A, Modality::N, Modality::N, Modality::S};
    const ExperimentConfig back = experiment_from_json(to_json(c));
    EXPECT_EQ(back.train.epochs, 7);
    EXPECT_EQ(back.train.task, Task::Usmc);
    EXPECT_EQ(back.model.d, 16);
    EXPECT_FALSE(back.model.mag_enabled);
    EXPECT_TRUE(back.corruption.drop[index_of(Modality::F)]);
    EXPECT_EQ(back.synthetic.informative, c.synthetic.informative);
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, UnknownKeysAndBadTypesAreRejected) {
    EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"train":{"epoch":3}})")), ValidationError);
    EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"extra":{}})")), ValidationError);
    EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"model":{"d":"big"}})")), ValidationError);
    EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"train":{"task":"nope"}})")), ValidationError);
    EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"corruption":{"drop":["Q"]}})")), ValidationError);
}

TEST(Config, DottedOverridesParseValues) {
    nlohmann::json j = nlohmann::json::object();
    set_config_value(j, "train.lr0", "0.001");
    set_config_value(j, "train.task", "usmc");
    set_config_value(j, "corruption.drop", R"(["S","A"])");
    const ExperimentConfig c = experiment_from_json(j);
    EXPECT_EQ(c.train.lr0, 0.001);
    EXPECT_EQ(c.train.task, Task::Usmc);
    EXPECT_TRUE(c.corruption.drop[0]);
    EXPECT_TRUE(c.corruption.drop[3]);
    EXPECT_THROW(set_config_value(j, "lr0", "1"), ValidationError);
}
