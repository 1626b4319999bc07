#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mclnn/experiment.hpp"
#include "mclnn/inference.hpp"
#include "oracles.hpp"

using namespace mclnn;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    std::filesystem::path dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// small synthetic dataset + compact model for end-to-end checks
struct SmallTask {
    std::filesystem::path dir;
    DatasetManifest manifest;
    ModelConfig model_cfg;

    explicit SmallTask(const std::string& name, int classes = 2) {
        dir = temp_dir(name);
        SynthConfig scfg;
        scfg.classes = classes;
        scfg.files_per_class = 20;
        scfg.features = 8;
        scfg.frames = 24;
        scfg.folds = 4;
        scfg.seed = 11;
        manifest = synth_generate(scfg, dir.string()).manifest;

        model_cfg.input_features = 16; // 8 raw + delta
        model_cfg.use_delta = true;
        model_cfg.conditional = {{12, 2, MaskSpec{0, 0, 6, 2}}};
        model_cfg.extra_frames = 4;
        model_cfg.dense_widths = {12};
        model_cfg.dropout_rates = {0.0};
        model_cfg.classes = classes;
        model_cfg.seed = 21;
    }
    ~SmallTask() { std::filesystem::remove_all(dir); }
};

} // namespace

TEST_CASE("vote basics") {
    FilePrediction single = vote({{0.2, 0.8}});
    CHECK(single.predicted == 1);
    CHECK(single.voted == std::vector<double>{0.2, 0.8});

    FilePrediction two = vote({{0.6, 0.4}, {0.1, 0.9}});
    CHECK(two.voted[0] == doctest::Approx(0.35).epsilon(1e-15));
    CHECK(two.voted[1] == doctest::Approx(0.65).epsilon(1e-15));
    CHECK(two.predicted == 1);

    FilePrediction tie = vote({{0.5, 0.5}});
    CHECK(tie.predicted == 0); // ties break to the lowest class index

    CHECK_THROWS_WITH_AS(vote({}), doctest::Contains("no segments"), std::invalid_argument);
    CHECK_THROWS_AS(vote({{0.5, 0.5}, {1.0}}), std::invalid_argument);
}

TEST_CASE("vote is permutation-invariant") {
    Rng rng(70);
    std::vector<std::vector<double>> probs;
    for (int s = 0; s < 5; ++s) {
        std::vector<double> p = oracle::random_vector(3, rng, 0.01, 1.0);
        double sum = p[0] + p[1] + p[2];
        for (double& v : p) v /= sum;
        probs.push_back(p);
    }
    FilePrediction base = vote(probs);
    for (int trial = 0; trial < 20; ++trial) {
        rng.shuffle(probs);
        FilePrediction p = vote(probs);
        CHECK(p.predicted == base.predicted);
        for (size_t c = 0; c < 3; ++c)
            CHECK(p.voted[c] == doctest::Approx(base.voted[c]).epsilon(1e-14));
    }
}

TEST_CASE("shared positive scaling of segment probabilities preserves the argmax") {
    Rng rng(71);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> probs;
        for (int s = 0; s < 4; ++s) {
            std::vector<double> p = oracle::random_vector(4, rng, 0.01, 1.0);
            double sum = 0.0;
            for (double v : p) sum += v;
            for (double& v : p) v /= sum;
            probs.push_back(p);
        }
        double scale = rng.uniform(0.1, 5.0);
        std::vector<std::vector<double>> scaled = probs;
        for (std::vector<double>& p : scaled)
            for (double& v : p) v *= scale;
        CHECK(vote(scaled).predicted == vote(probs).predicted);
    }
}

TEST_CASE("majority vote ties break to the lowest class index") {
    CHECK(majority_vote({{0.9, 0.1}, {0.1, 0.9}}) == 0);
    CHECK(majority_vote({{0.1, 0.9}, {0.2, 0.8}, {0.9, 0.1}}) == 1);
}

TEST_CASE("evaluate: uniform model predicts class 0 everywhere by the tie rule") {
    SmallTask task("mclnn_eval_uniform");
    Model model = build_model(task.model_cfg);
    for (ParamView& p : collect_params(model))
        std::fill(p.data, p.data + p.size, 0.0); // all-zero net -> uniform softmax

    EvalReport r = evaluate(model, task.manifest, task.manifest.files,
                            model.geometry.width());
    CHECK(r.accuracy == doctest::Approx(0.5).epsilon(1e-12)); // balanced 2-class data
    for (const auto& [path, cls] : r.predictions)
        CHECK(cls == 0);

    // confusion trace / total == accuracy exactly
    long trace = r.confusion[0][0] + r.confusion[1][1];
    CHECK(static_cast<double>(trace) / r.total_files == r.accuracy);
}

TEST_CASE("evaluate reports an error when every file is too short") {
    SmallTask task("mclnn_eval_short");
    ModelConfig cfg = task.model_cfg;
    cfg.extra_frames = 200; // q far beyond every file length
    Model model = build_model(cfg);
    CHECK_THROWS_WITH_AS(evaluate(model, task.manifest, task.manifest.files, 1),
                         doctest::Contains("shorter than one segment"), std::runtime_error);
    CHECK_THROWS_AS(evaluate(model, task.manifest, {}, 1), std::invalid_argument);
}

TEST_CASE("report serialization") {
    EvalReport r;
    r.class_names = {"a", "b"};
    r.confusion = {{3, 1}, {0, 4}};
    r.total_files = 8;
    finalize_report(r);
    CHECK(r.accuracy == doctest::Approx(7.0 / 8).epsilon(1e-15));
    CHECK(r.recall[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(r.precision[1] == doctest::Approx(0.8).epsilon(1e-15));

    nlohmann::json j = report_to_json(r);
    CHECK(j["accuracy"] == r.accuracy);
    std::string text = report_to_text(r);
    CHECK(text.find("accuracy") != std::string::npos);
}

TEST_CASE("train: lr=0 leaves parameters unchanged") {
    SmallTask task("mclnn_train_lr0");
    Model model = build_model(task.model_cfg);
    std::vector<double> before;
    for (ParamView& p : collect_params(model))
        before.insert(before.end(), p.data, p.data + p.size);

    DatasetSplits splits = build_splits(task.manifest, 4, 3);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.max_epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 5;
    train(model, task.manifest, splits, cfg);

    std::vector<double> after;
    for (ParamView& p : collect_params(model))
        after.insert(after.end(), p.data, p.data + p.size);
    CHECK(before == after);
}

TEST_CASE("train: fixed seed gives bit-identical history") {
    SmallTask task("mclnn_train_seed");
    DatasetSplits splits = build_splits(task.manifest, 4, 3);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 9;

    auto dir = temp_dir("mclnn_train_seed_out");
    Model m1 = build_model(task.model_cfg);
    TrainResult r1 = train(m1, task.manifest, splits, cfg);
    write_history_csv(r1.history, (dir / "h1.csv").string());
    Model m2 = build_model(task.model_cfg);
    TrainResult r2 = train(m2, task.manifest, splits, cfg);
    write_history_csv(r2.history, (dir / "h2.csv").string());

    CHECK(read_all(dir / "h1.csv") == read_all(dir / "h2.csv"));
    CHECK(read_all(dir / "h1.csv").find("epoch,train_loss,val_accuracy") == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("train: loss decreases over the first epochs on the synthetic task") {
    SmallTask task("mclnn_train_loss");
    DatasetSplits splits = build_splits(task.manifest, 4, 3);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 13;
    Model model = build_model(task.model_cfg);
    TrainResult r = train(model, task.manifest, splits, cfg);
    REQUIRE(r.history.size() == 5);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("train rejects empty splits") {
    SmallTask task("mclnn_train_empty");
    DatasetSplits splits = build_splits(task.manifest, 4, 3);
    TrainConfig cfg;
    Model model = build_model(task.model_cfg);
    DatasetSplits no_train = splits;
    no_train.train.clear();
    CHECK_THROWS_AS(train(model, task.manifest, no_train, cfg), std::invalid_argument);
}

TEST_CASE("cross_validate: per-fold rows, cyclic validation fold, needs 3 folds") {
    SmallTask task("mclnn_cv");
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.batch_size = 32;
    cfg.seed = 3;
    CrossValidationResult r = cross_validate(task.model_cfg, task.manifest, cfg);
    CHECK(r.fold_accuracies.size() == 4);
    double mean = 0.0;
    for (double a : r.fold_accuracies) mean += a;
    mean /= 4.0;
    CHECK(r.mean == doctest::Approx(mean).epsilon(1e-15));

    DatasetManifest two_folds = task.manifest;
    two_folds.folds = 2;
    for (ManifestEntry& e : two_folds.files)
        e.fold = (e.fold - 1) % 2 + 1;
    CHECK_THROWS_AS(cross_validate(task.model_cfg, two_folds, cfg), std::invalid_argument);
}
