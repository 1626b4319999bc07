// Command-line front end: mask generation/inspection, training, evaluation,
// single-file prediction, gradient checking, and synthetic dataset creation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mclnn/mclnn.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 1;

mclnn::ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    in >> j;
    mclnn::ModelConfig cfg;
    mclnn::from_json(j.at("model"), cfg);
    return cfg;
}

mclnn::TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    in >> j;
    mclnn::TrainConfig cfg;
    if (!j.contains("train")) return cfg;
    const nlohmann::json& t = j["train"];
    static const char* known[] = {"batch_size", "max_epochs", "lr",       "seed",
                                  "patience",   "train_hop",  "eval_hop"};
    for (auto it = t.begin(); it != t.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || (it.key() == k);
        if (!ok) throw std::invalid_argument("TrainConfig: unknown key '" + it.key() + "'");
    }
    cfg.batch_size = t.value("batch_size", cfg.batch_size);
    cfg.max_epochs = t.value("max_epochs", cfg.max_epochs);
    cfg.lr = t.value("lr", cfg.lr);
    cfg.seed = t.value("seed", cfg.seed);
    cfg.patience = t.value("patience", cfg.patience);
    cfg.train_hop = t.value("train_hop", cfg.train_hop);
    cfg.eval_hop = t.value("eval_hop", cfg.eval_hop);
    return cfg;
}

int cmd_mask(int features, int nodes, int bandwidth, int overlap, const std::string& out,
             const std::string& format) {
    mclnn::MaskSpec spec{features, nodes, bandwidth, overlap};
    mclnn::BinaryMask mask = mclnn::generate_mask(spec);
    if (format == "pgm")
        mclnn::write_mask_pgm(mask, out);
    else
        mclnn::write_mask_csv(mask, out);
    mclnn::MaskStats s = mclnn::mask_stats(mask);
    std::printf("mask %dx%d bw=%d ov=%d: ones=%ld density=%.6f -> %s\n", features, nodes,
                bandwidth, overlap, s.ones_total, s.density, out.c_str());
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& config_path, int test_fold,
              int val_fold, const std::string& out, uint64_t seed_override, bool has_seed) {
    mclnn::DatasetManifest manifest = mclnn::load_manifest(manifest_path);
    mclnn::ModelConfig model_cfg = load_model_config(config_path);
    mclnn::TrainConfig train_cfg = load_train_config(config_path);
    if (has_seed) {
        model_cfg.seed = seed_override;
        train_cfg.seed = seed_override;
    }
    std::printf("seed: model=%llu train=%llu\n",
                static_cast<unsigned long long>(model_cfg.seed),
                static_cast<unsigned long long>(train_cfg.seed));

    mclnn::DatasetSplits splits = mclnn::build_splits(manifest, test_fold, val_fold);
    mclnn::Model model = mclnn::build_model(model_cfg);
    train_cfg.checkpoint_path = out;

    mclnn::TrainResult r = mclnn::train(model, manifest, splits, train_cfg);
    std::string history_path = out + ".history.csv";
    mclnn::write_history_csv(r.history, history_path);

    if (r.skipped_train_files > 0)
        std::printf("warning: %ld training files shorter than q=%d were skipped\n",
                    r.skipped_train_files, model.geometry.width());
    std::printf("trained %d epochs on %ld segments; best validation accuracy %.4f (epoch %d)\n",
                static_cast<int>(r.history.size()), r.total_train_segments, r.best_val_accuracy,
                r.best_epoch);
    std::printf("model: %s\nhistory: %s\n", out.c_str(), history_path.c_str());
    return 0;
}

int default_threads() {
    if (const char* env = std::getenv("MCLNN_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

int cmd_eval(const std::string& manifest_path, const std::string& model_path, int test_fold,
             int eval_hop, const std::string& json_out, const std::string& pred_csv, int threads) {
    mclnn::DatasetManifest manifest = mclnn::load_manifest(manifest_path);
    mclnn::Model model = mclnn::load_model(model_path);

    std::vector<mclnn::ManifestEntry> files;
    for (const mclnn::ManifestEntry& e : manifest.files)
        if (test_fold == 0 || e.fold == test_fold) files.push_back(e);
    if (files.empty()) throw std::invalid_argument("no files in fold " + std::to_string(test_fold));

    const int hop = eval_hop > 0 ? eval_hop : model.geometry.width();
    mclnn::EvalReport r = mclnn::evaluate(model, manifest, files, hop, threads);
    std::fputs(mclnn::report_to_text(r).c_str(), stdout);
    if (!json_out.empty()) {
        std::ofstream out(json_out);
        out << mclnn::report_to_json(r).dump(2) << '\n';
    }
    if (!pred_csv.empty()) mclnn::write_predictions_csv(r, pred_csv);
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& file_path, int hop) {
    mclnn::Model model = mclnn::load_model(model_path);
    mclnn::FeatureFile f = mclnn::load_feature_csv(file_path);
    mclnn::Matrix frames = model.config.use_delta ? mclnn::concat_delta(f.frames) : f.frames;
    mclnn::Matrix block = mclnn::to_frame_block(frames);
    if (model.standardizer) block = mclnn::standardize_apply(*model.standardizer, block);

    const int q = model.geometry.width();
    std::vector<mclnn::SegmentRef> segs =
        mclnn::extract_segments(block, q, hop > 0 ? hop : q);
    if (segs.empty()) {
        std::fprintf(stderr, "error: file has no segments (needs at least q=%d frames, has %d)\n",
                     q, block.cols());
        return kExitValidation;
    }
    std::vector<std::vector<double>> probs;
    for (const mclnn::SegmentRef& s : segs)
        probs.push_back(mclnn::model_predict(model, s.block));
    mclnn::FilePrediction p = mclnn::vote(probs);
    std::printf("segments: %zu\nvoted probabilities:", segs.size());
    for (double v : p.voted) std::printf(" %.6f", v);
    std::printf("\npredicted class: %d\n", p.predicted);
    return 0;
}

// Finite-difference sweep over every differentiable unit; exits nonzero if
// any unit's max relative error exceeds 1e-6.
int cmd_gradcheck(uint64_t seed);

int cmd_synth(int classes, int files_per_class, int features, int frames, int folds, double noise,
              uint64_t seed, const std::string& out_dir) {
    mclnn::SynthConfig cfg{classes, files_per_class, features, frames, folds, noise, seed};
    mclnn::SynthResult r = mclnn::synth_generate(cfg, out_dir);
    std::printf("wrote %zu files and %s\n", r.manifest.files.size(), r.manifest_path.c_str());
    return 0;
}

// --- gradcheck implementation ---------------------------------------------

struct GradUnit {
    std::string name;
    double max_rel_err;
};

double rel_err(double analytic, double numeric) {
    return std::fabs(analytic - numeric) /
           std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
}

template <typename LossFn>
double fd_max_err(double* params, size_t count, const double* analytic, LossFn loss,
                  double step = 1e-5) {
    double worst = 0.0;
    for (size_t i = 0; i < count; ++i) {
        const double orig = params[i];
        params[i] = orig + step;
        const double lp = loss();
        params[i] = orig - step;
        const double lm = loss();
        params[i] = orig;
        worst = std::max(worst, rel_err(analytic[i], (lp - lm) / (2.0 * step)));
    }
    return worst;
}

mclnn::Matrix random_mat(int r, int c, mclnn::Rng& rng, double lo = -0.6, double hi = 0.6) {
    mclnn::Matrix m(r, c);
    for (size_t i = 0; i < m.size(); ++i)
        m.at_linear(i) = rng.uniform(lo, hi);
    return m;
}

GradUnit check_model_unit(const std::string& name, mclnn::ModelConfig cfg, uint64_t seed) {
    using namespace mclnn;
    // fully-masked nodes sit exactly on the PReLU kink at every seed; give up
    // rather than resampling forever
    for (uint64_t s = seed; s < seed + 1000; ++s) {
        cfg.seed = s;
        Model model = build_model(cfg);
        Rng rng(s + 1);
        Matrix segment = random_mat(cfg.input_features, model.geometry.width(), rng, -1.0, 1.0);
        const int target = 0;

        Rng dummy(0);
        ModelCache cache = model_forward_cached(model, segment, false, dummy);
        bool clean = true;
        for (const ClnnForward& f : cache.cond)
            for (size_t i = 0; i < f.preact.size(); ++i)
                if (std::fabs(f.preact.at_linear(i)) < 1e-3) clean = false;
        for (size_t li = 0; li + 1 < cache.dense.size(); ++li)
            for (double p : cache.dense[li].preact)
                if (std::fabs(p) < 1e-3) clean = false;
        if (!clean) continue;

        ModelGrads grads = model_backward(model, cache, target);
        std::vector<const double*> flat = collect_grads(model, grads);
        std::vector<ParamView> params = collect_params(model);
        auto loss = [&]() {
            Rng r2(0);
            return cross_entropy(model_forward(model, segment, false, r2), target);
        };
        double worst = 0.0;
        for (size_t p = 0; p < params.size(); ++p)
            worst = std::max(worst, fd_max_err(params[p].data, params[p].size, flat[p], loss));
        return {name, worst};
    }
    throw std::runtime_error("gradcheck unit '" + name + "': no kink-free sample in 1000 seeds");
}

int cmd_gradcheck(uint64_t seed) {
    using namespace mclnn;
    std::vector<GradUnit> results;

    ModelConfig clnn;
    clnn.input_features = 6;
    clnn.use_delta = false;
    clnn.conditional = {{5, 1, std::nullopt}};
    clnn.extra_frames = 2;
    clnn.dense_widths = {};
    clnn.dropout_rates = {};
    clnn.classes = 3;
    results.push_back(check_model_unit("clnn_layer", clnn, seed));

    ModelConfig masked = clnn;
    masked.conditional = {{5, 1, MaskSpec{0, 0, 3, 1}}};
    results.push_back(check_model_unit("mclnn_layer", masked, seed + 100));

    ModelConfig dense = clnn;
    dense.dense_widths = {6, 4};
    dense.dropout_rates = {0.0, 0.0};
    results.push_back(check_model_unit("dense_prelu_stack", dense, seed + 200));

    for (PoolMode mode : {PoolMode::Mean, PoolMode::Max, PoolMode::Flatten}) {
        ModelConfig pooled = clnn;
        pooled.pool = mode;
        results.push_back(
            check_model_unit("pool_" + pool_mode_name(mode), pooled, seed + 300));
    }

    ModelConfig full;
    full.input_features = 6;
    full.use_delta = false;
    full.conditional = {{5, 1, MaskSpec{0, 0, 3, 1}}};
    full.extra_frames = 2;
    full.dense_widths = {5};
    full.dropout_rates = {0.0};
    full.classes = 3;
    results.push_back(check_model_unit("full_model_softmax_xent", full, seed + 400));

    bool ok = true;
    for (const GradUnit& u : results) {
        std::printf("%-26s max rel err %.3e %s\n", u.name.c_str(), u.max_rel_err,
                    u.max_rel_err <= 1e-6 ? "ok" : "FAIL");
        ok = ok && u.max_rel_err <= 1e-6;
    }
    std::printf("gradcheck: %s\n", ok ? "max rel err <= 1e-6" : "FAILED");
    return ok ? 0 : kExitRuntime;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional / Masked Conditional Neural Network toolkit"};
    app.require_subcommand(1);

    // mask
    auto* mask = app.add_subcommand("mask", "generate a binary weight mask and print its stats");
    int m_features = 0, m_nodes = 0, m_bw = 0, m_ov = 0;
    std::string m_out, m_format = "csv";
    mask->add_option("--features", m_features, "feature vector length l")->required();
    mask->add_option("--nodes", m_nodes, "hidden layer width e")->required();
    mask->add_option("--bandwidth", m_bw, "consecutive ones per band")->required();
    mask->add_option("--overlap", m_ov, "signed overlap between successive bands")->required();
    mask->add_option("--out", m_out, "output path")->required();
    mask->add_option("--format", m_format, "csv or pgm")->check(CLI::IsMember({"csv", "pgm"}));

    // train
    auto* tr = app.add_subcommand("train", "train a model on a fold split");
    std::string t_manifest, t_config, t_out;
    int t_test = 0, t_val = 0;
    uint64_t t_seed = 0;
    bool t_has_seed = false;
    tr->add_option("--manifest", t_manifest, "dataset manifest JSON")->required();
    tr->add_option("--config", t_config, "model/train config JSON")->required();
    tr->add_option("--test-fold", t_test, "held-out test fold")->required();
    tr->add_option("--val-fold", t_val, "held-out validation fold")->required();
    tr->add_option("--out", t_out, "output model path")->required();
    tr->add_option("--seed", t_seed, "override both model and train seeds")
        ->each([&](const std::string&) { t_has_seed = true; });

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained model on a fold");
    std::string e_manifest, e_model, e_json, e_pred;
    int e_fold = 0, e_hop = 0, e_threads = default_threads();
    ev->add_option("--manifest", e_manifest)->required();
    ev->add_option("--model", e_model)->required();
    ev->add_option("--test-fold", e_fold, "fold to evaluate (0 = all files)");
    ev->add_option("--hop", e_hop, "segment hop (default q)");
    ev->add_option("--json-out", e_json, "write the report as JSON");
    ev->add_option("--pred-csv", e_pred, "write per-file predictions as CSV");
    ev->add_option("--threads", e_threads, "evaluation workers (MCLNN_THREADS fallback)");

    // predict
    auto* pr = app.add_subcommand("predict", "classify a single feature file");
    std::string p_model, p_file;
    int p_hop = 0;
    pr->add_option("--model", p_model)->required();
    pr->add_option("--file", p_file)->required();
    pr->add_option("--hop", p_hop, "segment hop (default q)");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer type");
    uint64_t g_seed = 12345;
    gc->add_option("--seed", g_seed);

    // synth
    auto* sy = app.add_subcommand("synth", "generate the synthetic order-encoded dataset");
    int s_classes = 4, s_files = 200, s_features = 20, s_frames = 50, s_folds = 5;
    double s_noise = 0.3;
    uint64_t s_seed = 7;
    std::string s_out;
    sy->add_option("--classes", s_classes);
    sy->add_option("--files-per-class", s_files);
    sy->add_option("--features", s_features);
    sy->add_option("--frames", s_frames);
    sy->add_option("--folds", s_folds);
    sy->add_option("--noise", s_noise);
    sy->add_option("--seed", s_seed);
    sy->add_option("--out", s_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (mask->parsed()) return cmd_mask(m_features, m_nodes, m_bw, m_ov, m_out, m_format);
        if (tr->parsed()) return cmd_train(t_manifest, t_config, t_test, t_val, t_out, t_seed, t_has_seed);
        if (ev->parsed()) return cmd_eval(e_manifest, e_model, e_fold, e_hop, e_json, e_pred, e_threads);
        if (pr->parsed()) return cmd_predict(p_model, p_file, p_hop);
        if (gc->parsed()) return cmd_gradcheck(g_seed);
        if (sy->parsed()) return cmd_synth(s_classes, s_files, s_features, s_frames, s_folds,
                                           s_noise, s_seed, s_out);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
