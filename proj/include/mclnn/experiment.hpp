#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mclnn/inference.hpp"
#include "mclnn/optim.hpp"

namespace mclnn {

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val_accuracy = 0.0;
    int best_epoch = 0;
    long skipped_train_files = 0;
    long total_train_segments = 0;
};

inline void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "epoch,train_loss,val_accuracy\n";
    char buf[128];
    for (const EpochStats& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_accuracy);
        out << buf;
    }
}

namespace detail {

struct TrainSegment {
    Matrix block;
    int label;
};

} // namespace detail

// Mini-batch ADAM over shuffled training segments. The standardizer is fit
// on the training split only and stored in the model so evaluation applies
// the same transform. The best-validation parameters (file-level voted
// accuracy) are restored at the end and checkpointed if a path is set.
inline TrainResult train(Model& model, const DatasetManifest& manifest, const DatasetSplits& splits,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (splits.train.empty()) throw std::invalid_argument("train: empty training split");
    if (splits.validation.empty()) throw std::invalid_argument("train: empty validation split");

    const int q = model.geometry.width();
    const int train_hop = cfg.effective_train_hop(q);
    const int eval_hop = cfg.effective_eval_hop(q);

    TrainResult result;

    // load, fit standardizer on train frames, slice segments
    std::vector<Matrix> train_blocks;
    std::vector<int> train_labels;
    for (const ManifestEntry& e : splits.train) {
        LoadedFile lf = prepare_file(manifest, e, model.config.use_delta);
        train_blocks.push_back(std::move(lf.block));
        train_labels.push_back(e.label);
    }
    model.standardizer = standardize_fit(train_blocks);

    std::vector<detail::TrainSegment> segments;
    for (size_t f = 0; f < train_blocks.size(); ++f) {
        Matrix std_block = standardize_apply(*model.standardizer, train_blocks[f]);
        std::vector<SegmentRef> segs = extract_segments(std_block, q, train_hop);
        if (segs.empty()) ++result.skipped_train_files;
        for (SegmentRef& s : segs)
            segments.push_back({std::move(s.block), train_labels[f]});
    }
    train_blocks.clear();
    if (segments.empty())
        throw std::runtime_error("train: no training file is long enough for q=" + std::to_string(q));
    result.total_train_segments = static_cast<long>(segments.size());

    std::vector<ParamView> params = collect_params(model);
    AdamState adam = AdamState::init(params, cfg.lr);
    Rng rng(cfg.seed);

    std::vector<size_t> order(segments.size());
    std::iota(order.begin(), order.end(), size_t{0});

    std::vector<std::vector<double>> best_params;
    double best_acc = -1.0;
    int best_epoch = 0;
    int since_best = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            const double scale = 1.0 / static_cast<double>(end - start);

            std::vector<std::vector<double>> batch_grads;
            for (const ParamView& p : params)
                batch_grads.emplace_back(p.size, 0.0);

            for (size_t i = start; i < end; ++i) {
                const detail::TrainSegment& seg = segments[order[i]];
                ModelCache cache = model_forward_cached(model, seg.block, true, rng);
                epoch_loss += cross_entropy(cache.probs, seg.label);
                ModelGrads g = model_backward(model, cache, seg.label);
                std::vector<const double*> flat = collect_grads(model, g);
                for (size_t p = 0; p < flat.size(); ++p)
                    for (size_t j = 0; j < params[p].size; ++j)
                        batch_grads[p][j] += flat[p][j] * scale;
            }

            std::vector<const double*> gptrs;
            for (const std::vector<double>& g : batch_grads)
                gptrs.push_back(g.data());
            adam_step(params, gptrs, adam);
        }

        EvalReport val = evaluate(model, manifest, splits.validation, eval_hop);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(segments.size());
        stats.val_accuracy = val.accuracy;
        result.history.push_back(stats);

        if (val.accuracy > best_acc) {
            best_acc = val.accuracy;
            best_epoch = epoch;
            since_best = 0;
            best_params.clear();
            for (const ParamView& p : params)
                best_params.emplace_back(p.data, p.data + p.size);
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    if (!best_params.empty())
        for (size_t p = 0; p < params.size(); ++p)
            std::copy(best_params[p].begin(), best_params[p].end(), params[p].data);

    result.best_val_accuracy = best_acc;
    result.best_epoch = best_epoch;
    if (!cfg.checkpoint_path.empty())
        save_model(model, cfg.checkpoint_path);
    return result;
}

struct CrossValidationResult {
    std::vector<double> fold_accuracies;
    double mean = 0.0;
    double stddev = 0.0;
};

// Leave-one-fold-out protocol: each fold takes a turn as the test set, the
// next fold (cyclically) is held out for validation, and a fresh model is
// trained on the rest with a deterministically derived seed.
inline CrossValidationResult cross_validate(const ModelConfig& model_cfg,
                                            const DatasetManifest& manifest,
                                            const TrainConfig& train_cfg) {
    if (manifest.folds < 3)
        throw std::invalid_argument("cross_validate: need at least 3 folds (train/val/test)");
    CrossValidationResult r;
    Rng base(train_cfg.seed);
    for (int test_fold = 1; test_fold <= manifest.folds; ++test_fold) {
        const int val_fold = test_fold % manifest.folds + 1;
        DatasetSplits splits = build_splits(manifest, test_fold, val_fold);

        ModelConfig mc = model_cfg;
        mc.seed = base.split(static_cast<uint64_t>(test_fold)).next_u64();
        TrainConfig tc = train_cfg;
        tc.seed = base.split(static_cast<uint64_t>(test_fold) + 1000).next_u64();
        tc.checkpoint_path.clear();

        Model model = build_model(mc);
        train(model, manifest, splits, tc);
        EvalReport rep = evaluate(model, manifest, splits.test,
                                  tc.effective_eval_hop(model.geometry.width()));
        r.fold_accuracies.push_back(rep.accuracy);
    }
    for (double a : r.fold_accuracies) r.mean += a;
    r.mean /= static_cast<double>(r.fold_accuracies.size());
    for (double a : r.fold_accuracies) r.stddev += (a - r.mean) * (a - r.mean);
    r.stddev = std::sqrt(r.stddev / static_cast<double>(r.fold_accuracies.size()));
    return r;
}

} // namespace mclnn
