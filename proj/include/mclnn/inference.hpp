#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mclnn/data.hpp"
#include "mclnn/network.hpp"

namespace mclnn {

struct FilePrediction {
    std::vector<std::vector<double>> segment_probs;
    std::vector<double> voted;
    int predicted = 0;
};

// Probability voting: mean of the segment softmax vectors, then argmax.
// Exact ties resolve to the lowest class index.
inline FilePrediction vote(const std::vector<std::vector<double>>& segment_probs) {
    if (segment_probs.empty())
        throw std::invalid_argument("vote: file produced no segments");
    const size_t classes = segment_probs.front().size();
    FilePrediction p;
    p.segment_probs = segment_probs;
    p.voted.assign(classes, 0.0);
    for (const std::vector<double>& sp : segment_probs) {
        if (sp.size() != classes)
            throw std::invalid_argument("vote: inconsistent class counts across segments");
        for (size_t c = 0; c < classes; ++c)
            p.voted[c] += sp[c];
    }
    for (double& v : p.voted) v /= segment_probs.size();
    p.predicted = 0;
    for (size_t c = 1; c < classes; ++c)
        if (p.voted[c] > p.voted[p.predicted]) p.predicted = static_cast<int>(c);
    return p;
}

// Alternative: majority over per-segment argmax labels, ties to lowest index.
inline int majority_vote(const std::vector<std::vector<double>>& segment_probs) {
    if (segment_probs.empty())
        throw std::invalid_argument("vote: file produced no segments");
    std::vector<int> counts(segment_probs.front().size(), 0);
    for (const std::vector<double>& sp : segment_probs) {
        int arg = 0;
        for (size_t c = 1; c < sp.size(); ++c)
            if (sp[c] > sp[arg]) arg = static_cast<int>(c);
        ++counts[arg];
    }
    int best = 0;
    for (size_t c = 1; c < counts.size(); ++c)
        if (counts[c] > counts[best]) best = static_cast<int>(c);
    return best;
}

// A manifest entry loaded and preprocessed into the feature-major block the
// model consumes (delta concat applied when the model expects it, but not
// yet standardized).
struct LoadedFile {
    ManifestEntry entry;
    Matrix block; // features x frames
};

inline LoadedFile prepare_file(const DatasetManifest& manifest, const ManifestEntry& entry,
                               bool use_delta) {
    FeatureFile f = load_feature_csv(manifest.resolve(entry.path));
    Matrix frames = use_delta ? concat_delta(f.frames) : f.frames;
    return LoadedFile{entry, to_frame_block(frames)};
}

struct EvalReport {
    std::vector<std::string> class_names;
    std::vector<std::vector<long>> confusion; // [true][predicted]
    std::vector<double> precision, recall;
    double accuracy = 0.0;
    long total_files = 0;
    long skipped_files = 0; // shorter than one segment
    std::vector<std::pair<std::string, int>> predictions; // path -> predicted class
};

inline void finalize_report(EvalReport& r) {
    const size_t c = r.confusion.size();
    long correct = 0;
    std::vector<long> row_sum(c, 0), col_sum(c, 0);
    for (size_t i = 0; i < c; ++i)
        for (size_t j = 0; j < c; ++j) {
            row_sum[i] += r.confusion[i][j];
            col_sum[j] += r.confusion[i][j];
            if (i == j) correct += r.confusion[i][j];
        }
    r.precision.assign(c, 0.0);
    r.recall.assign(c, 0.0);
    for (size_t i = 0; i < c; ++i) {
        r.recall[i] = row_sum[i] ? static_cast<double>(r.confusion[i][i]) / row_sum[i] : 0.0;
        r.precision[i] = col_sum[i] ? static_cast<double>(r.confusion[i][i]) / col_sum[i] : 0.0;
    }
    r.accuracy = r.total_files ? static_cast<double>(correct) / r.total_files : 0.0;
}

// Classify each file by voting over its segments. Files shorter than q are
// skipped and counted. Accuracy is over files, not segments. Files fan out
// across `threads` workers with the model shared read-only; results land in
// per-file slots so the report is identical regardless of thread count.
inline EvalReport evaluate(const Model& model, const DatasetManifest& manifest,
                           const std::vector<ManifestEntry>& files, int eval_hop,
                           int threads = 1) {
    if (files.empty()) throw std::invalid_argument("evaluate: empty file list");
    const int q = model.geometry.width();
    const int classes = model.config.classes;

    std::vector<int> predicted(files.size(), -1); // -1 = skipped
    auto classify_file = [&](size_t i) {
        LoadedFile lf = prepare_file(manifest, files[i], model.config.use_delta);
        Matrix block = model.standardizer ? standardize_apply(*model.standardizer, lf.block)
                                          : lf.block;
        std::vector<SegmentRef> segs = extract_segments(block, q, eval_hop);
        if (segs.empty()) return;
        std::vector<std::vector<double>> probs;
        probs.reserve(segs.size());
        for (const SegmentRef& s : segs)
            probs.push_back(model_predict(model, s.block));
        predicted[i] = vote(probs).predicted;
    };

    threads = std::max(1, std::min<int>(threads, static_cast<int>(files.size())));
    if (threads == 1) {
        for (size_t i = 0; i < files.size(); ++i)
            classify_file(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < files.size(); i = next.fetch_add(1))
                    classify_file(i);
            });
        for (std::thread& t : pool) t.join();
    }

    EvalReport r;
    r.class_names = manifest.classes;
    r.confusion.assign(classes, std::vector<long>(classes, 0));
    for (size_t i = 0; i < files.size(); ++i) {
        if (predicted[i] < 0) {
            ++r.skipped_files;
            continue;
        }
        r.confusion[files[i].label][predicted[i]] += 1;
        r.predictions.emplace_back(files[i].path, predicted[i]);
        ++r.total_files;
    }
    if (r.total_files == 0)
        throw std::runtime_error("evaluate: every file was shorter than one segment (q=" +
                                 std::to_string(q) + ")");
    finalize_report(r);
    return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["accuracy"] = r.accuracy;
    j["total_files"] = r.total_files;
    j["skipped_files"] = r.skipped_files;
    j["classes"] = r.class_names;
    j["confusion"] = r.confusion;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    return j;
}

inline std::string report_to_text(const EvalReport& r) {
    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "accuracy: %.4f (%ld files, %ld skipped)\n", r.accuracy,
                  r.total_files, r.skipped_files);
    out << buf;
    size_t w = 10; // wide enough for the "precision" row label
    for (const std::string& n : r.class_names) w = std::max(w, n.size() + 2);
    out << std::string(w, ' ');
    for (const std::string& n : r.class_names)
        out << n << std::string(w - n.size(), ' ');
    out << "recall\n";
    for (size_t i = 0; i < r.confusion.size(); ++i) {
        out << r.class_names[i] << std::string(w - r.class_names[i].size(), ' ');
        for (size_t j = 0; j < r.confusion[i].size(); ++j) {
            std::string cell = std::to_string(r.confusion[i][j]);
            out << cell << std::string(w - cell.size(), ' ');
        }
        std::snprintf(buf, sizeof(buf), "%.3f\n", r.recall[i]);
        out << buf;
    }
    out << "precision";
    out << std::string(w - 9, ' ');
    for (size_t j = 0; j < r.precision.size(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.3f", r.precision[j]);
        std::string cell = buf;
        out << cell << std::string(w - cell.size(), ' ');
    }
    out << '\n';
    return out.str();
}

inline void write_predictions_csv(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "path,predicted_class\n";
    for (const auto& [p, c] : r.predictions)
        out << p << ',' << r.class_names[c] << '\n';
}

} // namespace mclnn
