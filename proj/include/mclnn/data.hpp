#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mclnn/matrix.hpp"

namespace mclnn {

// A spectrogram-like feature file: one row per time frame, one column per
// feature. The library ingests these precomputed (e.g. 60-bin log-mel);
// audio decoding and filterbank computation are out of scope.
struct FeatureFile {
    std::string path;
    Matrix frames; // frames x features

    int frame_count() const { return frames.rows(); }
    int feature_count() const { return frames.cols(); }
};

inline FeatureFile load_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open feature file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        size_t pos = 0;
        while (pos <= line.size()) {
            size_t comma = line.find(',', pos);
            std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                           : comma - pos);
            try {
                size_t used = 0;
                row.push_back(std::stod(cell, &used));
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
                    ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": non-numeric cell '" + cell + "' at line " +
                                         std::to_string(lineno));
            }
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw std::runtime_error(path + ": ragged row at line " + std::to_string(lineno) +
                                     " (expected " + std::to_string(rows.front().size()) +
                                     " columns, got " + std::to_string(row.size()) + ")");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error(path + ": empty feature file");

    FeatureFile f;
    f.path = path;
    f.frames = Matrix(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows[r].size(); ++c)
            f.frames(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    return f;
}

// 17 significant digits so a write/read round trip is value-exact.
inline void write_feature_csv(const Matrix& frames, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    char buf[64];
    for (int r = 0; r < frames.rows(); ++r) {
        for (int c = 0; c < frames.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", frames(r, c));
            if (c) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

// First-order backward difference over time, zero first row.
inline Matrix compute_delta(const Matrix& frames) {
    if (frames.rows() < 1) throw std::invalid_argument("compute_delta: need at least one frame");
    Matrix d(frames.rows(), frames.cols());
    for (int t = 1; t < frames.rows(); ++t)
        for (int c = 0; c < frames.cols(); ++c)
            d(t, c) = frames(t, c) - frames(t - 1, c);
    return d;
}

// Columns = original features followed by their deltas (l -> 2l).
inline Matrix concat_delta(const Matrix& frames) {
    Matrix d = compute_delta(frames);
    Matrix out(frames.rows(), frames.cols() * 2);
    for (int t = 0; t < frames.rows(); ++t) {
        for (int c = 0; c < frames.cols(); ++c) {
            out(t, c) = frames(t, c);
            out(t, frames.cols() + c) = d(t, c);
        }
    }
    return out;
}

// Frame-major storage transposed into the feature-major block the layers
// consume (features x frames).
inline Matrix to_frame_block(const Matrix& frames) {
    return frames.transposed();
}

struct SegmentRef {
    int start = 0;
    Matrix block; // features x q
};

// Slices of width q starting at 0, hop, 2*hop, ... while they fit. A block
// shorter than q yields no segments (callers flag and count such files).
inline std::vector<SegmentRef> extract_segments(const Matrix& block, int q, int hop) {
    if (q < 1) throw std::invalid_argument("extract_segments: q must be >= 1");
    if (hop < 1) throw std::invalid_argument("extract_segments: hop must be >= 1");
    std::vector<SegmentRef> out;
    for (int start = 0; start + q <= block.cols(); start += hop) {
        SegmentRef s;
        s.start = start;
        s.block = Matrix(block.rows(), q);
        for (int t = 0; t < q; ++t)
            for (int i = 0; i < block.rows(); ++i)
                s.block(i, t) = block(i, start + t);
        out.push_back(std::move(s));
    }
    return out;
}

struct ManifestEntry {
    std::string path;
    int label = 0; // index into classes
    int fold = 1;  // 1-based
};

struct DatasetManifest {
    std::vector<std::string> classes;
    int folds = 0;
    std::vector<ManifestEntry> files;
    std::string base_dir; // directory of the manifest file; relative paths resolve against it

    std::string resolve(const std::string& p) const {
        std::filesystem::path fp(p);
        if (fp.is_absolute() || base_dir.empty()) return p;
        return (std::filesystem::path(base_dir) / fp).string();
    }

    void validate() const {
        if (classes.size() < 2) throw std::invalid_argument("manifest: need at least 2 classes");
        if (folds < 1) throw std::invalid_argument("manifest: folds must be >= 1");
        std::set<std::string> seen;
        for (const ManifestEntry& e : files) {
            if (e.label < 0 || e.label >= static_cast<int>(classes.size()))
                throw std::invalid_argument("manifest: label out of range for " + e.path);
            if (e.fold < 1 || e.fold > folds)
                throw std::invalid_argument("manifest: fold out of range for " + e.path);
            if (!seen.insert(e.path).second)
                throw std::invalid_argument("manifest: duplicate path " + e.path);
        }
    }
};

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": bad JSON: " + e.what());
    }
    DatasetManifest m;
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.folds = j.at("folds").get<int>();
    for (const auto& fj : j.at("files")) {
        ManifestEntry e;
        e.path = fj.at("path").get<std::string>();
        e.fold = fj.at("fold").get<int>();
        const auto& lab = fj.at("label");
        if (lab.is_number_integer()) {
            e.label = lab.get<int>();
        } else {
            std::string name = lab.get<std::string>();
            auto it = std::find(m.classes.begin(), m.classes.end(), name);
            if (it == m.classes.end())
                throw std::runtime_error(path + ": unknown class label '" + name + "'");
            e.label = static_cast<int>(it - m.classes.begin());
        }
        m.files.push_back(std::move(e));
    }
    m.base_dir = std::filesystem::path(path).parent_path().string();
    m.validate();
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["classes"] = m.classes;
    j["folds"] = m.folds;
    j["files"] = nlohmann::json::array();
    for (const ManifestEntry& e : m.files)
        j["files"].push_back({{"path", e.path}, {"label", e.label}, {"fold", e.fold}});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

struct DatasetSplits {
    std::vector<ManifestEntry> train, validation, test;
};

// test fold and validation fold held out, everything else trains;
// the three lists partition the manifest exactly.
inline DatasetSplits build_splits(const DatasetManifest& m, int test_fold, int validation_fold) {
    if (test_fold == validation_fold)
        throw std::invalid_argument("build_splits: test and validation folds must differ");
    if (test_fold < 1 || test_fold > m.folds || validation_fold < 1 || validation_fold > m.folds)
        throw std::invalid_argument("build_splits: fold out of range");
    DatasetSplits s;
    for (const ManifestEntry& e : m.files) {
        if (e.fold == test_fold) s.test.push_back(e);
        else if (e.fold == validation_fold) s.validation.push_back(e);
        else s.train.push_back(e);
    }
    return s;
}

// Synthetic order-encoded dataset: every class emits the same two frame
// prototypes with identical marginal frequency, differing only in their
// cyclic ordering, so single-frame statistics carry no class signal but a
// temporal-context model can separate the classes. Classes are the binary
// necklaces over a period-6 motif (supports up to 4 classes); more classes
// extend the period.
struct SynthConfig {
    int classes = 4;
    int files_per_class = 200;
    int features = 20;       // l of the raw files
    int frames = 50;         // per file
    int folds = 5;
    double noise = 0.3;
    uint64_t seed = 7;
};

namespace detail {

// Distinct binary necklaces with equal counts of both symbols.
inline std::vector<std::vector<int>> synth_patterns(int classes) {
    static const std::vector<std::vector<int>> period6 = {
        {0, 0, 0, 1, 1, 1}, {0, 0, 1, 0, 1, 1}, {0, 0, 1, 1, 0, 1}, {0, 1, 0, 1, 0, 1}};
    static const std::vector<std::vector<int>> period8_extra = {
        {0, 0, 0, 0, 1, 1, 1, 1}, {0, 0, 0, 1, 0, 1, 1, 1}, {0, 0, 0, 1, 1, 0, 1, 1},
        {0, 0, 0, 1, 1, 1, 0, 1}, {0, 0, 1, 0, 0, 1, 1, 1}, {0, 0, 1, 0, 1, 0, 1, 1},
        {0, 0, 1, 0, 1, 1, 0, 1}, {0, 0, 1, 1, 0, 0, 1, 1}, {0, 0, 1, 1, 0, 1, 0, 1},
        {0, 1, 0, 1, 0, 1, 0, 1}};
    if (classes <= static_cast<int>(period6.size()))
        return {period6.begin(), period6.begin() + classes};
    if (classes <= static_cast<int>(period8_extra.size()))
        return {period8_extra.begin(), period8_extra.begin() + classes};
    throw std::invalid_argument("synth_generate: at most 10 classes supported");
}

} // namespace detail

struct SynthResult {
    DatasetManifest manifest;
    std::string manifest_path;
};

inline SynthResult synth_generate(const SynthConfig& cfg, const std::string& out_dir) {
    if (cfg.classes < 2) throw std::invalid_argument("synth_generate: need at least 2 classes");
    if (cfg.files_per_class < 1 || cfg.features < 1 || cfg.frames < 1 || cfg.folds < 1)
        throw std::invalid_argument("synth_generate: degenerate size");

    std::filesystem::create_directories(out_dir);
    const auto patterns = detail::synth_patterns(cfg.classes);

    Rng rng(cfg.seed);
    // two shared prototypes; classes differ only in ordering
    std::vector<std::vector<double>> protos(2, std::vector<double>(cfg.features));
    for (auto& p : protos)
        for (double& v : p)
            v = rng.uniform(-1.0, 1.0);

    DatasetManifest m;
    m.folds = cfg.folds;
    for (int c = 0; c < cfg.classes; ++c)
        m.classes.push_back("class" + std::to_string(c));

    for (int c = 0; c < cfg.classes; ++c) {
        const std::vector<int>& pat = patterns[c];
        const int period = static_cast<int>(pat.size());
        for (int f = 0; f < cfg.files_per_class; ++f) {
            Rng frng = rng.split(static_cast<uint64_t>(c) * 100003 + f);
            int phase = static_cast<int>(frng.bounded(static_cast<uint32_t>(period)));
            Matrix frames(cfg.frames, cfg.features);
            for (int t = 0; t < cfg.frames; ++t) {
                const std::vector<double>& p = protos[pat[(t + phase) % period]];
                for (int i = 0; i < cfg.features; ++i) {
                    // sum of two uniforms, zero-mean noise
                    double noise = cfg.noise * (frng.next_double() + frng.next_double() - 1.0);
                    frames(t, i) = p[i] + noise;
                }
            }
            std::string name = "class" + std::to_string(c) + "_file" + std::to_string(f) + ".csv";
            write_feature_csv(frames, (std::filesystem::path(out_dir) / name).string());
            ManifestEntry e;
            e.path = name;
            e.label = c;
            e.fold = (f % cfg.folds) + 1;
            m.files.push_back(std::move(e));
        }
    }

    SynthResult r;
    r.manifest_path = (std::filesystem::path(out_dir) / "manifest.json").string();
    save_manifest(m, r.manifest_path);
    m.base_dir = out_dir;
    m.validate();
    r.manifest = std::move(m);
    return r;
}

} // namespace mclnn
