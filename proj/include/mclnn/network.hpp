#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mclnn/layers.hpp"
#include "mclnn/mask.hpp"
#include "mclnn/matrix.hpp"
#include "mclnn/standardize.hpp"

namespace mclnn {

// Frame accounting across a stack of conditional layers: each layer of
// order n consumes 2n frames, so a segment of width q = 2*sum(n_b) + k
// leaves exactly k frames at the pool.
struct SegmentGeometry {
    std::vector<int> orders;
    int extra_frames = 1; // k

    int layer_count() const { return static_cast<int>(orders.size()); }

    int width() const { // q
        int q = extra_frames;
        for (int n : orders) q += 2 * n;
        return q;
    }

    void validate() const {
        if (orders.empty()) throw std::invalid_argument("SegmentGeometry: need at least one layer");
        for (int n : orders)
            if (n < 1) throw std::invalid_argument("SegmentGeometry: every order must be >= 1");
        if (extra_frames < 1)
            throw std::invalid_argument("SegmentGeometry: extra frames k must be >= 1");
    }
};

inline int segment_width(const std::vector<int>& orders, int k) {
    SegmentGeometry g{orders, k};
    g.validate();
    return g.width();
}

struct CondLayerConfig {
    int width = 0; // e
    int order = 1; // n
    std::optional<MaskSpec> mask; // features/nodes filled in at build time
};

struct ModelConfig {
    int input_features = 0;          // l as seen by the model (after any delta concat)
    bool use_delta = true;           // pipeline doubles raw features via delta concat
    std::vector<CondLayerConfig> conditional;
    int extra_frames = 1;            // k
    PoolMode pool = PoolMode::Mean;
    std::vector<int> dense_widths{100, 100};
    std::vector<double> dropout_rates; // per dense hidden layer, defaults to 0.5 each
    int classes = 2;
    uint64_t seed = 1;

    void validate() const {
        if (input_features < 1) throw std::invalid_argument("ModelConfig: input_features must be >= 1");
        if (conditional.empty()) throw std::invalid_argument("ModelConfig: need at least one conditional layer");
        if (classes < 2) throw std::invalid_argument("ModelConfig: need at least 2 classes");
        if (extra_frames < 1) throw std::invalid_argument("ModelConfig: extra_frames must be >= 1");
        if (!dropout_rates.empty() && dropout_rates.size() != dense_widths.size())
            throw std::invalid_argument("ModelConfig: dropout_rates must match dense_widths");
        for (double r : dropout_rates)
            if (r < 0.0 || r >= 1.0) throw std::invalid_argument("ModelConfig: dropout rate must be in [0,1)");
    }

    SegmentGeometry geometry() const {
        SegmentGeometry g;
        for (const CondLayerConfig& c : conditional) g.orders.push_back(c.order);
        g.extra_frames = extra_frames;
        return g;
    }

    std::vector<double> effective_dropout() const {
        if (!dropout_rates.empty()) return dropout_rates;
        return std::vector<double>(dense_widths.size(), 0.5);
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"input_features", c.input_features},
                       {"use_delta", c.use_delta},
                       {"extra_frames", c.extra_frames},
                       {"pool", pool_mode_name(c.pool)},
                       {"dense_widths", c.dense_widths},
                       {"dropout_rates", c.effective_dropout()},
                       {"classes", c.classes},
                       {"seed", c.seed}};
    j["conditional"] = nlohmann::json::array();
    for (const CondLayerConfig& l : c.conditional) {
        nlohmann::json lj{{"width", l.width}, {"order", l.order}};
        if (l.mask)
            lj["mask"] = {{"bandwidth", l.mask->bandwidth}, {"overlap", l.mask->overlap}};
        j["conditional"].push_back(lj);
    }
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    static const char* known[] = {"input_features", "use_delta", "extra_frames", "pool",
                                  "dense_widths",   "dropout_rates", "classes", "seed",
                                  "conditional"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || (it.key() == k);
        if (!ok) throw std::invalid_argument("ModelConfig: unknown key '" + it.key() + "'");
    }
    c.input_features = j.at("input_features").get<int>();
    c.use_delta = j.value("use_delta", true);
    c.extra_frames = j.at("extra_frames").get<int>();
    c.pool = pool_mode_from_name(j.value("pool", "mean"));
    c.dense_widths = j.value("dense_widths", std::vector<int>{100, 100});
    c.dropout_rates = j.value("dropout_rates", std::vector<double>{});
    c.classes = j.at("classes").get<int>();
    c.seed = j.value("seed", static_cast<uint64_t>(1));
    c.conditional.clear();
    for (const auto& lj : j.at("conditional")) {
        CondLayerConfig l;
        l.width = lj.at("width").get<int>();
        l.order = lj.value("order", 1);
        if (lj.contains("mask")) {
            MaskSpec m;
            m.bandwidth = lj["mask"].at("bandwidth").get<int>();
            m.overlap = lj["mask"].at("overlap").get<int>();
            l.mask = m;
        }
        c.conditional.push_back(l);
    }
}

struct Model {
    ModelConfig config;
    std::vector<ClnnLayer> cond;
    std::vector<DenseLayer> dense; // hidden layers + final classifier (identity transfer)
    SegmentGeometry geometry;
    std::optional<Standardizer> standardizer;

    int pool_output_size() const {
        int e = cond.back().width;
        return config.pool == PoolMode::Flatten ? e * config.extra_frames : e;
    }
};

namespace detail {

inline void init_matrix_glorot(Matrix& m, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (size_t i = 0; i < m.size(); ++i)
        m.at_linear(i) = rng.uniform(-limit, limit);
}

} // namespace detail

// Build a model with freshly initialized parameters. Conditional weights use
// uniform +-sqrt(6/(fan_in+fan_out)) with fan_in = l*(2n+1) since the whole
// window feeds each hidden node; PReLU slopes start at 0.25.
inline Model build_model(const ModelConfig& config) {
    config.validate();
    Model model;
    model.config = config;
    model.geometry = config.geometry();
    model.geometry.validate();

    Rng rng(config.seed);
    int in = config.input_features;
    for (const CondLayerConfig& lc : config.conditional) {
        ClnnLayer layer;
        layer.order = lc.order;
        layer.in_features = in;
        layer.width = lc.width;
        layer.transfer = Transfer::Prelu;
        layer.bias.assign(lc.width, 0.0);
        layer.slope.assign(lc.width, 0.25);
        const int d = layer.window_width();
        const int fan_in = in * d;
        layer.weights.assign(d, Matrix(in, lc.width));
        for (Matrix& w : layer.weights)
            detail::init_matrix_glorot(w, fan_in, lc.width, rng);
        if (lc.mask) {
            MaskSpec spec = *lc.mask;
            spec.features = in;
            spec.nodes = lc.width;
            layer.mask = generate_mask(spec);
            layer.apply_mask();
        }
        layer.validate();
        model.cond.push_back(std::move(layer));
        in = lc.width;
    }

    int dense_in = model.pool_output_size();
    for (int w : config.dense_widths) {
        DenseLayer d;
        d.in_features = dense_in;
        d.width = w;
        d.transfer = Transfer::Prelu;
        d.weights = Matrix(dense_in, w);
        detail::init_matrix_glorot(d.weights, dense_in, w, rng);
        d.bias.assign(w, 0.0);
        d.slope.assign(w, 0.25);
        model.dense.push_back(std::move(d));
        dense_in = w;
    }
    DenseLayer out;
    out.in_features = dense_in;
    out.width = config.classes;
    out.transfer = Transfer::Identity;
    out.weights = Matrix(dense_in, config.classes);
    detail::init_matrix_glorot(out.weights, dense_in, config.classes, rng);
    out.bias.assign(config.classes, 0.0);
    model.dense.push_back(std::move(out));
    return model;
}

struct ModelCache {
    Matrix segment;
    std::vector<ClnnForward> cond;
    PoolForward pool;
    int pool_rows = 0, pool_cols = 0;
    std::vector<std::vector<double>> dense_inputs;
    std::vector<DenseForward> dense;
    std::vector<DropoutResult> drop; // per hidden dense layer
    std::vector<double> probs;
};

inline ModelCache model_forward_cached(const Model& model, const Matrix& segment, bool training,
                                       Rng& rng) {
    const int q = model.geometry.width();
    if (segment.cols() != q)
        throw std::invalid_argument("model_forward: segment width " + std::to_string(segment.cols()) +
                                    " does not match expected q=" + std::to_string(q));
    if (segment.rows() != model.config.input_features)
        throw std::invalid_argument("model_forward: segment has " + std::to_string(segment.rows()) +
                                    " features, expected " + std::to_string(model.config.input_features));

    ModelCache cache;
    cache.segment = segment;
    const Matrix* cur = &cache.segment;
    for (const ClnnLayer& layer : model.cond) {
        cache.cond.push_back(clnn_layer_forward_cached(*cur, layer));
        cur = &cache.cond.back().output;
    }
    cache.pool_rows = cur->rows();
    cache.pool_cols = cur->cols();
    cache.pool = temporal_pool_cached(*cur, model.config.pool);

    const std::vector<double> rates = model.config.effective_dropout();
    std::vector<double> x = cache.pool.output;
    for (size_t li = 0; li < model.dense.size(); ++li) {
        cache.dense_inputs.push_back(x);
        cache.dense.push_back(dense_forward_cached(x, model.dense[li]));
        x = cache.dense.back().output;
        if (li + 1 < model.dense.size()) { // dropout on hidden dense outputs only
            cache.drop.push_back(dropout(x, rates[li], rng, training));
            x = cache.drop.back().output;
        }
    }
    cache.probs = softmax(x);
    return cache;
}

inline std::vector<double> model_forward(const Model& model, const Matrix& segment, bool training,
                                         Rng& rng) {
    return model_forward_cached(model, segment, training, rng).probs;
}

// Eval-mode forward; dropout is identity so no rng is consumed.
inline std::vector<double> model_predict(const Model& model, const Matrix& segment) {
    Rng dummy(0);
    return model_forward(model, segment, false, dummy);
}

struct ModelGrads {
    std::vector<ClnnGrads> cond;
    std::vector<DenseGrads> dense;
};

// Gradients of the cross-entropy loss -log p[target] for one segment,
// starting from d(loss)/d(logits) = probs - one_hot(target).
inline ModelGrads model_backward(const Model& model, const ModelCache& cache, int target) {
    if (target < 0 || target >= model.config.classes)
        throw std::invalid_argument("model_backward: target class out of range");

    ModelGrads grads;
    grads.dense.resize(model.dense.size());

    std::vector<double> g = cache.probs;
    g[target] -= 1.0;

    for (int li = static_cast<int>(model.dense.size()) - 1; li >= 0; --li) {
        if (li + 1 < static_cast<int>(model.dense.size())) {
            const DropoutResult& dr = cache.drop[li];
            for (size_t i = 0; i < g.size(); ++i)
                g[i] *= dr.scale[i];
        }
        grads.dense[li] = dense_backward(cache.dense_inputs[li], model.dense[li], cache.dense[li], g);
        g = grads.dense[li].input;
    }

    Matrix gblock = temporal_pool_backward(cache.pool, model.config.pool, cache.pool_rows,
                                           cache.pool_cols, g);

    grads.cond.resize(model.cond.size());
    for (int li = static_cast<int>(model.cond.size()) - 1; li >= 0; --li) {
        const Matrix& input = li == 0 ? cache.segment : cache.cond[li - 1].output;
        grads.cond[li] = clnn_layer_backward(input, model.cond[li], cache.cond[li].preact, gblock);
        gblock = grads.cond[li].input;
    }
    return grads;
}

// Flat views over all trainable parameters, in a fixed canonical order.
// Conditional weight matrices carry their mask so the optimizer can re-zero
// masked positions after each step.
struct ParamView {
    double* data = nullptr;
    size_t size = 0;
    const Matrix* mask = nullptr;
};

inline std::vector<ParamView> collect_params(Model& model) {
    std::vector<ParamView> out;
    for (ClnnLayer& l : model.cond) {
        const Matrix* mask = l.mask ? &l.mask->matrix : nullptr;
        for (Matrix& w : l.weights)
            out.push_back({w.data(), w.size(), mask});
        out.push_back({l.bias.data(), l.bias.size(), nullptr});
        if (l.transfer == Transfer::Prelu)
            out.push_back({l.slope.data(), l.slope.size(), nullptr});
    }
    for (DenseLayer& d : model.dense) {
        out.push_back({d.weights.data(), d.weights.size(), nullptr});
        out.push_back({d.bias.data(), d.bias.size(), nullptr});
        if (d.transfer == Transfer::Prelu)
            out.push_back({d.slope.data(), d.slope.size(), nullptr});
    }
    return out;
}

// Gradients flattened into the same order as collect_params.
inline std::vector<const double*> collect_grads(const Model& model, const ModelGrads& grads) {
    std::vector<const double*> out;
    for (size_t li = 0; li < model.cond.size(); ++li) {
        for (const Matrix& w : grads.cond[li].weights)
            out.push_back(w.data());
        out.push_back(grads.cond[li].bias.data());
        if (model.cond[li].transfer == Transfer::Prelu)
            out.push_back(grads.cond[li].slope.data());
    }
    for (size_t li = 0; li < model.dense.size(); ++li) {
        out.push_back(grads.dense[li].weights.data());
        out.push_back(grads.dense[li].bias.data());
        if (model.dense[li].transfer == Transfer::Prelu)
            out.push_back(grads.dense[li].slope.data());
    }
    return out;
}

// --- model file format ---------------------------------------------------
// magic "MCLNN01\n", u32 config-JSON length, config JSON, then every
// parameter tensor in collect_params order as (u64 count, raw doubles),
// then an optional standardizer block. Little-endian throughout.

namespace detail {

constexpr char kModelMagic[8] = {'M', 'C', 'L', 'N', 'N', '0', '1', '\n'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("model file truncated");
    return v;
}

} // namespace detail

inline void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(detail::kModelMagic, sizeof(detail::kModelMagic));

    nlohmann::json cj = model.config;
    std::string config = cj.dump();
    detail::write_pod(out, static_cast<uint32_t>(config.size()));
    out.write(config.data(), static_cast<std::streamsize>(config.size()));

    Model& m = const_cast<Model&>(model);
    for (const ParamView& p : collect_params(m)) {
        detail::write_pod(out, static_cast<uint64_t>(p.size));
        out.write(reinterpret_cast<const char*>(p.data),
                  static_cast<std::streamsize>(p.size * sizeof(double)));
    }

    detail::write_pod(out, static_cast<uint8_t>(model.standardizer ? 1 : 0));
    if (model.standardizer) {
        const Standardizer& s = *model.standardizer;
        detail::write_pod(out, static_cast<uint64_t>(s.mean.size()));
        out.write(reinterpret_cast<const char*>(s.mean.data()),
                  static_cast<std::streamsize>(s.mean.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(s.stddev.data()),
                  static_cast<std::streamsize>(s.stddev.size() * sizeof(double)));
        detail::write_pod(out, s.epsilon);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kModelMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not an MCLNN01 model file: " + path);

    uint32_t clen = detail::read_pod<uint32_t>(in);
    std::string config(clen, '\0');
    in.read(config.data(), clen);
    if (!in) throw std::runtime_error("model file truncated: " + path);

    ModelConfig cfg;
    try {
        from_json(nlohmann::json::parse(config), cfg);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("bad model config block: ") + e.what());
    }

    Model model = build_model(cfg);
    for (ParamView& p : collect_params(model)) {
        uint64_t n = detail::read_pod<uint64_t>(in);
        if (n != p.size)
            throw std::runtime_error("model file tensor size mismatch (file corrupt or version skew)");
        in.read(reinterpret_cast<char*>(p.data), static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw std::runtime_error("model file truncated: " + path);
    }

    uint8_t has_std = detail::read_pod<uint8_t>(in);
    if (has_std) {
        Standardizer s;
        uint64_t n = detail::read_pod<uint64_t>(in);
        s.mean.resize(n);
        s.stddev.resize(n);
        in.read(reinterpret_cast<char*>(s.mean.data()), static_cast<std::streamsize>(n * sizeof(double)));
        in.read(reinterpret_cast<char*>(s.stddev.data()), static_cast<std::streamsize>(n * sizeof(double)));
        s.epsilon = detail::read_pod<double>(in);
        if (!in) throw std::runtime_error("model file truncated: " + path);
        model.standardizer = std::move(s);
    }
    return model;
}

} // namespace mclnn
