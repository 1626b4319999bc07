#include <doctest.h>

#include "mclnn/layers.hpp"
#include "oracles.hpp"

using namespace mclnn;

namespace {

// Fixtures whose preactivations stay away from the PReLU kink so central
// finite differences are valid; deterministically resamples until clean.
struct LayerFixture {
    ClnnLayer layer;
    Matrix segment;
};

LayerFixture clean_clnn_fixture(int l, int e, int n, int w, uint64_t seed,
                                Transfer transfer = Transfer::Prelu) {
    for (uint64_t s = seed;; ++s) {
        Rng rng(s);
        LayerFixture f;
        f.layer = oracle::random_clnn_layer(l, e, n, rng, transfer);
        f.segment = oracle::random_matrix(l, w, rng);
        ClnnForward fwd = clnn_layer_forward_cached(f.segment, f.layer);
        bool clean = true;
        for (size_t i = 0; i < fwd.preact.size(); ++i)
            if (std::fabs(fwd.preact.at_linear(i)) < 1e-3) clean = false;
        if (clean) return f;
    }
}

} // namespace

TEST_CASE("window forward: zero weights yield the bias") {
    ClnnLayer layer;
    layer.order = 1;
    layer.in_features = 2;
    layer.width = 3;
    layer.transfer = Transfer::Identity;
    layer.bias = {0.5, -1.0, 2.0};
    layer.weights.assign(3, Matrix(2, 3, 0.0));
    Matrix window(2, 3, 7.0);
    CHECK(clnn_window_forward(window, layer) == layer.bias);
}

TEST_CASE("window forward: scalar chain sums the window") {
    // l=1, e=1, n=1, x=[1,2,3], all W_u=[1], b=0, identity -> 6
    ClnnLayer layer;
    layer.order = 1;
    layer.in_features = 1;
    layer.width = 1;
    layer.transfer = Transfer::Identity;
    layer.bias = {0.0};
    layer.weights.assign(3, Matrix(1, 1, 1.0));
    Matrix window(1, 3);
    window(0, 0) = 1.0;
    window(0, 1) = 2.0;
    window(0, 2) = 3.0;
    CHECK(clnn_window_forward(window, layer)[0] == 6.0);
}

TEST_CASE("window forward matches brute-force triple loop") {
    Rng rng(21);
    ClnnLayer layer = oracle::random_clnn_layer(4, 3, 2, rng);
    Matrix window = oracle::random_matrix(4, 5, rng);
    std::vector<double> got = clnn_window_forward(window, layer);
    std::vector<double> want =
        oracle::clnn_window_bruteforce(window, layer.weights, layer.bias, layer.slope, true);
    for (int j = 0; j < 3; ++j)
        CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("window forward rejects wrong width") {
    Rng rng(22);
    ClnnLayer layer = oracle::random_clnn_layer(4, 3, 2, rng);
    CHECK_THROWS_AS(clnn_window_forward(Matrix(4, 4), layer), std::invalid_argument);
}

TEST_CASE("layer forward consumes 2n frames") {
    Rng rng(23);
    ClnnLayer layer = oracle::random_clnn_layer(3, 2, 1, rng);

    CHECK(clnn_layer_forward(oracle::random_matrix(3, 3, rng), layer).cols() == 1);
    CHECK(clnn_layer_forward(oracle::random_matrix(3, 5, rng), layer).cols() == 3);
    CHECK_THROWS_WITH_AS(clnn_layer_forward(Matrix(3, 2), layer),
                         doctest::Contains("segment too short for order n"),
                         std::invalid_argument);
}

TEST_CASE("layer forward matches sliding brute force") {
    Rng rng(24);
    ClnnLayer layer = oracle::random_clnn_layer(5, 4, 2, rng);
    Matrix segment = oracle::random_matrix(5, 9, rng);
    Matrix got = clnn_layer_forward(segment, layer);
    Matrix want =
        oracle::clnn_layer_bruteforce(segment, layer.weights, layer.bias, layer.slope, true);
    REQUIRE(got.same_shape(want));
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got.at_linear(i) == doctest::Approx(want.at_linear(i)).epsilon(1e-12));
}

TEST_CASE("locality: changing input column c only moves outputs with t <= c <= t+2n") {
    Rng rng(25);
    const int n = 2, w = 9;
    ClnnLayer layer = oracle::random_clnn_layer(4, 3, n, rng);
    Matrix segment = oracle::random_matrix(4, w, rng);
    Matrix base = clnn_layer_forward(segment, layer);
    for (int c = 0; c < w; ++c) {
        Matrix bumped = segment;
        bumped(1, c) += 0.75;
        Matrix out = clnn_layer_forward(bumped, layer);
        for (int t = 0; t < out.cols(); ++t) {
            bool in_field = t <= c && c <= t + 2 * n;
            bool changed = false;
            for (int j = 0; j < out.rows(); ++j)
                if (out(j, t) != base(j, t)) changed = true;
            CHECK(changed == in_field);
        }
    }
}

TEST_CASE("masked layer: all-ones mask is bit-identical to unmasked") {
    Rng rng(26);
    ClnnLayer layer = oracle::random_clnn_layer(6, 4, 1, rng);
    Matrix segment = oracle::random_matrix(6, 6, rng);
    ClnnForward plain = clnn_layer_forward_cached(segment, layer);

    ClnnLayer masked = layer;
    masked.mask = BinaryMask{Matrix(6, 4, 1.0), MaskSpec{6, 4, 1, 0}};
    ClnnForward m = clnn_layer_forward_cached(segment, masked);
    CHECK(m.output == plain.output);

    Matrix grad_out = oracle::random_matrix(4, 4, rng);
    ClnnGrads g1 = clnn_layer_backward(segment, layer, plain.preact, grad_out);
    ClnnGrads g2 = clnn_layer_backward(segment, masked, m.preact, grad_out);
    for (size_t u = 0; u < g1.weights.size(); ++u)
        CHECK(g1.weights[u] == g2.weights[u]);
    CHECK(g1.bias == g2.bias);
    CHECK(g1.input == g2.input);
}

TEST_CASE("masked layer: all-zeros mask with identity transfer outputs the bias") {
    Rng rng(27);
    ClnnLayer layer = oracle::random_clnn_layer(6, 4, 1, rng, Transfer::Identity);
    layer.mask = BinaryMask{Matrix(6, 4, 0.0), MaskSpec{6, 4, 1, 0}};
    Matrix segment = oracle::random_matrix(6, 5, rng);
    Matrix out = clnn_layer_forward(segment, layer);
    for (int t = 0; t < out.cols(); ++t)
        for (int j = 0; j < 4; ++j)
            CHECK(out(j, t) == layer.bias[j]);
}

TEST_CASE("masked layer matches zero-weights-then-run oracle") {
    Rng rng(28);
    ClnnLayer layer = oracle::random_clnn_layer(6, 4, 1, rng);
    layer.mask = generate_mask(MaskSpec{6, 4, 3, 1});
    Matrix segment = oracle::random_matrix(6, 6, rng);

    std::vector<Matrix> zeroed;
    for (const Matrix& w : layer.weights)
        zeroed.push_back(elementwise_mul(w, layer.mask->matrix));
    Matrix want = oracle::clnn_layer_bruteforce(segment, zeroed, layer.bias, layer.slope, true);
    Matrix got = clnn_layer_forward(segment, layer);
    REQUIRE(got.same_shape(want));
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got.at_linear(i) == doctest::Approx(want.at_linear(i)).epsilon(1e-12));
}

TEST_CASE("layer backward: zero grad_out gives zero gradients") {
    Rng rng(29);
    ClnnLayer layer = oracle::random_clnn_layer(4, 3, 1, rng);
    Matrix segment = oracle::random_matrix(4, 5, rng);
    ClnnForward fwd = clnn_layer_forward_cached(segment, layer);
    ClnnGrads g = clnn_layer_backward(segment, layer, fwd.preact, Matrix(3, 3, 0.0));
    for (const Matrix& gw : g.weights)
        for (size_t i = 0; i < gw.size(); ++i)
            CHECK(gw.at_linear(i) == 0.0);
    for (double v : g.bias) CHECK(v == 0.0);
    for (double v : g.slope) CHECK(v == 0.0);
    for (size_t i = 0; i < g.input.size(); ++i)
        CHECK(g.input.at_linear(i) == 0.0);
}

TEST_CASE("layer backward matches finite differences (l=8 e=6 n=2 w=7)") {
    LayerFixture f = clean_clnn_fixture(8, 6, 2, 7, 31);
    Rng crng(32);
    Matrix c = oracle::random_matrix(6, 3, crng); // fixed weighting of the output

    auto loss = [&]() {
        Matrix out = clnn_layer_forward(f.segment, f.layer);
        double s = 0.0;
        for (size_t i = 0; i < out.size(); ++i)
            s += c.at_linear(i) * out.at_linear(i);
        return s;
    };
    ClnnForward fwd = clnn_layer_forward_cached(f.segment, f.layer);
    ClnnGrads g = clnn_layer_backward(f.segment, f.layer, fwd.preact, c);

    for (size_t u = 0; u < f.layer.weights.size(); ++u) {
        auto r = oracle::finite_diff_check(f.layer.weights[u].data(), f.layer.weights[u].size(),
                                           g.weights[u].data(), loss);
        CHECK(r.max_rel_err <= 1e-6);
    }
    CHECK(oracle::finite_diff_check(f.layer.bias.data(), f.layer.bias.size(), g.bias.data(), loss)
              .max_rel_err <= 1e-6);
    CHECK(oracle::finite_diff_check(f.layer.slope.data(), f.layer.slope.size(), g.slope.data(), loss)
              .max_rel_err <= 1e-6);
    CHECK(oracle::finite_diff_check(f.segment.data(), f.segment.size(), g.input.data(), loss)
              .max_rel_err <= 1e-6);
}

TEST_CASE("masked layer backward: gradient is exactly zero at masked positions") {
    Rng rng(33);
    ClnnLayer layer = oracle::random_clnn_layer(6, 4, 1, rng);
    layer.mask = generate_mask(MaskSpec{6, 4, 3, 1});
    layer.apply_mask();
    Matrix segment = oracle::random_matrix(6, 6, rng);
    ClnnForward fwd = clnn_layer_forward_cached(segment, layer);
    ClnnGrads g = clnn_layer_backward(segment, layer, fwd.preact, oracle::random_matrix(4, 4, rng));
    for (const Matrix& gw : g.weights)
        for (size_t i = 0; i < gw.size(); ++i)
            if (layer.mask->matrix.at_linear(i) == 0.0)
                CHECK(gw.at_linear(i) == 0.0);
}

TEST_CASE("degenerate CLNN: zero off-center matrices act as a per-frame dense layer") {
    Rng rng(34);
    ClnnLayer layer = oracle::random_clnn_layer(5, 4, 1, rng, Transfer::Identity);
    layer.weights[0] = Matrix(5, 4, 0.0);
    layer.weights[2] = Matrix(5, 4, 0.0);
    Matrix segment = oracle::random_matrix(5, 7, rng);
    Matrix out = clnn_layer_forward(segment, layer);

    for (int t = 0; t < out.cols(); ++t) {
        std::vector<double> frame(5);
        for (int i = 0; i < 5; ++i)
            frame[i] = segment(i, t + 1); // central frame of the window
        std::vector<double> dense = matvec(layer.weights[1], frame);
        for (int j = 0; j < 4; ++j)
            CHECK(out(j, t) == doctest::Approx(dense[j] + layer.bias[j]).epsilon(1e-12));
    }
}

TEST_CASE("temporal pool forward") {
    Matrix single(3, 1);
    single(0, 0) = 1.0;
    single(1, 0) = -2.0;
    single(2, 0) = 0.5;
    for (PoolMode mode : {PoolMode::Mean, PoolMode::Max})
        CHECK(temporal_pool(single, mode) == std::vector<double>{1.0, -2.0, 0.5});

    Matrix m(2, 2);
    m(0, 0) = 1; m(0, 1) = 3; m(1, 0) = 2; m(1, 1) = 4;
    CHECK(temporal_pool(m, PoolMode::Mean) == std::vector<double>{2.0, 3.0});
    CHECK(temporal_pool(m, PoolMode::Max) == std::vector<double>{3.0, 4.0});
    CHECK(temporal_pool(m, PoolMode::Flatten) == std::vector<double>{1.0, 2.0, 3.0, 4.0});

    CHECK_THROWS_AS(temporal_pool(Matrix(2, 0), PoolMode::Mean), std::invalid_argument);
}

TEST_CASE("pool backward matches finite differences for every mode") {
    Rng rng(35);
    for (PoolMode mode : {PoolMode::Mean, PoolMode::Max, PoolMode::Flatten}) {
        Matrix block = oracle::random_matrix(4, 5, rng);
        PoolForward fwd = temporal_pool_cached(block, mode);
        std::vector<double> c = oracle::random_vector(static_cast<int>(fwd.output.size()), rng);

        auto loss = [&]() {
            std::vector<double> out = temporal_pool(block, mode);
            double s = 0.0;
            for (size_t i = 0; i < out.size(); ++i)
                s += c[i] * out[i];
            return s;
        };
        Matrix g = temporal_pool_backward(fwd, mode, 4, 5, c);
        auto r = oracle::finite_diff_check(block.data(), block.size(), g.data(), loss);
        CHECK(r.max_rel_err <= 1e-6);
    }
}

TEST_CASE("max pool routes gradient only to the argmax frame") {
    Matrix block(1, 3);
    block(0, 0) = 1.0;
    block(0, 1) = 5.0;
    block(0, 2) = 3.0;
    PoolForward fwd = temporal_pool_cached(block, PoolMode::Max);
    Matrix g = temporal_pool_backward(fwd, PoolMode::Max, 1, 3, {2.0});
    CHECK(g(0, 0) == 0.0);
    CHECK(g(0, 1) == 2.0);
    CHECK(g(0, 2) == 0.0);
}

TEST_CASE("prelu basics and gradient") {
    CHECK(prelu_forward(5.0, 0.25) == 5.0);
    CHECK(prelu_forward(-2.0, 0.25) == -0.5);

    // finite-difference check away from the kink
    for (double x : {1.7, -0.9}) {
        double slope = 0.3;
        const double h = 1e-6;
        double num_dx = (prelu_forward(x + h, slope) - prelu_forward(x - h, slope)) / (2 * h);
        double num_ds = (prelu_forward(x, slope + h) - prelu_forward(x, slope - h)) / (2 * h);
        CHECK(std::fabs(prelu_dx(x, slope) - num_dx) <= 1e-8 * std::max(1.0, std::fabs(num_dx)));
        CHECK(std::fabs(prelu_dslope(x) - num_ds) <= 1e-8 * std::max(1.0, std::fabs(num_ds)));
    }
}

TEST_CASE("dense layer gradient check") {
    for (uint64_t seed = 40;; ++seed) {
        Rng rng(seed);
        DenseLayer layer;
        layer.in_features = 6;
        layer.width = 4;
        layer.transfer = Transfer::Prelu;
        layer.weights = oracle::random_matrix(6, 4, rng);
        layer.bias = oracle::random_vector(4, rng);
        layer.slope = oracle::random_vector(4, rng, 0.05, 0.5);
        std::vector<double> x = oracle::random_vector(6, rng);

        DenseForward fwd = dense_forward_cached(x, layer);
        bool clean = true;
        for (double p : fwd.preact)
            if (std::fabs(p) < 1e-3) clean = false;
        if (!clean) continue;

        std::vector<double> c = oracle::random_vector(4, rng);
        auto loss = [&]() {
            std::vector<double> out = dense_forward(x, layer);
            double s = 0.0;
            for (size_t i = 0; i < out.size(); ++i)
                s += c[i] * out[i];
            return s;
        };
        DenseGrads g = dense_backward(x, layer, fwd, c);
        CHECK(oracle::finite_diff_check(layer.weights.data(), layer.weights.size(),
                                        g.weights.data(), loss).max_rel_err <= 1e-6);
        CHECK(oracle::finite_diff_check(layer.bias.data(), layer.bias.size(), g.bias.data(), loss)
                  .max_rel_err <= 1e-6);
        CHECK(oracle::finite_diff_check(layer.slope.data(), layer.slope.size(), g.slope.data(), loss)
                  .max_rel_err <= 1e-6);
        CHECK(oracle::finite_diff_check(x.data(), x.size(), g.input.data(), loss).max_rel_err <=
              1e-6);
        break;
    }
}

TEST_CASE("softmax stability and symmetry") {
    std::vector<double> s = softmax({0.0, 0.0});
    CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));

    std::vector<double> big = softmax({1000.0, 1000.0});
    CHECK(big[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(std::isfinite(big[0]));

    Rng rng(44);
    std::vector<double> x = oracle::random_vector(7, rng, -5, 5);
    std::vector<double> p = softmax(x);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
}

TEST_CASE("dropout semantics") {
    Rng rng(45);
    std::vector<double> x{1.0, 2.0, 3.0, 4.0};

    CHECK(dropout(x, 0.0, rng, true).output == x);  // rate 0 is identity while training
    CHECK(dropout(x, 0.5, rng, false).output == x); // inference is identity

    DropoutResult r = dropout(x, 0.5, rng, true);
    for (size_t i = 0; i < x.size(); ++i)
        CHECK((r.output[i] == 0.0 || r.output[i] == x[i] * 2.0));

    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, true), std::invalid_argument);

    // expected survivor mass is preserved on average
    Rng r2(46);
    double mass = 0.0;
    const int trials = 20000;
    for (int t = 0; t < trials; ++t)
        mass += dropout({1.0}, 0.3, r2, true).output[0];
    CHECK(std::fabs(mass / trials - 1.0) < 0.02);
}
