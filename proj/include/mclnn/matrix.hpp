#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mclnn {

// Dense column-major matrix of doubles. Column-major is the storage
// convention for the whole library; the mask generator's linear indexing
// depends on it.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0)
            throw std::invalid_argument("Matrix: negative dimension");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }

    double& operator()(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(c) * rows_ + r];
    }
    double operator()(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(c) * rows_ + r];
    }

    // Linear (column-major) element access; used by the mask generator.
    double& at_linear(size_t i) { return data_[i]; }
    double at_linear(size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    // Pointer to the start of column c (contiguous, rows() entries).
    double* col(int c) { return data_.data() + static_cast<size_t>(c) * rows_; }
    const double* col(int c) const { return data_.data() + static_cast<size_t>(c) * rows_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (int c = 0; c < cols_; ++c)
            for (int r = 0; r < rows_; ++r)
                t(c, r) = (*this)(r, c);
        return t;
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    int rows_, cols_;
    std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// y[j] = sum_i x[i] * M[i][j]
inline std::vector<double> matvec(const Matrix& m, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != m.rows())
        throw std::invalid_argument("matvec: vector length " + std::to_string(x.size()) +
                                    " does not match matrix rows " + std::to_string(m.rows()));
    std::vector<double> out(m.cols(), 0.0);
    for (int j = 0; j < m.cols(); ++j) {
        const double* col = m.col(j);
        double acc = 0.0;
        for (int i = 0; i < m.rows(); ++i)
            acc += x[i] * col[i];
        out[j] = acc;
    }
    return out;
}

inline Matrix elementwise_mul(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("elementwise_mul: shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
    Matrix out(a.rows(), a.cols());
    for (size_t i = 0; i < a.size(); ++i)
        out.at_linear(i) = a.at_linear(i) * b.at_linear(i);
    return out;
}

// PCG32 (pcg_oneseq XSH-RR 64/32), implemented from the published
// description so sequences are reproducible across platforms and languages.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(0) {
        state_ = seed + kIncrement;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * kMultiplier + kIncrement;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        if (!(lo < hi))
            throw std::invalid_argument("Rng::uniform: lo must be < hi");
        return lo + (hi - lo) * next_double();
    }

    // Unbiased integer in [0, bound) by rejection.
    uint32_t bounded(uint32_t bound) {
        if (bound == 0)
            throw std::invalid_argument("Rng::bounded: bound must be positive");
        uint32_t threshold = (-bound) % bound;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[bounded(static_cast<uint32_t>(i))]);
    }

    // Derive an independent generator; used for per-fold and per-epoch seeds.
    Rng split(uint64_t stream) const {
        return Rng(splitmix64(state_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1))));
    }

    static uint64_t splitmix64(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    static constexpr uint64_t kMultiplier = 6364136223846793005ULL;
    static constexpr uint64_t kIncrement = 1442695040888963407ULL;
    uint64_t state_;
};

} // namespace mclnn
