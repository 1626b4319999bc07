#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mclnn/matrix.hpp"

namespace mclnn {

// Per-feature z-scoring. Fit on the training split only; the same parameters
// are applied to validation and test data. Population (1/N) std with an
// epsilon floor for constant features.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;
    double epsilon = 1e-8;

    int features() const { return static_cast<int>(mean.size()); }
};

// blocks: feature-major matrices (features x frames), all with equal rows.
inline Standardizer standardize_fit(const std::vector<const Matrix*>& blocks, double epsilon = 1e-8) {
    long total = 0;
    int l = -1;
    for (const Matrix* b : blocks) {
        if (l < 0) l = b->rows();
        else if (b->rows() != l) throw std::invalid_argument("standardize_fit: feature count varies");
        total += b->cols();
    }
    if (l < 0 || total < 2)
        throw std::invalid_argument("standardize_fit: need at least 2 frames");

    Standardizer s;
    s.epsilon = epsilon;
    s.mean.assign(l, 0.0);
    s.stddev.assign(l, 0.0);
    for (const Matrix* b : blocks)
        for (int t = 0; t < b->cols(); ++t)
            for (int i = 0; i < l; ++i)
                s.mean[i] += (*b)(i, t);
    for (double& m : s.mean) m /= total;
    for (const Matrix* b : blocks)
        for (int t = 0; t < b->cols(); ++t)
            for (int i = 0; i < l; ++i) {
                double d = (*b)(i, t) - s.mean[i];
                s.stddev[i] += d * d;
            }
    for (double& v : s.stddev) v = std::max(std::sqrt(v / total), epsilon);
    return s;
}

inline Standardizer standardize_fit(const std::vector<Matrix>& blocks, double epsilon = 1e-8) {
    std::vector<const Matrix*> ptrs;
    ptrs.reserve(blocks.size());
    for (const Matrix& b : blocks) ptrs.push_back(&b);
    return standardize_fit(ptrs, epsilon);
}

inline Matrix standardize_apply(const Standardizer& s, const Matrix& block) {
    if (block.rows() != s.features())
        throw std::invalid_argument("standardize_apply: feature count mismatch");
    Matrix out(block.rows(), block.cols());
    for (int t = 0; t < block.cols(); ++t)
        for (int i = 0; i < block.rows(); ++i)
            out(i, t) = (block(i, t) - s.mean[i]) / s.stddev[i];
    return out;
}

} // namespace mclnn
