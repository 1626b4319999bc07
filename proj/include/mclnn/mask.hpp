#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mclnn/matrix.hpp"

namespace mclnn {

// Parameters of the filterbank-style binary mask over an l x e weight matrix.
// bw = consecutive ones per band, ov = signed overlap between the bands of
// successive columns (negative values leave a gap).
struct MaskSpec {
    int features = 0;   // l, rows
    int nodes = 0;      // e, columns
    int bandwidth = 0;  // bw
    int overlap = 0;    // ov

    void validate() const {
        if (features < 1) throw std::invalid_argument("MaskSpec: features must be >= 1");
        if (nodes < 1) throw std::invalid_argument("MaskSpec: nodes must be >= 1");
        if (bandwidth < 1) throw std::invalid_argument("MaskSpec: bandwidth must be >= 1");
        if (bandwidth > features)
            throw std::invalid_argument("MaskSpec: bandwidth " + std::to_string(bandwidth) +
                                        " exceeds feature count " + std::to_string(features));
        if (overlap >= bandwidth)
            throw std::invalid_argument("MaskSpec: overlap must be < bandwidth");
    }

    // Linear distance between successive band starts.
    long stride() const { return static_cast<long>(features) + (bandwidth - overlap); }

    bool operator==(const MaskSpec& o) const {
        return features == o.features && nodes == o.nodes &&
               bandwidth == o.bandwidth && overlap == o.overlap;
    }
};

struct BinaryMask {
    Matrix matrix; // l x e, entries exactly 0.0 or 1.0
    MaskSpec spec;
};

// Band placement through linear spacing: for each band g and in-band offset
// a, the linear column-major index a + (g-1)*(l + (bw - ov)) is set to 1.
// Indices past l*e are discarded; bands may spill across column boundaries.
inline BinaryMask generate_mask(const MaskSpec& spec) {
    spec.validate();
    const long total = static_cast<long>(spec.features) * spec.nodes;
    const long stride = spec.stride();
    const long bands = (total + stride - 1) / stride; // ceil(l*e / stride)
    Matrix m(spec.features, spec.nodes, 0.0);
    for (long g = 1; g <= bands; ++g) {
        const long start = (g - 1) * stride;
        for (int a = 0; a < spec.bandwidth; ++a) {
            const long lx = start + a;
            if (lx < total)
                m.at_linear(static_cast<size_t>(lx)) = 1.0;
        }
    }
    return BinaryMask{std::move(m), spec};
}

inline Matrix mask_weights(const Matrix& weights, const BinaryMask& mask) {
    return elementwise_mul(weights, mask.matrix);
}

struct MaskStats {
    long ones_total = 0;
    std::vector<long> ones_per_column;
    double density = 0.0;
};

inline MaskStats mask_stats(const BinaryMask& mask) {
    MaskStats s;
    s.ones_per_column.assign(mask.matrix.cols(), 0);
    for (int c = 0; c < mask.matrix.cols(); ++c)
        for (int r = 0; r < mask.matrix.rows(); ++r)
            if (mask.matrix(r, c) != 0.0) ++s.ones_per_column[c];
    for (long n : s.ones_per_column) s.ones_total += n;
    s.density = mask.matrix.size() ? static_cast<double>(s.ones_total) / mask.matrix.size() : 0.0;
    return s;
}

// rows = features, columns = hidden nodes, comma-separated 0/1
inline void write_mask_csv(const BinaryMask& mask, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (int r = 0; r < mask.matrix.rows(); ++r) {
        for (int c = 0; c < mask.matrix.cols(); ++c) {
            if (c) out << ',';
            out << (mask.matrix(r, c) != 0.0 ? 1 : 0);
        }
        out << '\n';
    }
}

// PGM (P2) image, 1 = white band on black background
inline void write_mask_pgm(const BinaryMask& mask, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P2\n" << mask.matrix.cols() << ' ' << mask.matrix.rows() << "\n255\n";
    for (int r = 0; r < mask.matrix.rows(); ++r) {
        for (int c = 0; c < mask.matrix.cols(); ++c) {
            if (c) out << ' ';
            out << (mask.matrix(r, c) != 0.0 ? 255 : 0);
        }
        out << '\n';
    }
}

} // namespace mclnn
