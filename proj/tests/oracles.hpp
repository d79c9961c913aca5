#pragma once

// Independent reference implementations used only by the tests. They
// deliberately take different computational routes from the library code.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ma3e/geometry.hpp"
#include "ma3e/image.hpp"
#include "ma3e/tensor.hpp"

namespace oracle {

// Tent-kernel bilinear sample in pixel-index coordinates (pixel (r, c) sits at (r, c)).
inline double tent_sample(const ma3e::Image& img, double u, double v, int ch) {
    const int r0 = static_cast<int>(std::floor(u));
    const int c0 = static_cast<int>(std::floor(v));
    double acc = 0.0;
    for (int r = r0; r <= r0 + 1; ++r) {
        const double wr = std::max(0.0, 1.0 - std::abs(u - r));
        if (wr == 0.0) continue;
        for (int c = c0; c <= c0 + 1; ++c) {
            const double wc = std::max(0.0, 1.0 - std::abs(v - c));
            if (wc == 0.0) continue;
            acc += wr * wc * img.at(std::clamp(r, 0, img.height - 1), std::clamp(c, 0, img.width - 1), ch);
        }
    }
    return acc;
}

// Brute-force inverse map of the scaling center crop, written in index space
// with an explicit rotation matrix: src = center + M(theta) * (dst - center).
inline ma3e::Image rotated_crop(const ma3e::Image& img, const ma3e::RotatedCropSpec& s) {
    const double m00 = std::cos(s.theta), m01 = -std::sin(s.theta);
    const double m10 = std::sin(s.theta), m11 = std::cos(s.theta);
    const double center_r = s.row0 + (s.a - 1) / 2.0;
    const double center_c = s.col0 + (s.a - 1) / 2.0;
    ma3e::Image out(s.a, s.a, img.channels);
    for (int i = 0; i < s.a; ++i) {
        for (int j = 0; j < s.a; ++j) {
            const double dr = (s.row0 + i) - center_r;
            const double dc = (s.col0 + j) - center_c;
            // Row-down frame: (row, col) -> (row', col') for a counter-clockwise turn.
            const double u = center_r + (m00 * dr + m01 * dc);
            const double v = center_c + (m10 * dr + m11 * dc);
            for (int ch = 0; ch < img.channels; ++ch) out.at(i, j, ch) = tent_sample(img, u, v, ch);
        }
    }
    return out;
}

// Number of destination pixels of an in-place rotation of an a-square whose
// inverse-mapped source falls outside the square.
inline long zero_fill_count(int a, double theta) {
    long zeros = 0;
    const double half = a / 2.0;
    for (int i = 0; i < a; ++i) {
        for (int j = 0; j < a; ++j) {
            const double y = i + 0.5 - half;
            const double x = j + 0.5 - half;
            const double sy = std::cos(theta) * y - std::sin(theta) * x;
            const double sx = std::sin(theta) * y + std::cos(theta) * x;
            if (std::abs(sy) > half || std::abs(sx) > half) ++zeros;
        }
    }
    return zeros;
}

// Exact uniform-marginal OT by permutation enumeration, reversed loop order
// relative to the library: recursive assignment of columns to rows from the last row up.
inline void assign_from_back(const ma3e::Matrix& c, std::vector<bool>& used, int row, double acc, double& best) {
    if (row < 0) {
        best = std::min(best, acc);
        return;
    }
    const int n = static_cast<int>(c.rows());
    for (int col = n - 1; col >= 0; --col) {
        if (used[col]) continue;
        used[col] = true;
        assign_from_back(c, used, row - 1, acc + c(row, col), best);
        used[col] = false;
    }
}

inline double exact_ot(const ma3e::Matrix& c) {
    std::vector<bool> used(c.rows(), false);
    double best = INFINITY;
    assign_from_back(c, used, static_cast<int>(c.rows()) - 1, 0.0, best);
    return best / static_cast<double>(c.rows());
}

// Element-wise loop cost: c_ij = (1/D) sum_t (r_it - p_jt)^2.
inline ma3e::Matrix loop_cost(const ma3e::Matrix& r, const ma3e::Matrix& p) {
    ma3e::Matrix c(r.rows(), p.rows());
    for (std::size_t i = 0; i < r.rows(); ++i)
        for (std::size_t j = 0; j < p.rows(); ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < r.cols(); ++t) s += (r(i, t) - p(j, t)) * (r(i, t) - p(j, t));
            c(i, j) = s / static_cast<double>(r.cols());
        }
    return c;
}

}  // namespace oracle
