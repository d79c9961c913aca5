#include "ma3e/geometry.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "ma3e/error.hpp"

namespace ma3e {

std::vector<int> feasible_starts(int extent, int p, int a, bool enclosing_fit) {
    if (p <= 0 || a <= 0) throw ValidationError("patch size and crop side must be positive");
    if (a % p != 0) throw ValidationError("crop side a must be divisible by the patch size");
    const double margin = enclosing_fit ? 0.5 * (std::sqrt(2.0) * a - a) : 0.0;
    std::vector<int> starts;
    for (int s = 0; s + a <= extent; s += p) {
        if (s >= margin && s + a + margin <= extent) starts.push_back(s);
    }
    return starts;
}

RotatedCropSpec sample_crop_spec(int height, int width, int p, int a, AngleRange range, Rng& rng, bool enclosing_fit) {
    if (range.hi < range.lo) throw ValidationError("theta range is empty");
    const auto rows = feasible_starts(height, p, a, enclosing_fit);
    const auto cols = feasible_starts(width, p, a, enclosing_fit);
    if (rows.empty() || cols.empty()) throw ValidationError("no feasible position for the rotated crop");
    RotatedCropSpec spec;
    spec.a = a;
    spec.row0 = rows[uniform_index(rng, rows.size())];
    spec.col0 = cols[uniform_index(rng, cols.size())];
    spec.theta = uniform(rng, range.lo, range.hi);
    return spec;
}

void validate_spec(const RotatedCropSpec& spec, int height, int width, int p, bool enclosing_fit) {
    if (spec.a <= 0 || spec.a % p != 0) throw ValidationError("crop side a must be a positive multiple of p");
    if (spec.row0 % p != 0 || spec.col0 % p != 0) throw ValidationError("crop start must be a multiple of p");
    if (spec.row0 < 0 || spec.col0 < 0 || spec.row0 + spec.a > height || spec.col0 + spec.a > width)
        throw ValidationError("crop a-square does not fit the image");
    if (enclosing_fit) {
        const double half = 0.5 * spec.h();
        if (spec.center_row() - half < 0.0 || spec.center_row() + half > height || spec.center_col() - half < 0.0 ||
            spec.center_col() + half > width)
            throw ValidationError("enclosing h-square does not fit the image");
    }
    if (!std::isfinite(spec.theta)) throw ValidationError("theta must be finite");
}

double sample_bilinear(const Image& img, double row, double col, int ch) {
    const double u = row - 0.5;
    const double v = col - 0.5;
    const int r0 = std::clamp(static_cast<int>(std::floor(u)), 0, img.height - 1);
    const int c0 = std::clamp(static_cast<int>(std::floor(v)), 0, img.width - 1);
    const int r1 = std::min(r0 + 1, img.height - 1);
    const int c1 = std::min(c0 + 1, img.width - 1);
    const double fr = std::clamp(u - r0, 0.0, 1.0);
    const double fc = std::clamp(v - c0, 0.0, 1.0);
    const double top = img.at(r0, c0, ch) * (1.0 - fc) + img.at(r0, c1, ch) * fc;
    const double bottom = img.at(r1, c0, ch) * (1.0 - fc) + img.at(r1, c1, ch) * fc;
    return top * (1.0 - fr) + bottom * fr;
}

namespace {

void require_spec_fits(const Image& img, const RotatedCropSpec& spec, bool enclosing_fit) {
    // Alignment to p is the caller's business; only geometry is checked here.
    if (spec.a <= 0) throw ValidationError("spec/image mismatch: crop side must be positive");
    if (spec.row0 < 0 || spec.col0 < 0 || spec.row0 + spec.a > img.height || spec.col0 + spec.a > img.width)
        throw ValidationError("spec/image mismatch: a-square out of bounds");
    if (enclosing_fit) {
        const double half = 0.5 * spec.h();
        if (spec.center_row() - half < 0.0 || spec.center_row() + half > img.height ||
            spec.center_col() - half < 0.0 || spec.center_col() + half > img.width)
            throw ValidationError("spec/image mismatch: h-square out of bounds");
    }
}

}  // namespace

Image scaling_center_crop(const Image& img, const RotatedCropSpec& spec) {
    require_spec_fits(img, spec, true);
    const int a = spec.a;
    const double cr = spec.center_row();
    const double cc = spec.center_col();
    const double cs = std::cos(spec.theta);
    const double sn = std::sin(spec.theta);
    const double half_h = 0.5 * spec.h();
    Image out(a, a, img.channels);
    for (int i = 0; i < a; ++i) {
        const double dr = i + 0.5 - 0.5 * a;
        for (int j = 0; j < a; ++j) {
            const double dc = j + 0.5 - 0.5 * a;
            const double src_row = cr + (dr * cs - dc * sn);
            const double src_col = cc + (dc * cs + dr * sn);
            if (std::abs(src_row - cr) > half_h || std::abs(src_col - cc) > half_h)
                throw std::logic_error("scaling_center_crop sampled outside the enclosing square");
            for (int ch = 0; ch < img.channels; ++ch) out.at(i, j, ch) = sample_bilinear(img, src_row, src_col, ch);
        }
    }
    return out;
}

CompositeSample composite(const Image& img, const RotatedCropSpec& spec) {
    const Image crop = scaling_center_crop(img, spec);
    CompositeSample sample{img, img, spec};
    for (int i = 0; i < spec.a; ++i)
        for (int j = 0; j < spec.a; ++j)
            for (int ch = 0; ch < img.channels; ++ch)
                sample.composite.at(spec.row0 + i, spec.col0 + j, ch) = crop.at(i, j, ch);
    return sample;
}

CompositeSample random_rotation_baseline(const Image& img, const RotatedCropSpec& spec) {
    require_spec_fits(img, spec, false);
    const int a = spec.a;
    const double cs = std::cos(spec.theta);
    const double sn = std::sin(spec.theta);

    // Sampling restricted to the a-square so neighbours outside it never leak in.
    Image square(a, a, img.channels);
    for (int i = 0; i < a; ++i)
        for (int j = 0; j < a; ++j)
            for (int ch = 0; ch < img.channels; ++ch) square.at(i, j, ch) = img.at(spec.row0 + i, spec.col0 + j, ch);

    CompositeSample sample{img, img, spec};
    for (int i = 0; i < a; ++i) {
        const double dr = i + 0.5 - 0.5 * a;
        for (int j = 0; j < a; ++j) {
            const double dc = j + 0.5 - 0.5 * a;
            const double local_row = 0.5 * a + (dr * cs - dc * sn);
            const double local_col = 0.5 * a + (dc * cs + dr * sn);
            const bool inside = local_row >= 0.0 && local_row <= a && local_col >= 0.0 && local_col <= a;
            for (int ch = 0; ch < img.channels; ++ch) {
                sample.composite.at(spec.row0 + i, spec.col0 + j, ch) =
                    inside ? sample_bilinear(square, local_row, local_col, ch) : 0.0;
            }
        }
    }
    return sample;
}

}  // namespace ma3e
