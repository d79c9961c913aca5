#pragma once

#include <cmath>
#include <vector>

#include "ma3e/image.hpp"
#include "ma3e/rng.hpp"

namespace ma3e {

/// Placement and angle of one rotated crop. The a-square starts at
/// (row0, col0); the enclosing h-square (h = sqrt(2) a) shares its center.
struct RotatedCropSpec {
    int row0 = 0;
    int col0 = 0;
    int a = 0;
    double theta = 0.0;  // radians, counter-clockwise positive with the row axis pointing down

    double h() const { return std::sqrt(2.0) * a; }
    double center_row() const { return row0 + 0.5 * a; }
    double center_col() const { return col0 + 0.5 * a; }

    friend bool operator==(const RotatedCropSpec&, const RotatedCropSpec&) = default;
};

struct AngleRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct CompositeSample {
    Image original;
    Image composite;
    RotatedCropSpec spec;
};

// Feasible starts along an axis of length `extent`: multiples of p such that the
// a-square fits and, when enclosing_fit is set, the centered h-square fits too.
std::vector<int> feasible_starts(int extent, int p, int a, bool enclosing_fit = true);

/// Draws (row0, col0) uniformly from the feasible grid and theta uniformly from
/// `range`. Throws ValidationError("no feasible position") if the grid is empty.
RotatedCropSpec sample_crop_spec(int height, int width, int p, int a, AngleRange range, Rng& rng,
                                 bool enclosing_fit = true);

// Throws ValidationError if spec is misaligned or does not fit img.
void validate_spec(const RotatedCropSpec& spec, int height, int width, int p, bool enclosing_fit = true);

// Bilinear sample at continuous coordinates where pixel (r, c) has its center at (r + 0.5, c + 0.5).
double sample_bilinear(const Image& img, double row, double col, int ch);

/// Rotates the h-square around the crop center by theta and keeps its largest
/// inscribed a-square. Output is a x a x C. Every inverse-mapped source lies in
/// the h-square; theta == 0 reproduces the original a-square bit for bit.
Image scaling_center_crop(const Image& img, const RotatedCropSpec& spec);

/// img with its a-square replaced by scaling_center_crop(img, spec).
CompositeSample composite(const Image& img, const RotatedCropSpec& spec);

/// Rotates the a-square in place about its own center; destinations whose
/// source falls outside the a-square become 0. Only the a-square has to fit.
CompositeSample random_rotation_baseline(const Image& img, const RotatedCropSpec& spec);

}  // namespace ma3e
