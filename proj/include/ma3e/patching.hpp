#pragma once

#include <filesystem>
#include <vector>

#include "ma3e/geometry.hpp"
#include "ma3e/image.hpp"
#include "ma3e/rng.hpp"
#include "ma3e/tensor.hpp"

namespace ma3e {

/// Non-overlapping p x p patches in row-major grid order. Each row of
/// `patches` is one patch flattened row-major, then channel (p*p*C values).
struct PatchSet {
    Matrix patches;
    int grid_rows = 0;
    int grid_cols = 0;
    int p = 0;
    int channels = 0;

    int count() const { return grid_rows * grid_cols; }
    int dim() const { return p * p * channels; }
};

PatchSet patchify(const Image& img, int p);
Image unpatchify(const PatchSet& ps);

struct CropSplit {
    std::vector<int> crop;        // grid cells covered by the a-square, ascending
    std::vector<int> background;  // everything else, ascending
};

CropSplit split_indices(const RotatedCropSpec& spec, int grid_rows, int grid_cols, int p);

/// Partition of the patch grid into crop/background and visible/masked sets.
/// All index lists are ascending.
struct MaskLayout {
    std::vector<int> crop_indices;
    std::vector<int> background_indices;
    std::vector<int> crop_visible;
    std::vector<int> crop_masked;
    std::vector<int> bg_visible;
    std::vector<int> bg_masked;
    double ratio_crop = 0.0;
    double ratio_bg = 0.0;

    int total() const { return static_cast<int>(crop_indices.size() + background_indices.size()); }
    // Encoder token order: crop_visible, then bg_visible.
    std::vector<int> visible_order() const;
};

// round(n * (1 - ratio)), the number of patches a population keeps visible.
int visible_count(int n, double ratio);

/// Masks crop and background independently, each uniformly without replacement.
MaskLayout sample_mask(const std::vector<int>& crop_indices, const std::vector<int>& background_indices,
                       double ratio_crop, double ratio_bg, Rng& rng);

/// Single uniform mask over the whole grid at `ratio`, then intersected with
/// the crop/background split. Used when split masking is switched off.
MaskLayout sample_joint_mask(const std::vector<int>& crop_indices, const std::vector<int>& background_indices,
                             double ratio, Rng& rng);

// Throws ValidationError unless the six sets form consistent partitions of {0..total-1}.
void validate(const MaskLayout& layout);

void write_mask_layout(const MaskLayout& layout, const std::filesystem::path& path);

// Per-patch standardization: (x - mean) / sqrt(var + 1e-6), row by row.
Matrix normalize_patches(const Matrix& patches);

}  // namespace ma3e
