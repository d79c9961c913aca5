#include "ma3e/patching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>

#include "ma3e/error.hpp"

namespace ma3e {

PatchSet patchify(const Image& img, int p) {
    if (p <= 0 || img.height % p != 0 || img.width % p != 0)
        throw ValidationError("image dimensions are not divisible by the patch size");
    PatchSet ps;
    ps.p = p;
    ps.channels = img.channels;
    ps.grid_rows = img.height / p;
    ps.grid_cols = img.width / p;
    ps.patches = Matrix(ps.count(), ps.dim());
    for (int k = 0; k < ps.count(); ++k) {
        const int gr = k / ps.grid_cols;
        const int gc = k % ps.grid_cols;
        auto row = ps.patches.row(k);
        std::size_t t = 0;
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j)
                for (int ch = 0; ch < img.channels; ++ch) row[t++] = img.at(gr * p + i, gc * p + j, ch);
    }
    return ps;
}

Image unpatchify(const PatchSet& ps) {
    if (ps.p <= 0 || ps.grid_rows <= 0 || ps.grid_cols <= 0 || ps.channels <= 0 ||
        ps.patches.rows() != static_cast<std::size_t>(ps.count()) ||
        ps.patches.cols() != static_cast<std::size_t>(ps.dim()))
        throw ValidationError("inconsistent patch grid metadata");
    const int p = ps.p;
    Image img(ps.grid_rows * p, ps.grid_cols * p, ps.channels);
    for (int k = 0; k < ps.count(); ++k) {
        const int gr = k / ps.grid_cols;
        const int gc = k % ps.grid_cols;
        auto row = ps.patches.row(k);
        std::size_t t = 0;
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j)
                for (int ch = 0; ch < ps.channels; ++ch) img.at(gr * p + i, gc * p + j, ch) = row[t++];
    }
    return img;
}

CropSplit split_indices(const RotatedCropSpec& spec, int grid_rows, int grid_cols, int p) {
    if (p <= 0 || spec.a <= 0 || spec.a % p != 0 || spec.row0 % p != 0 || spec.col0 % p != 0)
        throw ValidationError("misaligned spec: crop is not on the patch grid");
    const int r0 = spec.row0 / p;
    const int c0 = spec.col0 / p;
    const int side = spec.a / p;
    if (r0 < 0 || c0 < 0 || r0 + side > grid_rows || c0 + side > grid_cols)
        throw ValidationError("misaligned spec: crop exceeds the patch grid");
    CropSplit split;
    for (int k = 0; k < grid_rows * grid_cols; ++k) {
        const int gr = k / grid_cols;
        const int gc = k % grid_cols;
        const bool in_crop = gr >= r0 && gr < r0 + side && gc >= c0 && gc < c0 + side;
        (in_crop ? split.crop : split.background).push_back(k);
    }
    return split;
}

std::vector<int> MaskLayout::visible_order() const {
    std::vector<int> order = crop_visible;
    order.insert(order.end(), bg_visible.begin(), bg_visible.end());
    return order;
}

int visible_count(int n, double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("mask ratio must lie in [0, 1]");
    return static_cast<int>(std::lround(n * (1.0 - ratio)));
}

namespace {

// Uniform k-subset of `pool` by partial Fisher-Yates; returns (chosen, rest), both sorted.
std::pair<std::vector<int>, std::vector<int>> choose_subset(std::vector<int> pool, int k, Rng& rng) {
    for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(uniform_index(rng, pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> chosen(pool.begin(), pool.begin() + k);
    std::vector<int> rest(pool.begin() + k, pool.end());
    std::sort(chosen.begin(), chosen.end());
    std::sort(rest.begin(), rest.end());
    return {std::move(chosen), std::move(rest)};
}

}  // namespace

MaskLayout sample_mask(const std::vector<int>& crop_indices, const std::vector<int>& background_indices,
                       double ratio_crop, double ratio_bg, Rng& rng) {
    MaskLayout layout;
    layout.crop_indices = crop_indices;
    layout.background_indices = background_indices;
    layout.ratio_crop = ratio_crop;
    layout.ratio_bg = ratio_bg;
    const int keep_crop = visible_count(static_cast<int>(crop_indices.size()), ratio_crop);
    const int keep_bg = visible_count(static_cast<int>(background_indices.size()), ratio_bg);
    std::tie(layout.crop_visible, layout.crop_masked) = choose_subset(crop_indices, keep_crop, rng);
    std::tie(layout.bg_visible, layout.bg_masked) = choose_subset(background_indices, keep_bg, rng);
    return layout;
}

MaskLayout sample_joint_mask(const std::vector<int>& crop_indices, const std::vector<int>& background_indices,
                             double ratio, Rng& rng) {
    MaskLayout layout;
    layout.crop_indices = crop_indices;
    layout.background_indices = background_indices;
    layout.ratio_crop = ratio;
    layout.ratio_bg = ratio;
    std::vector<int> all = crop_indices;
    all.insert(all.end(), background_indices.begin(), background_indices.end());
    std::sort(all.begin(), all.end());
    const int keep = visible_count(static_cast<int>(all.size()), ratio);
    auto [visible, masked] = choose_subset(std::move(all), keep, rng);
    const auto is_crop = [&](int k) { return std::binary_search(crop_indices.begin(), crop_indices.end(), k); };
    for (int k : visible) (is_crop(k) ? layout.crop_visible : layout.bg_visible).push_back(k);
    for (int k : masked) (is_crop(k) ? layout.crop_masked : layout.bg_masked).push_back(k);
    return layout;
}

void validate(const MaskLayout& layout) {
    const int n = layout.total();
    std::vector<int> seen(n, 0);
    const auto mark = [&](const std::vector<int>& set, int bit) {
        for (int k : set) {
            if (k < 0 || k >= n) throw ValidationError("mask layout index out of range");
            if (seen[k] & bit) throw ValidationError("mask layout sets overlap");
            seen[k] |= bit;
        }
    };
    mark(layout.crop_indices, 1);
    mark(layout.background_indices, 1);
    mark(layout.crop_visible, 2);
    mark(layout.crop_masked, 2);
    mark(layout.bg_visible, 2);
    mark(layout.bg_masked, 2);
    for (int k = 0; k < n; ++k)
        if (seen[k] != 3) throw ValidationError("mask layout sets do not partition the grid");
    const auto subset = [](const std::vector<int>& part, const std::vector<int>& whole) {
        return std::all_of(part.begin(), part.end(),
                           [&](int k) { return std::find(whole.begin(), whole.end(), k) != whole.end(); });
    };
    if (!subset(layout.crop_visible, layout.crop_indices) || !subset(layout.crop_masked, layout.crop_indices) ||
        !subset(layout.bg_visible, layout.background_indices) || !subset(layout.bg_masked, layout.background_indices))
        throw ValidationError("visible/masked sets straddle the crop/background split");
}

void write_mask_layout(const MaskLayout& layout, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("unwritable path: " + path.string());
    const auto line = [&](const char* name, const std::vector<int>& set) {
        out << name << ':';
        for (int k : set) out << ' ' << k;
        out << '\n';
    };
    out << "ratio_crop: " << layout.ratio_crop << '\n' << "ratio_bg: " << layout.ratio_bg << '\n';
    line("crop_indices", layout.crop_indices);
    line("background_indices", layout.background_indices);
    line("crop_visible", layout.crop_visible);
    line("crop_masked", layout.crop_masked);
    line("bg_visible", layout.bg_visible);
    line("bg_masked", layout.bg_masked);
}

Matrix normalize_patches(const Matrix& patches) {
    Matrix out = patches;
    const auto d = static_cast<double>(patches.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        const double mean = std::accumulate(row.begin(), row.end(), 0.0) / d;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-6);
        for (double& v : row) v = (v - mean) * inv;
    }
    return out;
}

}  // namespace ma3e
