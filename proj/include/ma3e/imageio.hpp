#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ma3e/image.hpp"

namespace ma3e {

// Binary PGM (P5, one channel) or PPM (P6, three channels), max value 255.
Image load_image(const std::filesystem::path& path);

// Writes P5 for one channel, P6 for three. Values are rounded to 8 bits.
void save_image(const Image& img, const std::filesystem::path& path);

enum class ShapeKind { oriented_bar, oriented_ellipse, checker };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& s);

struct DatasetSpec {
    int count = 256;
    int size = 96;
    int channels = 3;
    std::uint64_t seed = 7;
    ShapeKind shape_kind = ShapeKind::oriented_bar;
    // When nonzero, size must be a multiple of it.
    int patch_size = 0;
};

void validate(const DatasetSpec& spec);

/// Deterministic synthetic corpus. Each image holds one anti-aliased shape
/// (4x4 supersampled) at an angle uniform in [0, pi) over a smooth textured
/// background. Image k depends only on (seed, k, size, channels, kind).
std::vector<Image> generate_synthetic(const DatasetSpec& spec);

// Single image of the corpus above; generate_synthetic(spec)[index] == synthesize_one(spec, index).
Image synthesize_one(const DatasetSpec& spec, int index);

// Writes synth_{index:06}.ppm files and manifest.txt into dir (created if missing).
void write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

// Loads every .ppm/.pgm in dir in lexicographic filename order.
std::vector<Image> load_directory(const std::filesystem::path& dir);

}  // namespace ma3e
