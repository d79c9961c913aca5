#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "ma3e/error.hpp"
#include "ma3e/imageio.hpp"
#include "ma3e/rng.hpp"

namespace ma3e {

std::string to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::oriented_bar: return "oriented_bar";
        case ShapeKind::oriented_ellipse: return "oriented_ellipse";
        case ShapeKind::checker: return "checker";
    }
    return "unknown";
}

ShapeKind parse_shape_kind(const std::string& s) {
    if (s == "oriented_bar") return ShapeKind::oriented_bar;
    if (s == "oriented_ellipse") return ShapeKind::oriented_ellipse;
    if (s == "checker") return ShapeKind::checker;
    throw ValidationError("unknown shape kind '" + s + "'");
}

void validate(const DatasetSpec& spec) {
    if (spec.count < 1) throw ValidationError("count >= 1 required");
    if (spec.size < 1) throw ValidationError("size >= 1 required");
    if (spec.channels != 1 && spec.channels != 3) throw ValidationError("channels must be 1 or 3");
    if (spec.patch_size > 0 && spec.size % spec.patch_size != 0)
        throw ValidationError("size must be divisible by the patch size");
}

namespace {

constexpr int kSuper = 4;

struct Wave {
    double ky, kx, phase, amp;
};

}  // namespace

Image synthesize_one(const DatasetSpec& spec, int index) {
    Rng rng = split_rng(spec.seed, static_cast<std::uint64_t>(index));
    const int n = spec.size;
    const int c = spec.channels;
    const double pi = std::numbers::pi;

    // Background: base tone plus three low-frequency plane waves per channel.
    std::vector<double> base(c);
    std::vector<std::array<Wave, 3>> waves(c);
    for (int ch = 0; ch < c; ++ch) {
        base[ch] = uniform(rng, 0.2, 0.4);
        for (auto& w : waves[ch]) {
            const double freq = uniform(rng, 1.0, 4.0) * 2.0 * pi / n;
            const double dir = uniform(rng, 0.0, 2.0 * pi);
            w = {freq * std::sin(dir), freq * std::cos(dir), uniform(rng, 0.0, 2.0 * pi), uniform(rng, 0.02, 0.06)};
        }
    }

    const double angle = uniform(rng, 0.0, pi);
    const double cy = n * 0.5 + uniform(rng, -0.125, 0.125) * n;
    const double cx = n * 0.5 + uniform(rng, -0.125, 0.125) * n;
    const double half_len = n * uniform(rng, 0.25, 0.35);
    const double half_wid = n * uniform(rng, 0.05, 0.09);
    const double cell = n * uniform(rng, 0.06, 0.1);
    std::vector<double> fg(c), fg2(c);
    for (int ch = 0; ch < c; ++ch) {
        fg[ch] = uniform(rng, 0.7, 0.95);
        fg2[ch] = uniform(rng, 0.0, 0.15);
    }
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);

    Image img(n, n, c);
    for (int r = 0; r < n; ++r) {
        for (int col = 0; col < n; ++col) {
            std::vector<double> acc(c, 0.0);
            for (int sy = 0; sy < kSuper; ++sy) {
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double y = r + (sy + 0.5) / kSuper;
                    const double x = col + (sx + 0.5) / kSuper;
                    // Shape frame: u along the major axis, v across it (row axis points down).
                    const double dy = y - cy;
                    const double dx = x - cx;
                    const double u = dx * ca - dy * sa;
                    const double v = dx * sa + dy * ca;
                    bool inside = false;
                    bool dark = false;
                    switch (spec.shape_kind) {
                        case ShapeKind::oriented_bar:
                            inside = std::abs(u) <= half_len && std::abs(v) <= half_wid;
                            break;
                        case ShapeKind::oriented_ellipse:
                            inside = (u * u) / (half_len * half_len) + (v * v) / (2.0 * half_wid * 2.0 * half_wid) <= 1.0;
                            break;
                        case ShapeKind::checker: {
                            inside = std::abs(u) <= half_len && std::abs(v) <= half_len * 0.6;
                            const auto iu = static_cast<long>(std::floor(u / cell));
                            const auto iv = static_cast<long>(std::floor(v / cell));
                            dark = ((iu + iv) & 1L) != 0;
                            break;
                        }
                    }
                    for (int ch = 0; ch < c; ++ch) {
                        double value;
                        if (inside) {
                            value = dark ? fg2[ch] : fg[ch];
                        } else {
                            value = base[ch];
                            for (const auto& w : waves[ch]) value += w.amp * std::sin(w.ky * y + w.kx * x + w.phase);
                        }
                        acc[ch] += value;
                    }
                }
            }
            for (int ch = 0; ch < c; ++ch)
                img.at(r, col, ch) = std::clamp(acc[ch] / (kSuper * kSuper), 0.0, 1.0);
        }
    }
    return img;
}

std::vector<Image> generate_synthetic(const DatasetSpec& spec) {
    validate(spec);
    std::vector<Image> out;
    out.reserve(spec.count);
    for (int k = 0; k < spec.count; ++k) out.push_back(synthesize_one(spec, k));
    return out;
}

void write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
    validate(spec);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw RuntimeFailure("unwritable path: " + dir.string() + ": " + ec.message());
    for (int k = 0; k < spec.count; ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%06d.ppm", k);
        save_image(synthesize_one(spec, k), dir / name);
    }
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw RuntimeFailure("unwritable path: " + (dir / "manifest.txt").string());
    manifest << "seed = " << spec.seed << '\n'
             << "count = " << spec.count << '\n'
             << "size = " << spec.size << '\n'
             << "channels = " << spec.channels << '\n'
             << "shape_kind = " << to_string(spec.shape_kind) << '\n';
}

}  // namespace ma3e
