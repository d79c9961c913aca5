#pragma once

#include <cstddef>
#include <vector>

namespace ma3e {

/// Real-valued raster in [0, 1], row-major, channel-interleaved.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t index(int row, int col, int ch) const {
        return (static_cast<std::size_t>(row) * width + col) * channels + ch;
    }
    double& at(int row, int col, int ch) { return data[index(row, col, ch)]; }
    double at(int row, int col, int ch) const { return data[index(row, col, ch)]; }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool empty() const { return data.empty(); }

    friend bool operator==(const Image&, const Image&) = default;
};

// Throws ValidationError if the dimensions and payload disagree or a value is
// non-finite or outside [0, 1].
void validate(const Image& img);

}  // namespace ma3e
