#include "ma3e/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ma3e/error.hpp"

namespace ma3e {

void validate(const Image& img) {
    if (img.height <= 0 || img.width <= 0) throw ValidationError("zero-sized image");
    if (img.channels != 1 && img.channels != 3)
        throw ValidationError("image must have 1 or 3 channels, got " + std::to_string(img.channels));
    if (img.data.size() != static_cast<std::size_t>(img.height) * img.width * img.channels)
        throw ValidationError("image payload length does not match height*width*channels");
    for (double v : img.data)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw ValidationError("image values must be finite and within [0, 1]");
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
bool next_token(const std::string& buf, std::size_t& pos, std::string& out) {
    while (pos < buf.size()) {
        const auto c = static_cast<unsigned char>(buf[pos]);
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(c)) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size()) return false;
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    out = buf.substr(start, pos - start);
    return true;
}

int parse_header_int(const std::string& buf, std::size_t& pos, const std::filesystem::path& path) {
    std::string tok;
    if (!next_token(buf, pos, tok)) throw RuntimeFailure("unreadable file: truncated header in " + path.string());
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw RuntimeFailure("unreadable file: malformed header in " + path.string());
    return std::stoi(tok);
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("unreadable file: cannot open " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 2) throw RuntimeFailure("unreadable file: " + path.string() + " is truncated");

    const std::string magic = buf.substr(0, 2);
    int channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw RuntimeFailure("unsupported format: " + path.string() + " is not binary PGM/PPM");
    }
    std::size_t pos = 2;
    const int width = parse_header_int(buf, pos, path);
    const int height = parse_header_int(buf, pos, path);
    const int maxval = parse_header_int(buf, pos, path);
    if (width == 0 || height == 0) throw RuntimeFailure("zero-sized image: " + path.string());
    if (maxval < 1 || maxval > 255)
        throw RuntimeFailure("unsupported format: max value " + std::to_string(maxval) + " in " + path.string());
    // Exactly one whitespace byte separates the header from the payload.
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        throw RuntimeFailure("unreadable file: truncated header in " + path.string());
    ++pos;

    Image img(height, width, channels);
    if (buf.size() - pos < img.data.size())
        throw RuntimeFailure("unreadable file: " + path.string() + " has a truncated pixel payload");
    const double scale = 1.0 / maxval;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const auto byte = static_cast<unsigned char>(buf[pos + i]);
        img.data[i] = std::min(1.0, byte * scale);
    }
    return img;
}

void save_image(const Image& img, const std::filesystem::path& path) {
    validate(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("unwritable path: " + path.string());
    out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::string payload(img.data.size(), '\0');
    for (std::size_t i = 0; i < img.data.size(); ++i)
        payload[i] = static_cast<char>(static_cast<unsigned char>(std::lround(img.data[i] * 255.0)));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw RuntimeFailure("unwritable path: failed writing " + path.string());
}

std::vector<Image> load_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw RuntimeFailure("unreadable file: not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Image> images;
    images.reserve(files.size());
    for (const auto& f : files) images.push_back(load_image(f));
    return images;
}

}  // namespace ma3e
