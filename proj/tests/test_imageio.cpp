#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "ma3e/error.hpp"
#include "ma3e/imageio.hpp"
#include "ma3e/rng.hpp"

using namespace ma3e;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ma3e_test_imageio_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("saturated P6 loads as ones") {
    const auto dir = scratch_dir("sat");
    write_bytes(dir / "ones.ppm", "P6\n2 2\n255\n" + std::string(12, '\xff'));
    const Image img = load_image(dir / "ones.ppm");
    CHECK(img.height == 2);
    CHECK(img.width == 2);
    CHECK(img.channels == 3);
    for (double v : img.data) CHECK(v == 1.0);
}

TEST_CASE("header comments are skipped") {
    const auto dir = scratch_dir("comment");
    write_bytes(dir / "c.pgm", "P5\n# made by hand\n1 2\n255\n" + std::string("\x00\xff", 2));
    const Image img = load_image(dir / "c.pgm");
    CHECK(img.channels == 1);
    CHECK(img.at(0, 0, 0) == 0.0);
    CHECK(img.at(1, 0, 0) == 1.0);
}

TEST_CASE("round trip stays within 8-bit quantization") {
    const auto dir = scratch_dir("roundtrip");
    Rng rng(11);
    for (int channels : {1, 3}) {
        Image img(13, 7, channels);
        for (double& v : img.data) v = uniform01(rng);
        save_image(img, dir / "rt.ppm");
        const Image back = load_image(dir / "rt.ppm");
        REQUIRE(back.same_shape(img));
        double worst = 0.0;
        for (std::size_t i = 0; i < img.data.size(); ++i) worst = std::max(worst, std::abs(img.data[i] - back.data[i]));
        CHECK(worst <= 1.0 / 255.0);
    }
}

TEST_CASE("zero image writes a zero payload") {
    const auto dir = scratch_dir("zero");
    save_image(Image(3, 4, 3, 0.0), dir / "z.ppm");
    const std::string bytes = read_bytes(dir / "z.ppm");
    const std::string header = "P6\n4 3\n255\n";
    REQUIRE(bytes.size() == header.size() + 36);
    CHECK(bytes.substr(0, header.size()) == header);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == '\0');
}

TEST_CASE("load errors") {
    const auto dir = scratch_dir("errors");
    write_bytes(dir / "trunc.ppm", "P6\n4 4\n255\n" + std::string(10, 'x'));
    CHECK_THROWS_WITH_AS(load_image(dir / "trunc.ppm"), doctest::Contains("unreadable file"), RuntimeFailure);
    write_bytes(dir / "hdr.ppm", "P6\n4");
    CHECK_THROWS_WITH_AS(load_image(dir / "hdr.ppm"), doctest::Contains("unreadable file"), RuntimeFailure);
    CHECK_THROWS_WITH_AS(load_image(dir / "missing.ppm"), doctest::Contains("unreadable file"), RuntimeFailure);
    write_bytes(dir / "ascii.ppm", "P3\n1 1\n255\n0 0 0\n");
    CHECK_THROWS_WITH_AS(load_image(dir / "ascii.ppm"), doctest::Contains("unsupported format"), RuntimeFailure);
    write_bytes(dir / "deep.ppm", "P6\n1 1\n65535\n" + std::string(6, 'x'));
    CHECK_THROWS_WITH_AS(load_image(dir / "deep.ppm"), doctest::Contains("unsupported format"), RuntimeFailure);
    write_bytes(dir / "empty.ppm", "P6\n0 4\n255\n");
    CHECK_THROWS_WITH_AS(load_image(dir / "empty.ppm"), doctest::Contains("zero-sized image"), RuntimeFailure);
}

TEST_CASE("save into a missing directory fails") {
    const auto dir = scratch_dir("missing");
    CHECK_THROWS_AS(save_image(Image(2, 2, 1, 0.5), dir / "nope" / "x.pgm"), RuntimeFailure);
}

TEST_CASE("save rejects out-of-range values") {
    const auto dir = scratch_dir("range");
    Image img(2, 2, 1, 0.5);
    img.data[1] = 1.5;
    CHECK_THROWS_AS(save_image(img, dir / "bad.pgm"), ValidationError);
}

TEST_CASE("synthetic corpus is deterministic and shaped per spec") {
    DatasetSpec spec;
    spec.count = 256;
    spec.size = 96;
    spec.seed = 7;
    const auto a = generate_synthetic(spec);
    REQUIRE(a.size() == 256);
    for (const auto& img : a) {
        CHECK(img.height == 96);
        CHECK(img.width == 96);
        CHECK(img.channels == 3);
    }
    for (const auto& img : a) validate(img);

    DatasetSpec small = spec;
    small.count = 4;
    CHECK(generate_synthetic(small) == generate_synthetic(small));
    // Prefix property: image k does not depend on count.
    CHECK(generate_synthetic(small)[3] == a[3]);
    CHECK(a[0] != a[1]);

    DatasetSpec other = small;
    other.seed = 8;
    CHECK(generate_synthetic(other)[0] != a[0]);
}

TEST_CASE("synthetic shapes are anti-aliased") {
    DatasetSpec spec;
    spec.count = 1;
    spec.size = 64;
    for (ShapeKind kind : {ShapeKind::oriented_bar, ShapeKind::oriented_ellipse, ShapeKind::checker}) {
        spec.shape_kind = kind;
        const Image img = generate_synthetic(spec).front();
        // Fractional coverage appears along edges: more distinct levels than a hard mask would give.
        std::vector<double> levels(img.data.begin(), img.data.end());
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        CHECK(levels.size() > 50);
    }
}

TEST_CASE("synthetic spec validation") {
    DatasetSpec spec;
    spec.count = 0;
    CHECK_THROWS_WITH_AS(generate_synthetic(spec), doctest::Contains("count >= 1 required"), ValidationError);
    spec.count = 1;
    spec.size = 90;
    spec.patch_size = 8;
    CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
    CHECK_THROWS_AS(parse_shape_kind("triangle"), ValidationError);
}

TEST_CASE("dataset directory layout") {
    const auto dir = scratch_dir("dataset");
    DatasetSpec spec;
    spec.count = 3;
    spec.size = 16;
    spec.seed = 5;
    write_dataset(spec, dir / "d");
    CHECK(fs::exists(dir / "d" / "synth_000000.ppm"));
    CHECK(fs::exists(dir / "d" / "synth_000002.ppm"));
    const std::string manifest = read_bytes(dir / "d" / "manifest.txt");
    CHECK(manifest.find("seed = 5") != std::string::npos);
    CHECK(manifest.find("shape_kind = oriented_bar") != std::string::npos);
    const auto images = load_directory(dir / "d");
    REQUIRE(images.size() == 3);
    const auto expected = generate_synthetic(spec);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < images[k].data.size(); ++i)
            CHECK(std::abs(images[k].data[i] - expected[k].data[i]) <= 0.5 / 255.0 + 1e-12);
}
