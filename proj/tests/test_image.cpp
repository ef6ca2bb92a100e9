#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "freefix/image.hpp"
#include "freefix/rng.hpp"

using namespace freefix;
namespace fs = std::filesystem;

namespace {

AttributeImage random_image(Rng& rng, int w, int h, int c) {
    AttributeImage img(w, h, c);
    for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = float(rng.uniform());
    return img;
}

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

} // namespace

TEST_CASE("pfm round trip is bit exact for 1 and 3 channels") {
    Rng rng(3);
    for (int c : {1, 3}) {
        const AttributeImage img = random_image(rng, 13, 7, c);
        const auto path = temp_file("freefix_roundtrip.pfm");
        write_pfm(img, path.string());
        const AttributeImage back = read_pfm(path.string());
        REQUIRE(back.same_shape(img));
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.data()[i] == img.data()[i]);
        fs::remove(path);
    }
}

TEST_CASE("pfm header carries dimensions and little-endian scale") {
    const AttributeImage img(5, 4, 3, 0.5f);
    const auto path = temp_file("freefix_header.pfm");
    write_pfm(img, path.string());
    std::ifstream f(path, std::ios::binary);
    std::string type, dims, scale;
    std::getline(f, type);
    std::getline(f, dims);
    std::getline(f, scale);
    CHECK(type == "PF");
    CHECK(dims == "5 4");
    CHECK(std::stod(scale) < 0); // negative scale marks little-endian
    fs::remove(path);
}

TEST_CASE("read_pfm rejects garbage") {
    const auto path = temp_file("freefix_bad.pfm");
    std::ofstream(path) << "not a pfm";
    CHECK_THROWS(read_pfm(path.string()));
    fs::remove(path);
    CHECK_THROWS(read_pfm("/nonexistent/definitely_missing.pfm"));
}

TEST_CASE("png writer emits a valid signature and IHDR") {
    Rng rng(9);
    const AttributeImage img = random_image(rng, 8, 6, 3);
    const auto path = temp_file("freefix_out.png");
    write_png(img, path.string());
    std::ifstream f(path, std::ios::binary);
    unsigned char sig[8];
    f.read(reinterpret_cast<char*>(sig), 8);
    const unsigned char expect[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    for (int i = 0; i < 8; ++i) CHECK(sig[i] == expect[i]);
    char len_and_type[8];
    f.read(len_and_type, 8);
    CHECK(std::string(len_and_type + 4, 4) == "IHDR");
    fs::remove(path);
}

TEST_CASE("resize is identity at matching dimensions") {
    Rng rng(10);
    const AttributeImage img = random_image(rng, 12, 9, 3);
    const AttributeImage same = resize_image(img, 12, 9);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(same.data()[i] == img.data()[i]);
}

TEST_CASE("resize preserves constant images in both directions") {
    const AttributeImage img(16, 10, 1, 0.37f);
    for (auto [w, h] : {std::pair{8, 5}, std::pair{32, 20}, std::pair{7, 13}}) {
        const AttributeImage r = resize_image(img, w, h);
        REQUIRE(r.width() == w);
        REQUIRE(r.height() == h);
        for (std::size_t i = 0; i < r.size(); ++i)
            CHECK(r.data()[i] == doctest::Approx(0.37f).epsilon(1e-6));
    }
}

TEST_CASE("2x downsample area-averages quads") {
    AttributeImage img(4, 2, 1);
    const float v[8] = {0, 1, 0.5f, 0.5f, 1, 0, 0.25f, 0.75f};
    for (int i = 0; i < 8; ++i) img.data()[i] = v[i];
    const AttributeImage r = resize_image(img, 2, 1);
    CHECK(r.at(0, 0, 0) == doctest::Approx(0.5f));
    CHECK(r.at(1, 0, 0) == doctest::Approx(0.5f));
}

TEST_CASE("downsample then upsample stays near the mean for smooth content") {
    AttributeImage img(16, 16, 1);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) img.at(x, y, 0) = float(x) / 15.0f;
    const AttributeImage small = resize_image(img, 8, 8);
    const AttributeImage back = resize_image(small, 16, 16);
    double err = 0;
    for (std::size_t i = 0; i < img.size(); ++i)
        err += std::abs(double(back.data()[i]) - img.data()[i]);
    CHECK(err / double(img.size()) < 0.05);
}
