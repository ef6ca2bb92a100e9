#include "freefix/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <zlib.h>

namespace freefix {

AttributeImage::AttributeImage(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels),
      data_(std::size_t(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels < 0)
        throw std::invalid_argument("AttributeImage: negative dimension");
}

bool AttributeImage::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void AttributeImage::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

// ---- PFM ----

void write_pfm(const AttributeImage& img, const std::string& path) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("write_pfm: 1 or 3 channels required");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_pfm: cannot open " + path);
    f << (img.channels() == 1 ? "Pf" : "PF") << "\n"
      << img.width() << " " << img.height() << "\n"
      << "-1.0\n";
    // PFM stores rows bottom-to-top
    for (int y = img.height() - 1; y >= 0; --y) {
        const float* row = img.data() + std::size_t(y) * img.width() * img.channels();
        f.write(reinterpret_cast<const char*>(row),
                std::streamsize(sizeof(float)) * img.width() * img.channels());
    }
    if (!f) throw std::runtime_error("write_pfm: write failed for " + path);
}

AttributeImage read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_pfm: cannot open " + path);
    std::string magic;
    f >> magic;
    int channels;
    if (magic == "Pf") channels = 1;
    else if (magic == "PF") channels = 3;
    else throw std::runtime_error("read_pfm: bad magic in " + path);
    int w, h;
    double scale;
    f >> w >> h >> scale;
    if (!f || w <= 0 || h <= 0) throw std::runtime_error("read_pfm: bad header in " + path);
    if (scale >= 0) throw std::runtime_error("read_pfm: big-endian PFM unsupported");
    f.get(); // single whitespace after scale
    AttributeImage img(w, h, channels);
    for (int y = h - 1; y >= 0; --y) {
        float* row = img.data() + std::size_t(y) * w * channels;
        f.read(reinterpret_cast<char*>(row), std::streamsize(sizeof(float)) * w * channels);
    }
    if (!f) throw std::runtime_error("read_pfm: truncated data in " + path);
    return img;
}

// ---- PNG ----

namespace {

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n, std::uint32_t crc = 0xffffffffu) {
    static std::uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc;
}

void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(std::uint8_t(x >> 24));
    v.push_back(std::uint8_t(x >> 16));
    v.push_back(std::uint8_t(x >> 8));
    v.push_back(std::uint8_t(x));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> buf;
    put_be32(buf, std::uint32_t(payload.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), payload.begin(), payload.end());
    const std::uint32_t crc = ~crc32_of(buf.data() + 4, buf.size() - 4);
    put_be32(buf, crc);
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

} // namespace

void write_png(const AttributeImage& img, const std::string& path) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("write_png: 1 or 3 channels required");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_png: cannot open " + path);

    const int w = img.width(), h = img.height(), c = img.channels();
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(h) * (1 + std::size_t(w) * c));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0); // filter type none
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) {
                const float v = std::min(1.0f, std::max(0.0f, img.at(x, y, k)));
                raw.push_back(std::uint8_t(std::lround(v * 255.0f)));
            }
    }

    uLongf comp_len = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: deflate failed");
    comp.resize(comp_len);

    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, std::uint32_t(w));
    put_be32(ihdr, std::uint32_t(h));
    ihdr.push_back(8);                       // bit depth
    ihdr.push_back(c == 1 ? 0 : 2);          // grayscale / truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr);
    write_chunk(f, "IDAT", comp);
    write_chunk(f, "IEND", {});
    if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

// ---- resize ----

AttributeImage resize_image(const AttributeImage& img, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1) throw std::invalid_argument("resize_image: bad dims");
    if (new_w == img.width() && new_h == img.height()) return img;

    const int w = img.width(), h = img.height(), c = img.channels();
    AttributeImage out(new_w, new_h, c);

    if (new_w >= w && new_h >= h) {
        // bilinear upsample, edge-clamped
        for (int y = 0; y < new_h; ++y) {
            const double sy = (double(y) + 0.5) * h / new_h - 0.5;
            const int y0 = std::clamp(int(std::floor(sy)), 0, h - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fy = std::clamp(sy - y0, 0.0, 1.0);
            for (int x = 0; x < new_w; ++x) {
                const double sx = (double(x) + 0.5) * w / new_w - 0.5;
                const int x0 = std::clamp(int(std::floor(sx)), 0, w - 1);
                const int x1 = std::min(x0 + 1, w - 1);
                const double fx = std::clamp(sx - x0, 0.0, 1.0);
                for (int k = 0; k < c; ++k) {
                    const double v =
                        (1 - fy) * ((1 - fx) * img.at(x0, y0, k) + fx * img.at(x1, y0, k)) +
                        fy * ((1 - fx) * img.at(x0, y1, k) + fx * img.at(x1, y1, k));
                    out.at(x, y, k) = float(v);
                }
            }
        }
        return out;
    }

    // area average with fractional source boxes
    const double sx = double(w) / new_w, sy = double(h) / new_h;
    for (int y = 0; y < new_h; ++y) {
        const double ty0 = y * sy, ty1 = (y + 1) * sy;
        for (int x = 0; x < new_w; ++x) {
            const double tx0 = x * sx, tx1 = (x + 1) * sx;
            for (int k = 0; k < c; ++k) {
                double acc = 0.0, area = 0.0;
                for (int iy = int(std::floor(ty0)); iy < int(std::ceil(ty1)); ++iy) {
                    const double oy = std::min(ty1, double(iy + 1)) - std::max(ty0, double(iy));
                    if (oy <= 0) continue;
                    for (int ix = int(std::floor(tx0)); ix < int(std::ceil(tx1)); ++ix) {
                        const double ox = std::min(tx1, double(ix + 1)) - std::max(tx0, double(ix));
                        if (ox <= 0) continue;
                        acc += ox * oy * img.at(std::min(ix, w - 1), std::min(iy, h - 1), k);
                        area += ox * oy;
                    }
                }
                out.at(x, y, k) = float(acc / area);
            }
        }
    }
    return out;
}

} // namespace freefix
