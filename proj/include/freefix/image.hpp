#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace freefix {

// H x W x C row-major float image. Houses rendered color/depth/opacity,
// confidence maps and diffusion latents alike.
class AttributeImage {
public:
    AttributeImage() = default;
    AttributeImage(int width, int height, int channels, float fill = 0.0f);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    float& at(int x, int y, int c) {
        return data_[(std::size_t(y) * width_ + x) * channels_ + c];
    }
    float at(int x, int y, int c) const {
        return data_[(std::size_t(y) * width_ + x) * channels_ + c];
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    bool same_shape(const AttributeImage& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    bool all_finite() const;
    void fill(float v);

private:
    int width_ = 0, height_ = 0, channels_ = 0;
    std::vector<float> data_;
};

// Portable float map, little-endian, scale -1.0. 1 channel -> "Pf",
// 3 channels -> "PF". Bit-exact fixture format.
void write_pfm(const AttributeImage& img, const std::string& path);
AttributeImage read_pfm(const std::string& path);

// 8-bit PNG for viewing (values clamped to [0,1]); 1 or 3 channels.
void write_png(const AttributeImage& img, const std::string& path);

// Area-average downsample / bilinear upsample; identity when dims match.
AttributeImage resize_image(const AttributeImage& img, int new_w, int new_h);

} // namespace freefix
