#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

#include "xbdkit/error.hpp"

namespace xbdkit::raster {

// Every RGB channel at or below this value counts as black. Boundary is
// inclusive: (10,10,10) is black, (11,0,0) is not.
inline constexpr std::uint8_t kBlackMax = 10;

// Interleaved 8-bit RGBA, row-major. Loading forces the alpha plane to 255;
// alpha 0 appears only on pad pixels introduced by crop().
struct RgbaRaster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // width * height * 4 bytes

    RgbaRaster() = default;
    RgbaRaster(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b, std::uint8_t a = 255)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 4) {
        for (std::size_t i = 0; i < data.size(); i += 4) {
            data[i] = r;
            data[i + 1] = g;
            data[i + 2] = b;
            data[i + 3] = a;
        }
    }

    std::uint8_t* pixel(int x, int y) {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 4;
    }
    const std::uint8_t* pixel(int x, int y) const {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 4;
    }

    void set_pixel(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b, std::uint8_t a = 255) {
        std::uint8_t* p = pixel(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b;
        p[3] = a;
    }

    bool operator==(const RgbaRaster&) const = default;
};

// Square crop window. x1/y1 may be negative or exceed the source bounds; the
// crop fills such pixels with transparent black.
struct CropWindow {
    int x1 = 0;
    int y1 = 0;
    int size = 0;

    bool operator==(const CropWindow&) const = default;
};

inline bool is_black(const std::uint8_t* px) {
    return px[0] <= kBlackMax && px[1] <= kBlackMax && px[2] <= kBlackMax;
}

inline bool is_empty_pixel(const std::uint8_t* px) {
    return is_black(px) || px[3] == 0;
}

// Extracts window.size^2 pixels. Pixels outside the source raster become
// (0,0,0,0); in-bounds rows are copied byte for byte.
inline RgbaRaster crop(const RgbaRaster& src, const CropWindow& window) {
    RgbaRaster out;
    out.width = window.size;
    out.height = window.size;
    out.data.assign(static_cast<std::size_t>(window.size) * window.size * 4, 0);

    const int src_x0 = std::max(window.x1, 0);
    const int src_x1 = std::min(window.x1 + window.size, src.width);
    const int src_y0 = std::max(window.y1, 0);
    const int src_y1 = std::min(window.y1 + window.size, src.height);
    if (src_x0 >= src_x1 || src_y0 >= src_y1) return out;

    const std::size_t row_bytes = static_cast<std::size_t>(src_x1 - src_x0) * 4;
    for (int y = src_y0; y < src_y1; ++y) {
        const std::uint8_t* s = src.pixel(src_x0, y);
        std::uint8_t* d = out.pixel(src_x0 - window.x1, y - window.y1);
        std::memcpy(d, s, row_bytes);
    }
    return out;
}

// Exact count of empty pixels: black (all RGB channels <= kBlackMax) or
// fully transparent (alpha == 0).
inline std::uint64_t empty_pixel_count(const RgbaRaster& patch) {
    std::uint64_t count = 0;
    const std::uint8_t* p = patch.data.data();
    const std::uint8_t* end = p + patch.data.size();
    for (; p != end; p += 4) {
        const bool black = p[0] <= kBlackMax && p[1] <= kBlackMax && p[2] <= kBlackMax;
        count += (black || p[3] == 0) ? 1u : 0u;
    }
    return count;
}

inline double empty_ratio(const RgbaRaster& patch) {
    const std::uint64_t total = static_cast<std::uint64_t>(patch.width) * patch.height;
    return static_cast<double>(empty_pixel_count(patch)) / static_cast<double>(total);
}

// Summed-area table over the empty-pixel mask of a raster, for O(1) window
// counts. Out-of-bounds pixels of a window are pad and always count as empty.
class BlackIntegral {
  public:
    explicit BlackIntegral(const RgbaRaster& src) : width_(src.width), height_(src.height) {
        sums_.assign(static_cast<std::size_t>(width_ + 1) * (height_ + 1), 0);
        for (int y = 0; y < height_; ++y) {
            std::uint64_t row = 0;
            for (int x = 0; x < width_; ++x) {
                row += is_empty_pixel(src.pixel(x, y)) ? 1u : 0u;
                at(x + 1, y + 1) = at(x + 1, y) + row;
            }
        }
    }

    // Empty-pixel count of crop(src, window), without materializing the crop.
    std::uint64_t window_empty_count(const CropWindow& window) const {
        const int x0 = std::clamp(window.x1, 0, width_);
        const int x1 = std::clamp(window.x1 + window.size, 0, width_);
        const int y0 = std::clamp(window.y1, 0, height_);
        const int y1 = std::clamp(window.y1 + window.size, 0, height_);
        const std::uint64_t in_bounds =
            static_cast<std::uint64_t>(x1 - x0) * static_cast<std::uint64_t>(y1 - y0);
        const std::uint64_t black =
            at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
        const std::uint64_t total = static_cast<std::uint64_t>(window.size) * window.size;
        return black + (total - in_bounds);
    }

    double window_empty_ratio(const CropWindow& window) const {
        const std::uint64_t total = static_cast<std::uint64_t>(window.size) * window.size;
        return static_cast<double>(window_empty_count(window)) / static_cast<double>(total);
    }

  private:
    std::uint64_t& at(int x, int y) {
        return sums_[static_cast<std::size_t>(y) * (width_ + 1) + x];
    }
    std::uint64_t at(int x, int y) const {
        return sums_[static_cast<std::size_t>(y) * (width_ + 1) + x];
    }

    int width_;
    int height_;
    std::vector<std::uint64_t> sums_;
};

}  // namespace xbdkit::raster
