#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

#include "rng.hpp"

namespace zoomvla {

/// Dense row-major RGB image with 8-bit channels.
struct Image {
    int w = 0, h = 0;
    std::vector<uint8_t> data; // h * w * 3

    Image() = default;
    Image(int w_, int h_) : w(w_), h(h_), data(static_cast<size_t>(w_) * h_ * 3, 0) {}

    uint8_t& at(int x, int y, int c) {
        return data[(static_cast<size_t>(y) * w + x) * 3 + c];
    }
    uint8_t at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * w + x) * 3 + c];
    }

    void set_pixel(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        at(x, y, 0) = r;
        at(x, y, 1) = g;
        at(x, y, 2) = b;
    }

    void fill_rect(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                set_pixel(x, y, r, g, b);
            }
        }
    }

    bool operator==(const Image&) const = default;

    uint64_t content_hash() const {
        uint64_t h64 = fnv1a64_u64(static_cast<uint64_t>(w));
        h64 = fnv1a64_u64(static_cast<uint64_t>(h), h64);
        for (uint8_t b : data) {
            h64 ^= b;
            h64 *= 1099511628211ull;
        }
        return h64;
    }
};

/// Average-pools the image into a grid x grid feature map, channels last,
/// values scaled to [0, 1]. This is the policy's coarse view; one pooled cell
/// spans pool x pool source pixels, so single-pixel markings vanish into the
/// average.
inline std::vector<double> coarse_pool(const Image& img, int grid);

/// Per-channel mean-centering plus a fixed contrast gain. The shared
/// background level otherwise dominates every feature and starves the
/// encoder's gradient signal.
inline std::vector<double> center_features(std::vector<double> f, int channels = 3,
                                           double gain = 4.0) {
    double mean[4] = {0.0, 0.0, 0.0, 0.0};
    const size_t n = f.size() / static_cast<size_t>(channels);
    for (size_t i = 0; i < f.size(); ++i) {
        mean[i % static_cast<size_t>(channels)] += f[i];
    }
    for (int c = 0; c < channels; ++c) {
        mean[static_cast<size_t>(c)] /= static_cast<double>(n);
    }
    for (size_t i = 0; i < f.size(); ++i) {
        f[i] = (f[i] - mean[i % static_cast<size_t>(channels)]) * gain;
    }
    return f;
}

/// The policy's observation features: centered coarse pooling.
inline std::vector<double> obs_features(const Image& img, int grid) {
    return center_features(coarse_pool(img, grid));
}

inline std::vector<double> coarse_pool(const Image& img, int grid) {
    assert(img.w % grid == 0 && img.h % grid == 0);
    const int pool_w = img.w / grid;
    const int pool_h = img.h / grid;
    std::vector<double> out(static_cast<size_t>(grid) * grid * 3, 0.0);
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            double acc[3] = {0.0, 0.0, 0.0};
            for (int y = gy * pool_h; y < (gy + 1) * pool_h; ++y) {
                for (int x = gx * pool_w; x < (gx + 1) * pool_w; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        acc[c] += img.at(x, y, c);
                    }
                }
            }
            const double norm = 255.0 * pool_w * pool_h;
            for (int c = 0; c < 3; ++c) {
                out[(static_cast<size_t>(gy) * grid + gx) * 3 + c] = acc[c] / norm;
            }
        }
    }
    return out;
}

} // namespace zoomvla
