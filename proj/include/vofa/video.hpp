#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vofa/tensor.hpp"

namespace vofa {

struct VideoError : std::runtime_error {
    explicit VideoError(const std::string& what) : std::runtime_error(what) {}
};

// T x H x W x C uint8 frames, row-major, C == 3.
struct VideoClip {
    int t = 0;
    int h = 0;
    int w = 0;
    int c = 3;
    std::vector<uint8_t> pixels;
    std::string clip_id;

    VideoClip() = default;
    VideoClip(int t_, int h_, int w_) : t(t_), h(h_), w(w_) {
        pixels.assign(static_cast<size_t>(t) * h * w * c, 0);
    }

    size_t frame_bytes() const { return static_cast<size_t>(h) * w * c; }

    uint8_t& at(int f, int y, int x, int ch) {
        return pixels[((static_cast<size_t>(f) * h + y) * w + x) * c + ch];
    }
    uint8_t at(int f, int y, int x, int ch) const {
        return pixels[((static_cast<size_t>(f) * h + y) * w + x) * c + ch];
    }

    const uint8_t* frame(int f) const { return pixels.data() + static_cast<size_t>(f) * frame_bytes(); }
    uint8_t* frame(int f) { return pixels.data() + static_cast<size_t>(f) * frame_bytes(); }
};

inline std::vector<int> linear_frame_indices(int t, int n) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = static_cast<int>((static_cast<int64_t>(i) * t) / n);
    return idx;
}

// Picks n frames at floor(i*T/n); indices repeat when T < n.
inline VideoClip sample_frames_linear(const VideoClip& clip, int n) {
    if (clip.t < 1) throw VideoError("sample_frames_linear: empty clip");
    if (n < 1) throw VideoError("sample_frames_linear: n must be >= 1");
    VideoClip out(n, clip.h, clip.w);
    out.clip_id = clip.clip_id;
    auto idx = linear_frame_indices(clip.t, n);
    for (int i = 0; i < n; ++i)
        std::copy_n(clip.frame(idx[static_cast<size_t>(i)]), clip.frame_bytes(), out.frame(i));
    return out;
}

namespace detail {

// Bilinear sample with pixel-center alignment; exact copy when scale == 1.
inline void resize_frame_bilinear(const uint8_t* src, int sh, int sw, uint8_t* dst, int dh, int dw, int c) {
    const double sy = static_cast<double>(sh) / dh;
    const double sx = static_cast<double>(sw) / dw;
    for (int y = 0; y < dh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - y0;
        for (int x = 0; x < dw; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double v00 = src[(static_cast<size_t>(y0) * sw + x0) * c + ch];
                const double v01 = src[(static_cast<size_t>(y0) * sw + x1) * c + ch];
                const double v10 = src[(static_cast<size_t>(y1) * sw + x0) * c + ch];
                const double v11 = src[(static_cast<size_t>(y1) * sw + x1) * c + ch];
                const double v = v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx + v10 * wy * (1 - wx) +
                                 v11 * wy * wx;
                dst[(static_cast<size_t>(y) * dw + x) * c + ch] =
                    static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
}

}  // namespace detail

// Resizes so the shorter side equals target_px (aspect preserved, bilinear),
// then center-crops to a target_px square.
inline VideoClip resize_shorter_side(const VideoClip& clip, int target_px) {
    if (clip.t < 1) throw VideoError("resize_shorter_side: empty clip");
    if (target_px <= 0) throw VideoError("resize_shorter_side: target must be positive");
    const int shorter = std::min(clip.h, clip.w);
    const int nh = clip.h == shorter
                       ? target_px
                       : static_cast<int>(std::lround(static_cast<double>(clip.h) * target_px / shorter));
    const int nw = clip.w == shorter
                       ? target_px
                       : static_cast<int>(std::lround(static_cast<double>(clip.w) * target_px / shorter));

    VideoClip out(clip.t, target_px, target_px);
    out.clip_id = clip.clip_id;
    const int oy = (nh - target_px) / 2;
    const int ox = (nw - target_px) / 2;
    std::vector<uint8_t> resized(static_cast<size_t>(nh) * nw * clip.c);
    for (int f = 0; f < clip.t; ++f) {
        if (nh == clip.h && nw == clip.w) {
            std::copy_n(clip.frame(f), clip.frame_bytes(), resized.data());
        } else {
            detail::resize_frame_bilinear(clip.frame(f), clip.h, clip.w, resized.data(), nh, nw, clip.c);
        }
        for (int y = 0; y < target_px; ++y)
            std::copy_n(resized.data() + ((static_cast<size_t>(y) + oy) * nw + ox) * clip.c,
                        static_cast<size_t>(target_px) * clip.c,
                        out.frame(f) + static_cast<size_t>(y) * target_px * clip.c);
    }
    return out;
}

// Per-frame patch tokens, linearly projected to the model width.
template <class R>
struct PatchGrid {
    int t = 0;
    int p = 0;  // patches per frame
    int d = 0;
    int patch_size = 0;
    std::vector<R> tokens;  // t * p * d

    R* frame_tokens(int f) { return tokens.data() + static_cast<size_t>(f) * p * d; }
    const R* frame_tokens(int f) const { return tokens.data() + static_cast<size_t>(f) * p * d; }
};

inline int patches_per_frame(int h, int w, int patch_size) {
    if (patch_size <= 0 || h % patch_size != 0 || w % patch_size != 0)
        throw VideoError("patchify: frame " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(patch_size));
    return (h / patch_size) * (w / patch_size);
}

// Flattened pixels of one frame as a [P, patch*patch*3] row-major matrix,
// scaled to [-0.5, 0.5]. Patch order is row-major over the patch grid, pixel
// order (y, x, channel) within a patch.
template <class R>
std::vector<R> patch_pixels(const VideoClip& clip, int frame, int patch_size) {
    const int p = patches_per_frame(clip.h, clip.w, patch_size);
    const int cols = patch_size * patch_size * clip.c;
    const int px = clip.w / patch_size;
    std::vector<R> out(static_cast<size_t>(p) * cols);
    for (int pi = 0; pi < p; ++pi) {
        const int gy = (pi / px) * patch_size;
        const int gx = (pi % px) * patch_size;
        R* row = out.data() + static_cast<size_t>(pi) * cols;
        int k = 0;
        for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x)
                for (int ch = 0; ch < clip.c; ++ch)
                    row[k++] = R(clip.at(frame, gy + y, gx + x, ch)) / R(255) - R(0.5);
    }
    return out;
}

// Applies `projection` ([patch*patch*3, D] weights, [D] bias) to every patch
// of every frame, preserving frame order.
template <class R>
PatchGrid<R> patchify(const VideoClip& clip, int patch_size, const Tensor<R>& weight, const Tensor<R>& bias) {
    const int p = patches_per_frame(clip.h, clip.w, patch_size);
    const int cols = patch_size * patch_size * clip.c;
    if (weight.rank() != 2 || weight.dim(0) != cols)
        throw VideoError("patchify: projection expects " + std::to_string(cols) + " inputs, got " +
                         shape_str(weight.shape));
    const int d = weight.dim(1);
    PatchGrid<R> grid;
    grid.t = clip.t;
    grid.p = p;
    grid.d = d;
    grid.patch_size = patch_size;
    grid.tokens.assign(static_cast<size_t>(clip.t) * p * d, R(0));
    for (int f = 0; f < clip.t; ++f) {
        auto pix = patch_pixels<R>(clip, f, patch_size);
        detail::matmul_acc(pix.data(), weight.ptr(), grid.frame_tokens(f), p, cols, d);
        if (bias.defined())
            for (int pi = 0; pi < p; ++pi)
                for (int j = 0; j < d; ++j) grid.frame_tokens(f)[static_cast<size_t>(pi) * d + j] += bias(j);
    }
    return grid;
}

}  // namespace vofa
