#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vofa/video.hpp"

namespace vofa {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

inline uint32_t get_u32_le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32_be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32_be(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(crc32(0L, nullptr, 0), out.data() + start, static_cast<uInt>(4 + data.size()));
    put_u32_be(out, static_cast<uint32_t>(crc));
}

}  // namespace detail

// ---- PNG (8-bit, non-interlaced; writes RGB, reads gray/RGB/RGBA) ----

inline std::vector<uint8_t> encode_png_rgb(const uint8_t* rgb, int h, int w) {
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<uint8_t> out(sig, sig + 8);

    std::vector<uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<uint32_t>(w));
    detail::put_u32_be(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    detail::png_chunk(out, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * 3));
    for (int y = 0; y < h; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (1 + static_cast<size_t>(w) * 3);
        row[0] = 0;
        std::memcpy(row + 1, rgb + static_cast<size_t>(y) * w * 3, static_cast<size_t>(w) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed");
    compressed.resize(bound);
    detail::png_chunk(out, "IDAT", compressed);
    detail::png_chunk(out, "IEND", {});
    return out;
}

struct DecodedImage {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> rgb;
};

inline DecodedImage decode_png(const std::vector<uint8_t>& bytes, const std::string& name = "png") {
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || !std::equal(sig, sig + 8, bytes.data())) throw IoError(name + ": not a PNG file");

    int w = 0, h = 0, color = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = detail::get_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw IoError(name + ": truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = static_cast<int>(detail::get_u32_be(data));
            h = static_cast<int>(detail::get_u32_be(data + 4));
            const int depth = data[8];
            color = data[9];
            if (depth != 8) throw IoError(name + ": only 8-bit PNGs supported");
            if (color != 0 && color != 2 && color != 6)
                throw IoError(name + ": unsupported color type " + std::to_string(color));
            if (data[12] != 0) throw IoError(name + ": interlaced PNGs not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0 || color < 0) throw IoError(name + ": missing IHDR");

    const int bpp = color == 0 ? 1 : (color == 2 ? 3 : 4);
    const size_t stride = static_cast<size_t>(w) * bpp;
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError(name + ": inflate failed");

    // undo per-scanline filters
    std::vector<uint8_t> img(static_cast<size_t>(h) * stride);
    for (int y = 0; y < h; ++y) {
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const uint8_t filter = src[0];
        uint8_t* cur = img.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? img.data() + static_cast<size_t>(y - 1) * stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
            int v = src[1 + i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw IoError(name + ": bad filter " + std::to_string(filter));
            }
            cur[i] = static_cast<uint8_t>(v & 0xff);
        }
    }

    DecodedImage out;
    out.h = h;
    out.w = w;
    out.rgb.resize(static_cast<size_t>(h) * w * 3);
    for (size_t px = 0; px < static_cast<size_t>(h) * w; ++px) {
        if (bpp == 1) {
            out.rgb[px * 3] = out.rgb[px * 3 + 1] = out.rgb[px * 3 + 2] = img[px];
        } else {
            out.rgb[px * 3] = img[px * bpp];
            out.rgb[px * 3 + 1] = img[px * bpp + 1];
            out.rgb[px * 3 + 2] = img[px * bpp + 2];
        }
    }
    return out;
}

// ---- VOFR: magic "VOFR", u32le T,H,W,C, then T*H*W*C bytes row-major ----

inline std::vector<uint8_t> encode_vofr(const VideoClip& clip) {
    std::vector<uint8_t> out = {'V', 'O', 'F', 'R'};
    detail::put_u32_le(out, static_cast<uint32_t>(clip.t));
    detail::put_u32_le(out, static_cast<uint32_t>(clip.h));
    detail::put_u32_le(out, static_cast<uint32_t>(clip.w));
    detail::put_u32_le(out, static_cast<uint32_t>(clip.c));
    out.insert(out.end(), clip.pixels.begin(), clip.pixels.end());
    return out;
}

inline VideoClip decode_vofr(const std::vector<uint8_t>& bytes, const std::string& name = "vofr") {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), "VOFR", 4) != 0)
        throw IoError(name + ": not a VOFR file");
    VideoClip clip;
    clip.t = static_cast<int>(detail::get_u32_le(bytes.data() + 4));
    clip.h = static_cast<int>(detail::get_u32_le(bytes.data() + 8));
    clip.w = static_cast<int>(detail::get_u32_le(bytes.data() + 12));
    clip.c = static_cast<int>(detail::get_u32_le(bytes.data() + 16));
    if (clip.c != 3) throw IoError(name + ": expected 3 channels, got " + std::to_string(clip.c));
    const size_t expect = static_cast<size_t>(clip.t) * clip.h * clip.w * clip.c;
    if (bytes.size() != 20 + expect) throw IoError(name + ": payload size mismatch");
    clip.pixels.assign(bytes.begin() + 20, bytes.end());
    return clip;
}

// ---- clip storage: a .vofr file or a directory of numbered PNG frames ----

inline void write_clip_vofr(const std::filesystem::path& path, const VideoClip& clip) {
    detail::write_file_bytes(path, encode_vofr(clip));
}

inline void write_clip_png_dir(const std::filesystem::path& dir, const VideoClip& clip) {
    std::filesystem::create_directories(dir);
    for (int f = 0; f < clip.t; ++f) {
        char name[16];
        std::snprintf(name, sizeof(name), "%06d.png", f);
        detail::write_file_bytes(dir / name, encode_png_rgb(clip.frame(f), clip.h, clip.w));
    }
}

inline VideoClip load_clip(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) {
        std::vector<fs::path> frames;
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".png") frames.push_back(e.path());
        if (frames.empty()) throw IoError("no PNG frames in " + path.string());
        std::sort(frames.begin(), frames.end());
        VideoClip clip;
        for (size_t i = 0; i < frames.size(); ++i) {
            auto img = decode_png(detail::read_file_bytes(frames[i]), frames[i].string());
            if (i == 0) {
                clip = VideoClip(static_cast<int>(frames.size()), img.h, img.w);
            } else if (img.h != clip.h || img.w != clip.w) {
                throw IoError("frame size mismatch in " + path.string());
            }
            std::copy(img.rgb.begin(), img.rgb.end(), clip.frame(static_cast<int>(i)));
        }
        return clip;
    }
    if (!fs::exists(path)) throw IoError("no such clip: " + path.string());
    return decode_vofr(detail::read_file_bytes(path), path.string());
}

}  // namespace vofa
