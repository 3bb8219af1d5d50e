// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Small 8-bit raster type with a self-contained PNG codec (zlib for the
// deflate stream), plus the crop / resize / planar-conversion operations the
// pipeline needs. The codec covers non-interlaced 8-bit grayscale, RGB and
// RGBA files, which is sufficient for the synthetic corpus and for typical
// converted photo collections.

#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "emoscene/core.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 (gray) or 3 (RGB)
    std::vector<std::uint8_t> pixels;  // row-major, interleaved

    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                   static_cast<std::size_t>(channels) +
               static_cast<std::size_t>(c);
    }
    std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }
    std::uint8_t& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
    bool operator==(const Image&) const = default;
};

inline Image make_image(int width, int height, int channels, std::uint8_t fill = 0) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3))
        throw Error("make_image: invalid shape " + std::to_string(width) + "x" + std::to_string(height) +
                    "x" + std::to_string(channels));
    Image img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.pixels.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * static_cast<std::size_t>(channels), fill);
    return img;
}

/// Paint an axis-aligned rectangle, clipped against the image bounds.
inline void fill_rect(Image& img, int x, int y, int w, int h, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b) {
    const int x0 = std::max(0, x), y0 = std::max(0, y);
    const int x1 = std::min(img.width, x + w), y1 = std::min(img.height, y + h);
    for (int yy = y0; yy < y1; ++yy)
        for (int xx = x0; xx < x1; ++xx) {
            if (img.channels == 1) {
                img.at(xx, yy, 0) = r;
            } else {
                img.at(xx, yy, 0) = r;
                img.at(xx, yy, 1) = g;
                img.at(xx, yy, 2) = b;
            }
        }
}

// ---------------------------------------------------------------------------
// PNG codec

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

inline int paeth_predict(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

constexpr std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

} // namespace detail

/// Serialize as a PNG byte stream. `filter_type` selects the per-scanline
/// filter (0..4); 0 is the default and fastest, the others exist mainly so
/// tests can exercise every decoder path.
inline std::vector<std::uint8_t> encode_png(const Image& img, int filter_type = 0) {
    if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3))
        throw Error("encode_png: invalid image shape");
    if (filter_type < 0 || filter_type > 4) throw Error("encode_png: filter type must be 0..4");
    const int bpp = img.channels;
    const std::size_t row_bytes = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(bpp);

    std::vector<std::uint8_t> raw;
    raw.reserve((row_bytes + 1) * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(static_cast<std::uint8_t>(filter_type));
        const std::uint8_t* cur = img.pixels.data() + static_cast<std::size_t>(y) * row_bytes;
        const std::uint8_t* above = y > 0 ? img.pixels.data() + static_cast<std::size_t>(y - 1) * row_bytes : nullptr;
        for (std::size_t i = 0; i < row_bytes; ++i) {
            const int x = cur[i];
            const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - static_cast<std::size_t>(bpp)] : 0;
            const int b = above ? above[i] : 0;
            const int c = (above && i >= static_cast<std::size_t>(bpp)) ? above[i - static_cast<std::size_t>(bpp)] : 0;
            int out = x;
            switch (filter_type) {
                case 0: out = x; break;
                case 1: out = x - a; break;
                case 2: out = x - b; break;
                case 3: out = x - (a + b) / 2; break;
                case 4: out = x - detail::paeth_predict(a, b, c); break;
            }
            raw.push_back(static_cast<std::uint8_t>(out & 0xff));
        }
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("encode_png: deflate failed");
    comp.resize(comp_len);

    std::vector<std::uint8_t> out(detail::kPngSignature, detail::kPngSignature + 8);
    std::vector<std::uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                                // bit depth
    ihdr.push_back(img.channels == 1 ? std::uint8_t{0} : std::uint8_t{2});  // color type
    ihdr.push_back(0);                                                // compression
    ihdr.push_back(0);                                                // filter method
    ihdr.push_back(0);                                                // interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", comp);
    detail::put_chunk(out, "IEND", {});
    return out;
}

/// Parse a PNG byte stream. Supports 8-bit grayscale / RGB / RGBA without
/// interlacing; RGBA decodes to RGB with the alpha channel dropped.
inline Image decode_png(const std::uint8_t* data, std::size_t len) {
    if (len < 8 || std::memcmp(data, detail::kPngSignature, 8) != 0)
        throw Error("decode_png: not a PNG stream");
    std::size_t pos = 8;
    int width = 0, height = 0, file_channels = 0;
    bool seen_ihdr = false;
    std::vector<std::uint8_t> idat;
    while (pos + 8 <= len) {
        const std::uint32_t chunk_len = detail::get_u32_be(data + pos);
        if (pos + 12 + chunk_len > len) throw Error("decode_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(data + pos + 4);
        const std::uint8_t* body = data + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (chunk_len != 13) throw Error("decode_png: bad IHDR");
            width = static_cast<int>(detail::get_u32_be(body));
            height = static_cast<int>(detail::get_u32_be(body + 4));
            const int bit_depth = body[8], color_type = body[9], interlace = body[12];
            if (bit_depth != 8) throw Error("decode_png: unsupported bit depth " + std::to_string(bit_depth));
            if (interlace != 0) throw Error("decode_png: interlaced files are unsupported");
            switch (color_type) {
                case 0: file_channels = 1; break;
                case 2: file_channels = 3; break;
                case 6: file_channels = 4; break;
                default: throw Error("decode_png: unsupported color type " + std::to_string(color_type));
            }
            if (width <= 0 || height <= 0) throw Error("decode_png: bad dimensions");
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), body, body + chunk_len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        // Ancillary chunks are skipped.
        pos += 12 + chunk_len;
    }
    if (!seen_ihdr) throw Error("decode_png: missing IHDR");
    if (idat.empty()) throw Error("decode_png: missing IDAT");

    const std::size_t row_bytes = static_cast<std::size_t>(width) * static_cast<std::size_t>(file_channels);
    std::vector<std::uint8_t> raw((row_bytes + 1) * static_cast<std::size_t>(height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw Error("decode_png: inflate failed");

    // Undo per-scanline filtering in place (over a copy without filter bytes).
    std::vector<std::uint8_t> flat(row_bytes * static_cast<std::size_t>(height));
    const int bpp = file_channels;
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
        const int filter = src[0];
        std::uint8_t* cur = flat.data() + static_cast<std::size_t>(y) * row_bytes;
        const std::uint8_t* above = y > 0 ? flat.data() + static_cast<std::size_t>(y - 1) * row_bytes : nullptr;
        for (std::size_t i = 0; i < row_bytes; ++i) {
            const int x = src[1 + i];
            const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - static_cast<std::size_t>(bpp)] : 0;
            const int b = above ? above[i] : 0;
            const int c = (above && i >= static_cast<std::size_t>(bpp)) ? above[i - static_cast<std::size_t>(bpp)] : 0;
            int v = 0;
            switch (filter) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + detail::paeth_predict(a, b, c); break;
                default: throw Error("decode_png: bad filter byte " + std::to_string(filter));
            }
            cur[i] = static_cast<std::uint8_t>(v & 0xff);
        }
    }

    Image img;
    img.width = width;
    img.height = height;
    if (file_channels == 4) {
        img.channels = 3;
        img.pixels.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
        for (std::size_t p = 0; p < static_cast<std::size_t>(width) * static_cast<std::size_t>(height); ++p) {
            img.pixels[p * 3 + 0] = flat[p * 4 + 0];
            img.pixels[p * 3 + 1] = flat[p * 4 + 1];
            img.pixels[p * 3 + 2] = flat[p * 4 + 2];
        }
    } else {
        img.channels = file_channels;
        img.pixels = std::move(flat);
    }
    return img;
}

inline void save_image(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_image: cannot open '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("save_image: write failed for '" + path.string() + "'");
}

inline Image load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_image: cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_png(bytes.data(), bytes.size());
    } catch (const Error& e) {
        throw Error("load_image: '" + path.string() + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Geometry

/// Extract the part of `box` that intersects the image. Throws when the
/// intersection is empty.
inline Image crop(const Image& img, const BBox& box) {
    const int x0 = std::max(0, box.x), y0 = std::max(0, box.y);
    const int x1 = std::min(img.width, box.x + box.width);
    const int y1 = std::min(img.height, box.y + box.height);
    if (x1 <= x0 || y1 <= y0)
        throw Error("crop: box [" + std::to_string(box.x) + "," + std::to_string(box.y) + "," +
                    std::to_string(box.width) + "," + std::to_string(box.height) +
                    "] does not intersect a " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " image");
    Image out = make_image(x1 - x0, y1 - y0, img.channels);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(x - x0, y - y0, c) = img.at(x, y, c);
    return out;
}

/// Bilinear resampling with the pixel-center (half-pixel offset) mapping.
inline Image resize_bilinear(const Image& img, int new_width, int new_height) {
    if (new_width <= 0 || new_height <= 0) throw Error("resize_bilinear: invalid target size");
    if (new_width == img.width && new_height == img.height) return img;
    Image out = make_image(new_width, new_height, img.channels);
    const double sx = static_cast<double>(img.width) / new_width;
    const double sy = static_cast<double>(img.height) / new_height;
    for (int y = 0; y < new_height; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        const int y1 = std::min(img.height - 1, std::max(0, y0 + 1));
        y0 = std::min(img.height - 1, std::max(0, y0));
        for (int x = 0; x < new_width; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            const int x1 = std::min(img.width - 1, std::max(0, x0 + 1));
            x0 = std::min(img.width - 1, std::max(0, x0));
            for (int c = 0; c < img.channels; ++c) {
                const double top = (1.0 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
                const double bot = (1.0 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
                const double v = (1.0 - wy) * top + wy * bot;
                out.at(x, y, c) = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
            }
        }
    }
    return out;
}

/// Planar (channel-major) doubles in [0, 1]; grayscale inputs are replicated
/// to the requested channel count.
inline std::vector<double> to_planar(const Image& img, int channels = 3) {
    if (channels != 1 && channels != 3) throw Error("to_planar: channels must be 1 or 3");
    std::vector<double> out(static_cast<std::size_t>(channels) * static_cast<std::size_t>(img.width) *
                            static_cast<std::size_t>(img.height));
    const std::size_t plane = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(img.width) + static_cast<std::size_t>(x);
            for (int c = 0; c < channels; ++c) {
                const int src_c = img.channels == 1 ? 0 : std::min(c, img.channels - 1);
                out[static_cast<std::size_t>(c) * plane + p] = img.at(x, y, src_c) / 255.0;
            }
        }
    return out;
}

} // namespace emoscene
