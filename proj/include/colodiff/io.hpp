#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "colodiff/error.hpp"
#include "colodiff/tensor.hpp"

// On-disk formats: CDT1 (magic, u32 LE rank, u32 LE extents, row-major f32
// LE payload) for tensors, binary P6 PPM for frames. Writers stream through
// ofstream; readers validate every header field before trusting sizes.
namespace colodiff::io {

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    const std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xff),
                                         static_cast<unsigned char>((v >> 8) & 0xff),
                                         static_cast<unsigned char>((v >> 16) & 0xff),
                                         static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline uint32_t get_u32(std::istream& is, const std::string& path) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4))
        throw NumericError("truncated tensor file: " + path);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

}  // namespace detail

inline constexpr char kMagic[4] = {'C', 'D', 'T', '1'};

inline void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericError("cannot open for write: " + path.string());
    os.write(kMagic, 4);
    detail::put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
        if (t.extent(i) > 0xffffffffll) throw_param("extent too large for format");
        detail::put_u32(os, static_cast<uint32_t>(t.extent(i)));
    }
    // Bulk write is byte-exact on little-endian IEEE-754 hosts; fall back to
    // per-value packing elsewhere.
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    } else {
        for (int64_t i = 0; i < t.numel(); ++i) detail::put_f32(os, t.data[size_t(i)]);
    }
    if (!os) throw NumericError("write failed: " + path.string());
}

inline Tensor<float> load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NumericError("cannot open for read: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw NumericError("bad tensor magic in " + path.string());
    const uint32_t rank = detail::get_u32(is, path.string());
    if (rank == 0 || rank > 8) throw NumericError("implausible tensor rank in " + path.string());
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        const uint32_t e = detail::get_u32(is, path.string());
        if (e == 0) throw NumericError("zero extent in " + path.string());
        shape[i] = static_cast<int64_t>(e);
    }
    Tensor<float> t(shape);
    if constexpr (std::endian::native == std::endian::little) {
        if (!is.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(float))))
            throw NumericError("truncated tensor payload in " + path.string());
    } else {
        for (int64_t i = 0; i < t.numel(); ++i) {
            const uint32_t bits = detail::get_u32(is, path.string());
            float v;
            std::memcpy(&v, &bits, 4);
            t.data[size_t(i)] = v;
        }
    }
    char extra;
    if (is.read(&extra, 1)) throw NumericError("trailing bytes in " + path.string());
    return t;
}

// frame [C=3, h, w] in [0,1] -> binary P6 with maxval 255.
inline void save_ppm(const std::filesystem::path& path, const Tensor<float>& frame) {
    if (frame.rank() != 3 || frame.extent(0) != 3)
        throw_dim("save_ppm expects [3,h,w], got ", shape_str(frame.shape));
    const int64_t h = frame.extent(1), w = frame.extent(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericError("cannot open for write: " + path.string());
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const float v = std::clamp(frame.data[size_t((c * h + y) * w + x)], 0.0f, 1.0f);
                row[size_t(x * 3 + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw NumericError("write failed: " + path.string());
}

inline Tensor<float> load_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NumericError("cannot open for read: " + path.string());
    std::string magic;
    int64_t w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw NumericError("unsupported PPM header in " + path.string());
    is.get();  // single whitespace after header
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw NumericError("truncated PPM payload in " + path.string());
    Tensor<float> frame({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                frame.data[size_t((c * h + y) * w + x)] =
                    buf[size_t((y * w + x) * 3 + c)] / 255.0f;
    return frame;
}

}  // namespace colodiff::io
