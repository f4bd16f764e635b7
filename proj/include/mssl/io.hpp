#pragma once

// Binary containers (.fgrid, .aemb) and PGM heatmaps. All multi-byte fields
// are little-endian; payloads are IEEE-754 f32.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "mssl/errors.hpp"
#include "mssl/grid.hpp"

namespace mssl::io {

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v)
{
    const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                    static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(bytes.data(), 4);
}

inline std::uint32_t get_u32(std::istream& is)
{
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4))
        throw FormatError("unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, double v)
{
    put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline double get_f32(std::istream& is) { return static_cast<double>(std::bit_cast<float>(get_u32(is))); }

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), 4); }

inline void expect_magic(std::istream& is, std::string_view magic)
{
    std::array<char, 4> got{};
    if (!is.read(got.data(), 4) || std::string_view(got.data(), 4) != magic)
        throw FormatError("bad magic bytes, expected " + std::string(magic));
    const std::uint32_t version = get_u32(is);
    if (version != kFormatVersion)
        throw FormatError("unsupported version " + std::to_string(version));
}

inline std::uint32_t checked_u32(std::size_t n)
{
    if (n > 0xffffffffu)
        throw FormatError("dimension does not fit in u32");
    return static_cast<std::uint32_t>(n);
}

// Guards against absurd headers before allocating.
inline void expect_payload(std::istream& is, std::uint64_t floats)
{
    const auto here = is.tellg();
    if (here < 0)
        return;
    is.seekg(0, std::ios::end);
    const auto end = is.tellg();
    is.seekg(here);
    if (static_cast<std::uint64_t>(end - here) < floats * 4)
        throw FormatError("truncated payload");
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open " + path.string());
    return is;
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write " + path.string());
    return os;
}

} // namespace detail

inline void write_fgrid(std::ostream& os, const FeatureGrid& g)
{
    detail::put_magic(os, "FGRD");
    detail::put_u32(os, kFormatVersion);
    detail::put_u32(os, detail::checked_u32(g.batch()));
    detail::put_u32(os, detail::checked_u32(g.height()));
    detail::put_u32(os, detail::checked_u32(g.width()));
    detail::put_u32(os, detail::checked_u32(g.channels()));
    for (double v : g.data())
        detail::put_f32(os, v);
}

inline FeatureGrid read_fgrid(std::istream& is)
{
    detail::expect_magic(is, "FGRD");
    const std::uint64_t b = detail::get_u32(is);
    const std::uint64_t h = detail::get_u32(is);
    const std::uint64_t w = detail::get_u32(is);
    const std::uint64_t c = detail::get_u32(is);
    if (b == 0 || h == 0 || w == 0 || c == 0)
        throw FormatError("fgrid: zero dimension");
    const std::uint64_t n = b * h * w * c;
    detail::expect_payload(is, n);
    Vector data(n);
    for (auto& v : data)
        v = detail::get_f32(is);
    try {
        return FeatureGrid(b, h, w, c, std::move(data));
    } catch (const NumericalInstability& e) {
        throw FormatError(std::string("fgrid: ") + e.what());
    }
}

inline void write_aemb(std::ostream& os, const VectorBatch& a)
{
    detail::put_magic(os, "AEMB");
    detail::put_u32(os, kFormatVersion);
    detail::put_u32(os, detail::checked_u32(a.batch()));
    detail::put_u32(os, detail::checked_u32(a.channels()));
    for (double v : a.data())
        detail::put_f32(os, v);
}

inline VectorBatch read_aemb(std::istream& is)
{
    detail::expect_magic(is, "AEMB");
    const std::uint64_t b = detail::get_u32(is);
    const std::uint64_t c = detail::get_u32(is);
    if (b == 0 || c == 0)
        throw FormatError("aemb: zero dimension");
    detail::expect_payload(is, b * c);
    Vector data(b * c);
    for (auto& v : data)
        v = detail::get_f32(is);
    try {
        return VectorBatch(b, c, std::move(data));
    } catch (const NumericalInstability& e) {
        throw FormatError(std::string("aemb: ") + e.what());
    }
}

inline void save_fgrid(const std::filesystem::path& path, const FeatureGrid& g)
{
    auto os = detail::open_out(path);
    write_fgrid(os, g);
}

inline FeatureGrid load_fgrid(const std::filesystem::path& path)
{
    auto is = detail::open_in(path);
    return read_fgrid(is);
}

inline void save_aemb(const std::filesystem::path& path, const VectorBatch& a)
{
    auto os = detail::open_out(path);
    write_aemb(os, a);
}

inline VectorBatch load_aemb(const std::filesystem::path& path)
{
    auto is = detail::open_in(path);
    return read_aemb(is);
}

/// Binary PGM (P5), one byte per cell: 255 inside the mask, 0 outside.
/// With upsample > 1 every cell becomes an upsample x upsample block.
inline void write_pgm(std::ostream& os, const Mask& mask, std::size_t height, std::size_t width,
                      std::size_t upsample = 1)
{
    if (mask.size() != height * width)
        throw DimensionError("write_pgm: mask size mismatch");
    const std::size_t f = upsample == 0 ? 1 : upsample;
    os << "P5\n" << width * f << ' ' << height * f << "\n255\n";
    std::string row(width * f, '\0');
    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            const char v = mask[i * width + j] ? static_cast<char>(255) : '\0';
            for (std::size_t r = 0; r < f; ++r)
                row[j * f + r] = v;
        }
        for (std::size_t r = 0; r < f; ++r)
            os.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
}

inline void save_pgm(const std::filesystem::path& path, const Mask& mask, std::size_t height, std::size_t width,
                     std::size_t upsample = 1)
{
    auto os = detail::open_out(path);
    write_pgm(os, mask, height, width, upsample);
}

inline std::string read_file_bytes(const std::filesystem::path& path)
{
    auto is = detail::open_in(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace mssl::io
