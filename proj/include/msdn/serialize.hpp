#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "msdn/errors.hpp"
#include "msdn/tensor.hpp"

// Tensor binary layout: magic "MSDT", 1-byte dtype code (1=f32, 2=f64),
// 1-byte rank, rank x u32 little-endian dims, then little-endian scalars in
// row-major order. Shared by checkpoints and dataset files.

namespace msdn {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint64_t stream_offset(std::istream& is) {
    const auto p = is.tellg();
    return p < 0 ? 0 : static_cast<std::uint64_t>(p);
}

[[noreturn]] inline void truncated(std::istream& is, const char* what) {
    throw FormatError(std::string("truncated or corrupt tensor stream (") + what + ") at byte offset " +
                      std::to_string(stream_offset(is)));
}

inline void get_bytes(std::istream& is, void* dst, std::size_t n, const char* what) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) truncated(is, what);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    get_bytes(is, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
    unsigned char b[2];
    get_bytes(is, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

template <class T>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() {
    return 1;
}
template <>
constexpr std::uint8_t dtype_code<double>() {
    return 2;
}

// All supported targets are little-endian; scalars are written raw.
static_assert(sizeof(float) == 4 && sizeof(double) == 8);

}  // namespace detail

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write("MSDT", 4);
    const std::uint8_t code = detail::dtype_code<T>();
    os.write(reinterpret_cast<const char*>(&code), 1);
    const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int i = 0; i < t.rank(); ++i) detail::put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

// Reads a tensor of either stored dtype, converting scalars to T.
template <class T>
Tensor<T> read_tensor(std::istream& is) {
    char magic[4];
    detail::get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "MSDT", 4) != 0) {
        throw FormatError("bad tensor magic at byte offset " + std::to_string(detail::stream_offset(is) - 4));
    }
    std::uint8_t code = 0, rank = 0;
    detail::get_bytes(is, &code, 1, "dtype");
    detail::get_bytes(is, &rank, 1, "rank");
    if (code != 1 && code != 2) {
        throw FormatError("unknown dtype code " + std::to_string(code) + " at byte offset " +
                          std::to_string(detail::stream_offset(is) - 2));
    }
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) {
        shape[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(detail::get_u32(is, "dims"));
        if (shape[static_cast<std::size_t>(i)] == 0) {
            throw FormatError("zero dim in tensor header at byte offset " +
                              std::to_string(detail::stream_offset(is)));
        }
    }
    const std::int64_t n = shape_numel(shape);
    std::vector<T> out(static_cast<std::size_t>(n));
    if (code == detail::dtype_code<T>()) {
        detail::get_bytes(is, out.data(), static_cast<std::size_t>(n) * sizeof(T), "scalars");
    } else if (code == 1) {
        std::vector<float> raw(static_cast<std::size_t>(n));
        detail::get_bytes(is, raw.data(), raw.size() * sizeof(float), "scalars");
        for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<T>(raw[i]);
    } else {
        std::vector<double> raw(static_cast<std::size_t>(n));
        detail::get_bytes(is, raw.data(), raw.size() * sizeof(double), "scalars");
        for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<T>(raw[i]);
    }
    return Tensor<T>::from_data(std::move(shape), std::move(out));
}

template <class T>
void save_tensor_file(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    write_tensor(os, t);
    if (!os) throw DataError("write failed for " + path);
}

template <class T>
Tensor<T> load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    return read_tensor<T>(is);
}

}  // namespace msdn
