// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// `.bvt` container: "BVST", u32 version, u32 dtype, u32 ndim, ndim x u64 dims,
// then the row-major payload. Every integer and scalar is little-endian.

#include "bevsplat/error.hpp"
#include "bevsplat/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace bevsplat {

inline constexpr std::array<char, 4> kBvtMagic = {'B', 'V', 'S', 'T'};
inline constexpr std::uint32_t kBvtVersion = 1;

namespace detail {

template <typename U>
void put_le(std::vector<unsigned char> &buf, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
    }
}

template <typename U>
U get_le(const unsigned char *p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(p[i]) << (8 * i);
    }
    return v;
}

class CountingWriter {
  public:
    explicit CountingWriter(std::ostream &os) : os_(os) {}

    void write(const std::vector<unsigned char> &buf) {
        os_.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!os_) {
            throw IoError(written_, "sink rejected write");
        }
        written_ += buf.size();
    }

    std::uint64_t written() const { return written_; }

  private:
    std::ostream &os_;
    std::uint64_t written_ = 0;
};

inline std::size_t read_fully(std::istream &is, unsigned char *dst, std::size_t n) {
    is.read(reinterpret_cast<char *>(dst), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount());
}

} // namespace detail

inline std::uint64_t bvt_header_size(std::size_t ndim) { return 16 + 8 * static_cast<std::uint64_t>(ndim); }

/// Serializes `t`; returns total bytes emitted (header + payload).
inline std::uint64_t write_tensor(const Tensor &t, std::ostream &os) {
    Tensor::validate_shape(t.shape());
    detail::CountingWriter out(os);

    std::vector<unsigned char> header;
    header.insert(header.end(), kBvtMagic.begin(), kBvtMagic.end());
    detail::put_le<std::uint32_t>(header, kBvtVersion);
    detail::put_le<std::uint32_t>(header, static_cast<std::uint32_t>(t.dtype()));
    detail::put_le<std::uint32_t>(header, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) {
        detail::put_le<std::uint64_t>(header, d);
    }
    out.write(header);

    // Chunked so large maps do not double their memory footprint.
    constexpr std::size_t kChunk = 1 << 16;
    std::vector<unsigned char> buf;
    buf.reserve(kChunk * 8);
    const std::size_t n = t.size();
    for (std::size_t begin = 0; begin < n; begin += kChunk) {
        buf.clear();
        const std::size_t end = std::min(n, begin + kChunk);
        if (t.dtype() == DType::f32) {
            auto vals = t.f32();
            for (std::size_t i = begin; i < end; ++i) {
                detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(vals[i]));
            }
        } else {
            auto vals = t.f64();
            for (std::size_t i = begin; i < end; ++i) {
                detail::put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(vals[i]));
            }
        }
        out.write(buf);
    }
    os.flush();
    if (!os) {
        throw IoError(out.written(), "flush failed");
    }
    return out.written();
}

/// Parses one container and consumes exactly its bytes.
inline Tensor read_tensor(std::istream &is) {
    std::array<unsigned char, 16> fixed{};
    if (detail::read_fully(is, fixed.data(), fixed.size()) != fixed.size()) {
        throw ParseError("header", "truncated header");
    }
    for (std::size_t i = 0; i < 4; ++i) {
        if (fixed[i] != static_cast<unsigned char>(kBvtMagic[i])) {
            throw ParseError("magic", "expected BVST");
        }
    }
    const auto version = detail::get_le<std::uint32_t>(fixed.data() + 4);
    if (version != kBvtVersion) {
        throw ParseError("version", "unsupported version " + std::to_string(version));
    }
    const auto dtype_code = detail::get_le<std::uint32_t>(fixed.data() + 8);
    if (dtype_code > 1) {
        throw ParseError("dtype", "unknown dtype code " + std::to_string(dtype_code));
    }
    const auto ndim = detail::get_le<std::uint32_t>(fixed.data() + 12);
    if (ndim < 1 || ndim > 4) {
        throw ParseError("ndim", "ndim must be 1..4, got " + std::to_string(ndim));
    }

    std::vector<unsigned char> dims_raw(8 * ndim);
    if (detail::read_fully(is, dims_raw.data(), dims_raw.size()) != dims_raw.size()) {
        throw ParseError("shape", "truncated shape");
    }
    std::vector<std::uint64_t> shape(ndim);
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        shape[i] = detail::get_le<std::uint64_t>(dims_raw.data() + 8 * i);
        if (shape[i] == 0) {
            throw ParseError("shape", "zero-length dimension");
        }
        if (count > (std::uint64_t{1} << 40) / shape[i]) {
            throw ParseError("shape", "element count too large");
        }
        count *= shape[i];
    }

    const auto dtype = static_cast<DType>(dtype_code);
    const std::size_t width = dtype_width(dtype);
    std::vector<unsigned char> payload(static_cast<std::size_t>(count) * width);
    if (detail::read_fully(is, payload.data(), payload.size()) != payload.size()) {
        throw ParseError("payload", "truncated payload");
    }

    if (dtype == DType::f32) {
        std::vector<float> vals(count);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            vals[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(payload.data() + 4 * i));
        }
        return Tensor(std::move(shape), std::move(vals));
    }
    std::vector<double> vals(count);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        vals[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(payload.data() + 8 * i));
    }
    return Tensor(std::move(shape), std::move(vals));
}

inline std::uint64_t save_tensor(const Tensor &t, const std::filesystem::path &path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError(0, "cannot open " + path.string() + " for writing");
    }
    return write_tensor(t, os);
}

inline Tensor load_tensor(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError(0, "cannot open " + path.string());
    }
    return read_tensor(is);
}

} // namespace bevsplat
