// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/tensor_io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

using namespace bevsplat;

namespace {

std::string bytes_of(const Tensor &t) {
    std::ostringstream os(std::ios::binary);
    write_tensor(t, os);
    return os.str();
}

Tensor parse(const std::string &bytes) {
    std::istringstream is(bytes, std::ios::binary);
    return read_tensor(is);
}

std::string parse_error_field(const std::string &bytes) {
    try {
        parse(bytes);
    } catch (const ParseError &e) {
        return e.field();
    }
    return "<none>";
}

/// Sink that accepts `limit` bytes and then fails.
class LimitedBuf : public std::streambuf {
  public:
    explicit LimitedBuf(std::size_t limit) : limit_(limit) {}

  protected:
    std::streamsize xsputn(const char *, std::streamsize n) override {
        if (used_ + static_cast<std::size_t>(n) > limit_) {
            return 0;
        }
        used_ += static_cast<std::size_t>(n);
        return n;
    }
    int overflow(int c) override { return xsputn(nullptr, 1) == 1 ? c : traits_type::eof(); }

  private:
    std::size_t limit_;
    std::size_t used_ = 0;
};

} // namespace

TEST(TensorIo, F32TwoByTwoIsFortyEightBytes) {
    const Tensor t({2, 2}, std::vector<float>{1, 2, 3, 4});
    std::ostringstream os(std::ios::binary);
    EXPECT_EQ(write_tensor(t, os), 48u);
    const std::string b = os.str();
    ASSERT_EQ(b.size(), 48u);
    EXPECT_EQ(b.substr(0, 4), "BVST");
    // version 1, dtype 0, ndim 2, dims 2 and 2, little-endian
    const unsigned char expected_header[32] = {'B', 'V', 'S', 'T', 1, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0,
                                               2,   0,   0,   0,   0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0};
    EXPECT_EQ(std::memcmp(b.data(), expected_header, 32), 0);
    // 1.0f = 0x3f800000, stored little-endian
    EXPECT_EQ(static_cast<unsigned char>(b[32]), 0x00);
    EXPECT_EQ(static_cast<unsigned char>(b[35]), 0x3f);
    EXPECT_EQ(static_cast<unsigned char>(b[34]), 0x80);
}

TEST(TensorIo, F64ScalarIsThirtyTwoBytes) {
    // 16 fixed header bytes, one u64 dim, one f64.
    const Tensor t({1}, std::vector<double>{0.0});
    std::ostringstream os(std::ios::binary);
    EXPECT_EQ(write_tensor(t, os), 32u);
    EXPECT_EQ(os.str().size(), 32u);
    EXPECT_EQ(bvt_header_size(1), 24u);
}

TEST(TensorIo, RoundTripKeepsDtypeShapeAndPayload) {
    const Tensor a({2, 3}, std::vector<float>{1.5f, -2.0f, 0.0f, 3e-38f, 7.25f, -0.0f});
    const Tensor b({1, 2, 1, 2}, std::vector<double>{1e300, -1e-300, 0.1, 42.0});
    for (const Tensor &t : {a, b}) {
        const Tensor back = parse(bytes_of(t));
        EXPECT_EQ(back.dtype(), t.dtype());
        EXPECT_EQ(back.shape(), t.shape());
        EXPECT_EQ(bytes_of(back), bytes_of(t));
    }
}

TEST(TensorIo, NanAndInfinityPayloadsSurviveBitwise) {
    std::vector<float> v = {std::numeric_limits<float>::quiet_NaN(), std::numeric_limits<float>::infinity(),
                            -std::numeric_limits<float>::infinity(), std::numeric_limits<float>::denorm_min()};
    const Tensor t({4}, v);
    EXPECT_EQ(bytes_of(parse(bytes_of(t))), bytes_of(t));
}

TEST(TensorIo, RandomTensorsRoundTripBitwise) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        const std::size_t ndim = 1 + rng() % 4;
        std::vector<std::uint64_t> shape(ndim);
        for (auto &d : shape) {
            d = 1 + rng() % 5;
        }
        const std::size_t n = Tensor::element_count(shape);
        Tensor t = (rng() & 1) ? Tensor(DType::f32, shape) : Tensor(DType::f64, shape);
        for (std::size_t k = 0; k < n; ++k) {
            t.set(k, std::ldexp(static_cast<double>(rng() % 2000001) - 1e6, static_cast<int>(rng() % 40) - 20));
        }
        const std::string b = bytes_of(t);
        EXPECT_EQ(b.size(), bvt_header_size(ndim) + n * dtype_width(t.dtype()));
        const Tensor back = parse(b);
        EXPECT_TRUE(back == t);
        EXPECT_EQ(bytes_of(back), b);
    }
}

TEST(TensorIo, ReadConsumesExactlyOneContainer) {
    const Tensor a({3}, std::vector<double>{1, 2, 3});
    const Tensor b({1, 1}, std::vector<float>{9});
    std::istringstream is(bytes_of(a) + bytes_of(b), std::ios::binary);
    EXPECT_TRUE(read_tensor(is) == a);
    EXPECT_TRUE(read_tensor(is) == b);
    EXPECT_EQ(is.peek(), std::char_traits<char>::eof());
}

TEST(TensorIo, BadMagicNamesMagic) {
    std::string b = bytes_of(Tensor({1}, std::vector<double>{0}));
    b.replace(0, 4, "XYZW");
    EXPECT_EQ(parse_error_field(b), "magic");
}

TEST(TensorIo, BadVersionNamesVersion) {
    std::string b = bytes_of(Tensor({1}, std::vector<double>{0}));
    b[4] = 2;
    EXPECT_EQ(parse_error_field(b), "version");
}

TEST(TensorIo, BadDtypeNamesDtype) {
    std::string b = bytes_of(Tensor({1}, std::vector<double>{0}));
    b[8] = 7;
    EXPECT_EQ(parse_error_field(b), "dtype");
}

TEST(TensorIo, TruncatedPayloadIsReported) {
    std::string b = bytes_of(Tensor({2, 2}, std::vector<float>{1, 2, 3, 4}));
    b.resize(32 + 12);
    try {
        parse(b);
        FAIL() << "expected a parse error";
    } catch (const ParseError &e) {
        EXPECT_EQ(e.field(), "payload");
        EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
    }
}

TEST(TensorIo, HeaderErrorsAreDistinct) {
    EXPECT_EQ(parse_error_field("BVST"), "header");
    std::string b = bytes_of(Tensor({1}, std::vector<double>{0}));
    std::string bad_ndim = b;
    bad_ndim[12] = 5;
    EXPECT_EQ(parse_error_field(bad_ndim), "ndim");
    std::string zero_dim = b;
    zero_dim[16] = 0;
    EXPECT_EQ(parse_error_field(zero_dim), "shape");
    EXPECT_EQ(parse_error_field(b.substr(0, 20)), "shape");
}

TEST(TensorIo, InvalidShapesAreRejected) {
    EXPECT_THROW(Tensor(DType::f32, {}), DomainError);
    EXPECT_THROW(Tensor(DType::f32, {1, 1, 1, 1, 1}), DomainError);
    EXPECT_THROW(Tensor(DType::f64, {2, 0}), DomainError);
    EXPECT_THROW(Tensor({2}, std::vector<double>{1, 2, 3}), DomainError);
}

TEST(TensorIo, SinkFailureReportsByteOffset) {
    const Tensor t({4}, std::vector<double>{1, 2, 3, 4});
    LimitedBuf buf(30); // header of a 1-d tensor is 24 bytes, the payload write fails
    std::ostream os(&buf);
    try {
        write_tensor(t, os);
        FAIL() << "expected an I/O error";
    } catch (const IoError &e) {
        EXPECT_EQ(e.offset(), 24u);
    }
    LimitedBuf none(0);
    std::ostream closed(&none);
    try {
        write_tensor(t, closed);
        FAIL() << "expected an I/O error";
    } catch (const IoError &e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(TensorIo, FileRoundTripAndMissingFile) {
    const auto dir = std::filesystem::temp_directory_path() / "bevsplat_tensor_io_test";
    std::filesystem::create_directories(dir);
    const Tensor t({2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    EXPECT_EQ(save_tensor(t, dir / "t.bvt"), 16u + 24u + 64u);
    EXPECT_TRUE(load_tensor(dir / "t.bvt") == t);
    EXPECT_THROW(load_tensor(dir / "missing.bvt"), IoError);
    std::filesystem::remove_all(dir);
}

TEST(TensorIo, MapConversions) {
    FeatureMap f(2, 2, 3);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
        f.data[i] = static_cast<double>(i);
    }
    const Tensor t = to_tensor(f);
    EXPECT_EQ(t.shape(), (std::vector<std::uint64_t>{2, 2, 3}));
    EXPECT_EQ(feature_map_from(t), f);
    ScalarMap s(2, 2, 0.5);
    EXPECT_EQ(scalar_map_from(to_tensor(s)), s);
    EXPECT_EQ(feature_map_from(to_tensor(s)).channels, 1);
    EXPECT_THROW(scalar_map_from(Tensor(DType::f64, {4})), DomainError);
}
