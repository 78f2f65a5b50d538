// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/geometry.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace bevsplat;
using std::numbers::pi;

namespace {

void expect_vec(const Vec3 &a, const Vec3 &b, double tol = 1e-12) {
    EXPECT_NEAR(a.x(), b.x(), tol);
    EXPECT_NEAR(a.y(), b.y(), tol);
    EXPECT_NEAR(a.z(), b.z(), tol);
}

} // namespace

TEST(Pinhole, PrincipalRay) {
    expect_vec(backproject_pinhole(0, 0, 1, {1, 1, 0, 0}), {0, 0, 1});
}

TEST(Pinhole, DiagonalIntrinsicsInversion) {
    expect_vec(backproject_pinhole(2, 0, 1, {2, 2, 0, 0}), {1, 0, 1});
}

TEST(Pinhole, ZeroDepthIsOrigin) {
    expect_vec(backproject_pinhole(17, -3, 0, {5, 7, 2, 1}), {0, 0, 0});
}

TEST(Pinhole, LinearInDepth) {
    const PinholeIntrinsics k{300, 310, 160, 120};
    for (double u : {0.0, 13.0, 319.0}) {
        for (double v : {0.0, 77.0, 239.0}) {
            for (double d : {0.5, 3.0, 41.0}) {
                expect_vec(backproject_pinhole(u, v, 2 * d, k), 2.0 * backproject_pinhole(u, v, d, k), 1e-9);
            }
        }
    }
}

TEST(Pinhole, ProjectionInvertsBackprojection) {
    const PinholeIntrinsics k{300, 310, 160, 120};
    const auto px = project_pinhole(backproject_pinhole(40, 200, 7.5, k), k);
    ASSERT_TRUE(px);
    EXPECT_NEAR(px->first, 40, 1e-9);
    EXPECT_NEAR(px->second, 200, 1e-9);
    EXPECT_FALSE(project_pinhole({0, 1, 0}, k));
    EXPECT_FALSE(project_pinhole({0, 1, -2}, k));
}

TEST(Pinhole, InvalidIntrinsicsRejected) {
    EXPECT_THROW((PinholeIntrinsics{0, 1, 0, 0}.validate()), DomainError);
    EXPECT_THROW((PinholeIntrinsics{1, -1, 0, 0}.validate()), DomainError);
}

TEST(Panorama, HorizonAtZeroAzimuth) {
    expect_vec(backproject_panorama(0, pi / 2, 2), {-2, 0, 0});
}

TEST(Panorama, PoleIsStraightUp) {
    for (double u : {0.0, 1.0, 4.0}) {
        expect_vec(backproject_panorama(u, 0, 1), {0, -1, 0});
    }
}

TEST(Panorama, QuarterTurn) {
    expect_vec(backproject_panorama(pi / 2, pi / 2, 1), {0, 0, -1});
}

TEST(Panorama, PolarAngleOutsideRangeThrows) {
    EXPECT_THROW(backproject_panorama(0, -1e-9, 1), DomainError);
    EXPECT_THROW(backproject_panorama(0, pi + 1e-9, 1), DomainError);
    EXPECT_NO_THROW(backproject_panorama(0, pi, 1));
}

TEST(Panorama, NormEqualsDepthOverAngleGrid) {
    for (int i = 0; i < 32; ++i) {
        for (int j = 0; j < 16; ++j) {
            const double u = 2 * pi * i / 32;
            const double v = pi * j / 15;
            for (double d : {1.0, 7.3}) {
                EXPECT_NEAR(backproject_panorama(u, v, d).norm() / d, 1.0, 1e-12);
            }
        }
    }
}

TEST(Panorama, PixelCenterConvention) {
    const PanoramaGeometry g4{4, 2};
    EXPECT_NEAR(panorama_pixel_to_angles(0, 0, g4).first, pi / 4, 1e-15);
    EXPECT_NEAR(panorama_pixel_to_angles(0, 0, g4).second, pi / 4, 1e-15);
    const PanoramaGeometry g{256, 64};
    EXPECT_NEAR(panorama_pixel_to_angles(255, 0, g).first, 2 * pi - pi / 256, 1e-12);
}

TEST(Panorama, PixelOutOfRangeThrows) {
    const PanoramaGeometry g{8, 4};
    EXPECT_THROW(panorama_pixel_to_angles(8, 0, g), DomainError);
    EXPECT_THROW(panorama_pixel_to_angles(0, 4, g), DomainError);
    EXPECT_THROW(panorama_pixel_to_angles(-1, 0, g), DomainError);
    EXPECT_THROW((PanoramaGeometry{1, 4}.validate()), DomainError);
}

TEST(Panorama, DirectionToPixelInvertsMapping) {
    const PanoramaGeometry g{64, 32};
    for (int u = 0; u < g.width; u += 5) {
        for (int v = 0; v < g.height; v += 3) {
            const auto [ua, va] = panorama_pixel_to_angles(u, v, g);
            const auto [uu, vv] = panorama_direction_to_pixel(panorama_direction(ua, va), g);
            EXPECT_NEAR(uu, u, 1e-9);
            EXPECT_NEAR(vv, v, 1e-9);
        }
    }
}

TEST(BevGrid, DropsHeight) {
    const BevGridSpec g{16, 0.5, 0, 0};
    const auto c = world_to_bev_cell({0, -5, 0}, g);
    EXPECT_DOUBLE_EQ(c.row, 0);
    EXPECT_DOUBLE_EQ(c.col, 0);
    const auto c2 = world_to_bev_cell({0, 123, 0}, g);
    EXPECT_DOUBLE_EQ(c2.row, c.row);
    EXPECT_DOUBLE_EQ(c2.col, c.col);
}

TEST(BevGrid, LinearScaling) {
    const BevGridSpec g{16, 0.5, 0, 0};
    const auto c = world_to_bev_cell({1, 0, 2}, g);
    EXPECT_DOUBLE_EQ(c.row, 4);
    EXPECT_DOUBLE_EQ(c.col, 2);
}

TEST(BevGrid, UnitCellShift) {
    const BevGridSpec g{16, 0.75, -3.0, 2.5};
    const auto c = world_to_bev_cell({-3.0 + 0.75, 9, 2.5 + 0.75}, g);
    EXPECT_NEAR(c.row, 1, 1e-12);
    EXPECT_NEAR(c.col, 1, 1e-12);
}

TEST(BevGrid, CenteredPutsCameraInMiddle) {
    const auto g = BevGridSpec::centered(128, 70.0 / 128);
    const auto c = world_to_bev_cell({0, 0, 0}, g);
    EXPECT_NEAR(c.row, 64, 1e-12);
    EXPECT_NEAR(c.col, 64, 1e-12);
    EXPECT_NEAR(g.cell_x(64), 0, 1e-12);
    EXPECT_NEAR(g.cell_z(0), -35, 1e-12);
}

TEST(BevGrid, InvalidSpecRejected) {
    EXPECT_THROW((BevGridSpec{0, 1, 0, 0}.validate()), DomainError);
    EXPECT_THROW((BevGridSpec{4, 0, 0, 0}.validate()), DomainError);
}

TEST(BackprojectPixel, DispatchesOnCamera) {
    const Camera pin = PinholeIntrinsics{2, 2, 0, 0};
    expect_vec(backproject_pixel(pin, 2, 0, 1), {1, 0, 1});
    const Camera pano = PanoramaGeometry{4, 2};
    expect_vec(backproject_pixel(pano, 0, 0, 1), backproject_panorama(pi / 4, pi / 4, 1));
}
