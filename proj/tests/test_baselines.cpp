// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/baselines.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace bevsplat;

namespace {

FeatureMap pixel_index_features(int rows, int cols) {
    FeatureMap f(2, rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            f.at(0, r, c) = r;
            f.at(1, r, c) = c;
        }
    }
    return f;
}

GaussianPrimitive point(double x, double y, double z, std::vector<double> feature, double conf = 1.0) {
    GaussianPrimitive p;
    p.mean = Vec3(x, y, z);
    p.feature = std::move(feature);
    p.confidence = conf;
    return p;
}

} // namespace

TEST(Ipm, FortyFiveDegreeRay) {
    // Ray (0,1,1)/sqrt2 from a camera 1 m up hits the plane at (x, z) = (0, 1),
    // which projects to pixel (cx, cy + fy) = (4, 4).
    const PinholeIntrinsics k{4.0, 4.0, 4.0, 0.0};
    const BevGridSpec grid{4, 1.0, -2.0, 0.0};
    auto feats = pixel_index_features(9, 9);
    const auto m = ipm_project(feats, k, 1.0, grid, 1);
    EXPECT_EQ(m.mask.at(1, 2), 1.0);
    EXPECT_DOUBLE_EQ(m.features.at(0, 1, 2), 4.0);
    EXPECT_DOUBLE_EQ(m.features.at(1, 1, 2), 4.0);
}

TEST(Ipm, BilinearBetweenPixels) {
    const PinholeIntrinsics k{4.0, 4.0, 4.5, 0.0};
    const BevGridSpec grid{4, 1.0, -2.0, 0.0};
    const auto m = ipm_project(pixel_index_features(9, 9), k, 1.0, grid, 1);
    EXPECT_DOUBLE_EQ(m.features.at(1, 1, 2), 4.5);
}

TEST(Ipm, CellsBehindPinholeAreInvalid) {
    const PinholeIntrinsics k{32.0, 32.0, 32.0, 0.0};
    const auto grid = BevGridSpec::centered(16, 1.0);
    const auto m = ipm_project(pixel_index_features(64, 64), k, 1.65, grid, 1);
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            if (grid.cell_z(r) <= 0.0) {
                EXPECT_EQ(m.mask.at(r, c), 0.0);
                EXPECT_EQ(m.features.at(0, r, c), 0.0);
            }
        }
    }
}

TEST(Ipm, HorizonRowIsNeverReached) {
    // The principal ray is parallel to the ground, so far cells approach the horizon row
    // from below without reaching it. With the horizon just above the image, distant
    // cells fall outside and stay invalid.
    const PinholeIntrinsics k{10.0, 10.0, 10.0, -1.0};
    const BevGridSpec grid{8, 10.0, -5.0, 1000.0};
    const auto m = ipm_project(pixel_index_features(20, 21), k, 1.0, grid, 1);
    for (double v : m.mask.data) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Ipm, LoweringCameraKeepsValidCells) {
    // Valid cells need cy + fy*h/z inside the image rows. For cy >= 0 the lower bound holds
    // for every height, so the valid set can only grow as the camera is lowered; raising it
    // pushes near cells off the bottom edge.
    const PinholeIntrinsics k{64.0, 64.0, 63.5, 16.0};
    const auto grid = BevGridSpec::centered(64, 0.5);
    const FeatureMap f = pixel_index_features(48, 128);
    std::vector<ScalarMap> masks;
    for (double h : {0.5, 1.0, 1.65, 2.5, 4.0}) {
        masks.push_back(ipm_project(f, k, h, grid, 1).mask);
    }
    for (std::size_t i = 0; i + 1 < masks.size(); ++i) {
        double lost = 0.0;
        for (std::size_t j = 0; j < masks[i].data.size(); ++j) {
            EXPECT_GE(masks[i].data[j], masks[i + 1].data[j]);
            lost += masks[i].data[j] - masks[i + 1].data[j];
        }
        EXPECT_GT(lost, 0.0) << "raising the camera should drop some near cells";
    }
}

TEST(Ipm, PanoramaSeesAllAround) {
    const PanoramaGeometry g{64, 32};
    const auto grid = BevGridSpec::centered(16, 1.0);
    const auto m = ipm_project(pixel_index_features(32, 64), g, 1.65, grid, 1);
    for (double v : m.mask.data) {
        EXPECT_EQ(v, 1.0);
    }
}

TEST(Ipm, ThreadCountInvariant) {
    const PanoramaGeometry g{64, 32};
    const auto grid = BevGridSpec::centered(32, 0.5);
    const auto f = pixel_index_features(32, 64);
    const auto a = ipm_project(f, g, 1.65, grid, 1);
    const auto b = ipm_project(f, g, 1.65, grid, 4);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.mask, b.mask);
}

TEST(Ipm, InvalidInputsThrow) {
    const auto grid = BevGridSpec::centered(8, 1.0);
    const auto f = pixel_index_features(4, 8);
    EXPECT_THROW(ipm_project(f, PinholeIntrinsics{}, 0.0, grid), DomainError);
    EXPECT_THROW(ipm_project(f, PanoramaGeometry{16, 4}, 1.0, grid), DomainError);
}

TEST(Direct, HighestPointWins) {
    PrimitiveSet set;
    set.feature_dim = 1;
    set.items = {point(0.1, 1.0, 0.2, {7.0}), point(-0.2, -2.0, 0.1, {3.0}, 0.5)};
    const auto m = direct_project(set, BevGridSpec{4, 1.0, 0.0, 0.0});
    EXPECT_EQ(m.features.at(0, 0, 0), 1.5);
    EXPECT_EQ(m.mask.at(0, 0), 1.0);
    EXPECT_EQ(m.mask.at(1, 1), 0.0);
}

TEST(Direct, EqualHeightsKeepLowestIndex) {
    PrimitiveSet set;
    set.feature_dim = 1;
    set.items = {point(0, 0.5, 0, {1.0}), point(0, 0.5, 0, {2.0})};
    EXPECT_EQ(direct_project(set, BevGridSpec{2, 1.0, 0.0, 0.0}).features.at(0, 0, 0), 1.0);
}

TEST(Direct, EmptySet) {
    PrimitiveSet set;
    set.feature_dim = 3;
    const auto m = direct_project(set, BevGridSpec{5, 1.0, 0.0, 0.0});
    EXPECT_EQ(m.features, FeatureMap(3, 5, 5));
    EXPECT_EQ(m.mask, ScalarMap(5, 5));
}

TEST(Direct, DuplicatingPointsChangesNothing) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    PrimitiveSet set;
    set.feature_dim = 2;
    for (int i = 0; i < 300; ++i) {
        set.items.push_back(point(u(rng), u(rng), u(rng), {u(rng), u(rng)}, 0.5 + 0.1 * u(rng)));
    }
    const auto grid = BevGridSpec::centered(8, 1.0);
    const auto base = direct_project(set, grid);
    PrimitiveSet doubled = set;
    for (const auto &p : set.items) {
        doubled.items.push_back(p);
    }
    std::shuffle(doubled.items.begin(), doubled.items.end(), rng);
    const auto again = direct_project(doubled, grid);
    EXPECT_EQ(again.features, base.features);
    EXPECT_EQ(again.mask, base.mask);
}

TEST(Direct, PointsOutsideGridAreDropped) {
    PrimitiveSet set;
    set.feature_dim = 1;
    set.items = {point(-0.6, 0, 0, {1.0}), point(0, 0, 3.6, {1.0})};
    const auto m = direct_project(set, BevGridSpec{4, 1.0, 0.0, 0.0});
    for (double v : m.mask.data) {
        EXPECT_EQ(v, 0.0);
    }
}
