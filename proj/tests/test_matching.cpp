// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/matching.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace bevsplat;

namespace {

FeatureMap random_map(int c, int s, std::uint64_t seed, double zero_share = 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> p(0.0, 1.0);
    FeatureMap m(c, s, s);
    for (int r = 0; r < s; ++r) {
        for (int col = 0; col < s; ++col) {
            const bool zero = p(rng) < zero_share;
            for (int ch = 0; ch < c; ++ch) {
                m.at(ch, r, col) = zero ? 0.0 : u(rng);
            }
        }
    }
    return m;
}

/// Plain scan of the definition: overlap rectangle, overlap norms.
double naive_value(const FeatureMap &sat, const FeatureMap &bev, int dr, int dc) {
    double num = 0.0, ns = 0.0, nb = 0.0;
    for (int u = 0; u < bev.rows; ++u) {
        for (int v = 0; v < bev.cols; ++v) {
            const int su = u + dr, sv = v + dc;
            if (su < 0 || su >= sat.rows || sv < 0 || sv >= sat.cols) {
                continue;
            }
            for (int ch = 0; ch < bev.channels; ++ch) {
                num += sat.at(ch, su, sv) * bev.at(ch, u, v);
                ns += sat.at(ch, su, sv) * sat.at(ch, su, sv);
                nb += bev.at(ch, u, v) * bev.at(ch, u, v);
            }
        }
    }
    if (std::sqrt(ns) < kMinNorm || std::sqrt(nb) < kMinNorm) {
        return 0.0;
    }
    return num / (std::sqrt(ns) * std::sqrt(nb));
}

} // namespace

TEST(WeightFeatures, IdentityAnnihilationAndScaling) {
    const auto f = random_map(3, 6, 1);
    EXPECT_EQ(weight_features(f, ScalarMap(6, 6, 1.0)), f);
    EXPECT_EQ(weight_features(f, ScalarMap(6, 6, 0.0)), FeatureMap(3, 6, 6));
    ScalarMap c(6, 6, 1.0);
    c.at(2, 4) = 0.5;
    const auto w = weight_features(f, c);
    for (int ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(w.at(ch, 2, 4), 0.5 * f.at(ch, 2, 4));
        EXPECT_EQ(w.at(ch, 1, 1), f.at(ch, 1, 1));
    }
    EXPECT_THROW(weight_features(f, ScalarMap(5, 6)), DomainError);
}

TEST(WeightFeatures, BackwardIsProductRule) {
    const auto f = random_map(2, 4, 2);
    ScalarMap c(4, 4);
    for (std::size_t i = 0; i < c.data.size(); ++i) {
        c.data[i] = 0.1 * static_cast<double>(i);
    }
    const auto up = random_map(2, 4, 3);
    const auto [d_f, d_c] = weight_features_backward(f, c, up);
    for (int r = 0; r < 4; ++r) {
        for (int col = 0; col < 4; ++col) {
            double expect_c = 0.0;
            for (int ch = 0; ch < 2; ++ch) {
                EXPECT_DOUBLE_EQ(d_f.at(ch, r, col), up.at(ch, r, col) * c.at(r, col));
                expect_c += up.at(ch, r, col) * f.at(ch, r, col);
            }
            EXPECT_NEAR(d_c.at(r, col), expect_c, 1e-15);
        }
    }
}

TEST(Similarity, SelfSimilarityIsOne) {
    const auto f = random_map(4, 16, 5);
    const auto m = similarity_map(f, f, 4, 1.0);
    EXPECT_NEAR(m.at(0, 0), 1.0, 1e-12);
    const auto p = peak(m);
    EXPECT_EQ(p.d_row, 0);
    EXPECT_EQ(p.d_col, 0);
}

TEST(Similarity, ShiftedCopyPeaksAtShift) {
    const auto bev = random_map(4, 24, 6);
    FeatureMap sat(4, 24, 24);
    for (int ch = 0; ch < 4; ++ch) {
        for (int r = 0; r + 3 < 24; ++r) {
            for (int c = 0; c + 5 < 24; ++c) {
                sat.at(ch, r + 3, c + 5) = bev.at(ch, r, c);
            }
        }
    }
    for (int radius : {5, 8}) {
        const auto p = peak(similarity_map(sat, bev, radius, 1.0));
        EXPECT_EQ(p.d_row, 3);
        EXPECT_EQ(p.d_col, 5);
        EXPECT_NEAR(p.value, 1.0, 1e-12);
    }
}

TEST(Similarity, OrthogonalChannelsGiveZero) {
    FeatureMap a = random_map(4, 12, 7), b = random_map(4, 12, 8);
    for (int r = 0; r < 12; ++r) {
        for (int c = 0; c < 12; ++c) {
            a.at(2, r, c) = a.at(3, r, c) = 0.0;
            b.at(0, r, c) = b.at(1, r, c) = 0.0;
        }
    }
    const auto m = similarity_map(a, b, 5, 1.0);
    for (double v : m.values) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Similarity, ScaleInvariant) {
    const auto sat = random_map(3, 16, 9);
    const auto bev = random_map(3, 16, 10, 0.6);
    FeatureMap scaled = bev;
    for (auto &x : scaled.data) {
        x *= 37.5;
    }
    const auto m1 = similarity_map(sat, bev, 6, 1.0);
    const auto m2 = similarity_map(sat, scaled, 6, 1.0);
    for (std::size_t i = 0; i < m1.values.size(); ++i) {
        EXPECT_NEAR(m1.values[i], m2.values[i], 1e-9);
    }
}

TEST(Similarity, MatchesExhaustiveDefinition) {
    for (double zero_share : {0.0, 0.8}) { // dense and sparse numerator paths
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto sat = random_map(4, 16, 100 + seed);
            const auto bev = random_map(4, 16, 200 + seed, zero_share);
            const auto m = similarity_map(sat, bev, 4, 1.0);
            int best_r = 0, best_c = 0;
            double best = -2.0;
            for (int r = -4; r <= 4; ++r) {
                for (int c = -4; c <= 4; ++c) {
                    const double v = naive_value(sat, bev, r, c);
                    EXPECT_NEAR(m.at(r, c), v, 1e-12);
                    EXPECT_LE(std::abs(m.at(r, c)), 1.0 + 1e-9);
                    if (v > best) {
                        best = v;
                        best_r = r;
                        best_c = c;
                    }
                }
            }
            const auto p = peak(m);
            EXPECT_EQ(p.d_row, best_r);
            EXPECT_EQ(p.d_col, best_c);
        }
    }
}

TEST(Similarity, ThreadCountInvariant) {
    const auto sat = random_map(4, 32, 11);
    const auto bev = random_map(4, 32, 12, 0.3);
    const auto one = similarity_map(sat, bev, 10, 0.5, 1);
    EXPECT_EQ(similarity_map(sat, bev, 10, 0.5, 4).values, one.values);
}

TEST(Similarity, RadiusOutOfRangeThrows) {
    const auto f = random_map(2, 8, 1);
    EXPECT_THROW(similarity_map(f, f, 8, 1.0), DomainError);
    EXPECT_THROW(similarity_map(f, f, -1, 1.0), DomainError);
    EXPECT_NO_THROW(similarity_map(f, f, 7, 1.0));
    EXPECT_THROW(similarity_map(f, random_map(2, 9, 1), 2, 1.0), DomainError);
}

TEST(Similarity, GradientMatchesFiniteDifferences) {
    const auto sat = random_map(3, 10, 13);
    FeatureMap bev = random_map(3, 10, 14, 0.3);
    const SimilarityEngine engine(sat, bev);
    FeatureMap grad(3, 10, 10);
    engine.accumulate_gradient(2, -1, 1.0, grad);
    const double h = 1e-6;
    for (std::size_t i = 0; i < bev.data.size(); i += 7) {
        const double keep = bev.data[i];
        bev.data[i] = keep + h;
        const double fp = SimilarityEngine(sat, bev).value(2, -1);
        bev.data[i] = keep - h;
        const double fm = SimilarityEngine(sat, bev).value(2, -1);
        bev.data[i] = keep;
        EXPECT_NEAR(grad.data[i], (fp - fm) / (2 * h), 1e-8);
    }
}

TEST(Peak, ConstantMapTiesToFirstCell) {
    SimilarityMap m(3, 0.5);
    std::fill(m.values.begin(), m.values.end(), 0.25);
    const auto p = peak(m);
    EXPECT_EQ(p.d_row, -3);
    EXPECT_EQ(p.d_col, -3);
}

TEST(Peak, UniqueMaximum) {
    SimilarityMap m(3, 0.5);
    m.at(1, -2) = 0.7;
    const auto p = peak(m);
    EXPECT_EQ(p.d_row, 1);
    EXPECT_EQ(p.d_col, -2);
    EXPECT_EQ(p.value, 0.7);
    EXPECT_EQ(p.dz_m, 0.5);
    EXPECT_EQ(p.dx_m, -1.0);
}

TEST(Peak, MetricConversionOnStreetScaleGrid) {
    SimilarityMap m(8, 100.0 / 128);
    EXPECT_EQ(m.beta, 0.78125);
    m.at(4, 0) = 1.0;
    const auto p = peak(m);
    EXPECT_DOUBLE_EQ(p.dz_m, 3.125);
    EXPECT_DOUBLE_EQ(p.dx_m, 0.0);
}

TEST(Peak, WindowIsInclusive) {
    SimilarityMap m(3, 1.0);
    m.at(3, 3) = 0.9;
    m.at(0, 1) = 0.4;
    const auto p = peak_in(m, -1, 1, -1, 1);
    EXPECT_EQ(p.d_row, 0);
    EXPECT_EQ(p.d_col, 1);
    EXPECT_EQ(peak_in(m, 3, 3, 3, 3).value, 0.9);
    EXPECT_THROW(peak_in(m, 1, 0, 0, 0), DomainError);
}

TEST(Rotation, ZeroAngleSearchKeepsTranslationPeak) {
    const auto f = random_map(3, 16, 15);
    const auto r = search_rotations(f, f, 3, 1.0, 8);
    EXPECT_EQ(r.angle_rad, 0.0);
    EXPECT_NEAR(r.peak.value, 1.0, 1e-12);
    EXPECT_THROW(search_rotations(f, f, 3, 1.0, 0), DomainError);
}
