#include "ionaddr/rotor.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "ionaddr/random.hpp"

using namespace ionaddr;

namespace {

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
    double m = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
    return m;
}

Rotation random_rotation(Rng& rng) {
    return to_rotation({uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi)});
}

}  // namespace

TEST(Rotor, AxisAngleExamples) {
    EXPECT_LT(quat_distance(rot_from_axis_angle(0, 0), Rotation::identity()), 1e-15);

    const Mat3 xpi = rot_from_axis_angle(0, kPi).matrix();
    const Mat3 expected{{{1, 0, 0}, {0, -1, 0}, {0, 0, -1}}};
    EXPECT_LT(max_abs_diff(xpi, expected), 1e-15);

    const Vec3 v = rot_from_axis_angle(kPi / 2, kPi / 2).apply({0, 0, 1});
    EXPECT_NEAR(v[0], 1.0, 1e-15);
    EXPECT_NEAR(v[1], 0.0, 1e-15);
    EXPECT_NEAR(v[2], 0.0, 1e-15);
}

TEST(Rotor, AnglesWrap) {
    EXPECT_LT(quat_distance(rot_from_axis_angle(0.3, 1.1), rot_from_axis_angle(0.3 + kTwoPi, 1.1 + 2 * kTwoPi)),
              1e-12);
}

TEST(Rotor, ComposeExamples) {
    const Rotation r = rot_from_axis_angle(0.7, 2.1);
    EXPECT_LT(quat_distance(compose(r, Rotation::identity()), r), 1e-15);

    const Rotation x90 = rot_from_axis_angle(0, kPi / 2);
    const Rotation y90 = rot_from_axis_angle(kPi / 2, kPi / 2);
    EXPECT_LT(quat_distance(compose(x90, x90), rot_from_axis_angle(0, kPi)), 1e-15);

    // Hand product (c + s i)(c + s j), c = s = 1/√2: 1/2 (1 + i + j + k).
    const Rotation xy = compose(x90, y90);
    EXPECT_NEAR(xy.w(), 0.5, 1e-15);
    EXPECT_NEAR(xy.x(), 0.5, 1e-15);
    EXPECT_NEAR(xy.y(), 0.5, 1e-15);
    EXPECT_NEAR(xy.z(), 0.5, 1e-15);
    EXPECT_NEAR(xy.angle(), 2 * kPi / 3, 1e-14);
    const double s3 = 1 / std::sqrt(3.0);
    EXPECT_NEAR(xy.axis()[0], s3, 1e-14);
    EXPECT_NEAR(xy.axis()[1], s3, 1e-14);
    EXPECT_NEAR(xy.axis()[2], s3, 1e-14);

    // Opposite time order gives the (1, 1, -1) axis.
    const Rotation yx = compose(y90, x90);
    EXPECT_NEAR(yx.angle(), 2 * kPi / 3, 1e-14);
    EXPECT_NEAR(yx.axis()[2], -s3, 1e-14);

    // apply b first: y90 moves z to x, then x90 leaves x alone.
    const Vec3 v = xy.apply({0, 0, 1});
    EXPECT_NEAR(v[0], 1.0, 1e-14);
}

TEST(Rotor, ComposeIsAssociativeAndNormalized) {
    Rng rng = make_rng(7);
    for (int i = 0; i < 200; ++i) {
        const Rotation a = random_rotation(rng), b = random_rotation(rng), c = random_rotation(rng);
        EXPECT_LT(quat_distance(compose(compose(a, b), c), compose(a, compose(b, c))), 1e-13);
        Rotation acc;
        for (int k = 0; k < 1000; ++k) acc = compose(a, acc);
        const auto& q = acc.quaternion();
        EXPECT_NEAR(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3], 1.0, 1e-12);
    }
}

TEST(Rotor, DistanceHs) {
    const Rotation r = rot_from_axis_angle(1.0, 0.4);
    EXPECT_EQ(distance_hs(r, r), 0.0);
    EXPECT_NEAR(distance_hs(Rotation::identity(), rot_from_axis_angle(0, kPi)), std::sqrt(8.0), 1e-14);

    // sign invariance
    const auto& q = r.quaternion();
    EXPECT_NEAR(distance_hs(Rotation(-q[0], -q[1], -q[2], -q[3]), rot_from_axis_angle(2.0, 1.0)),
                distance_hs(r, rot_from_axis_angle(2.0, 1.0)), 1e-14);
}

TEST(Rotor, DistanceHsStrictlyIncreasingInAngle) {
    // Dense sweep over (0, π].
    double prev = 0.0;
    const int n = 20000;
    for (int i = 1; i <= n; ++i) {
        const double theta = kPi * i / n;
        const double d = distance_hs(Rotation::identity(), rot_from_axis_angle(0, theta));
        EXPECT_GT(d, prev) << "theta=" << theta;
        prev = d;
    }
}

TEST(Rotor, HomomorphismToSO3) {
    Rng rng = make_rng(11);
    for (int i = 0; i < 1000; ++i) {
        const Rotation a = random_rotation(rng), b = random_rotation(rng);
        EXPECT_LT(max_abs_diff(compose(a, b).matrix(), matmul(a.matrix(), b.matrix())), 1e-12);
    }
}

TEST(Rotor, TargetGateRoundTrip) {
    Rng rng = make_rng(3);
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const TargetGate g{uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi)};
        const Rotation r = to_rotation(g);
        const TargetGate back = to_target(r);
        EXPECT_LT(quat_distance(to_rotation(back), r), 1e-12);

        // Parameter-level comparison away from the aliasing points θ ∈ {0, π}
        // and the δ branch cut. (θ, φ, δ) ≡ (2π−θ, φ+π, δ) ≡ (θ, φ+π, δ+π).
        TargetGate canon = g;
        if (canon.theta > kPi) {
            canon.theta = kTwoPi - canon.theta;
            canon.phi = wrap_angle(canon.phi + kPi);
        }
        if (canon.delta >= kPi) {
            canon.delta -= kPi;
            canon.phi = wrap_angle(canon.phi + kPi);
        }
        if (canon.theta < 1e-3 || kPi - canon.theta < 1e-3) continue;
        if (canon.delta < 1e-6 || kPi - canon.delta < 1e-6) continue;
        ++checked;
        EXPECT_NEAR(back.theta, canon.theta, 1e-9);
        EXPECT_NEAR(angle_diff(back.phi, canon.phi), 0.0, 1e-9);
        EXPECT_NEAR(angle_diff(back.delta, canon.delta), 0.0, 1e-9);
    }
    EXPECT_GT(checked, 990);
}

TEST(Rotor, DeltaIsZRotation) {
    // δ-only target: diag(e^{iδ}, e^{-iδ}) is a z rotation by −2δ.
    EXPECT_LT(quat_distance(to_rotation({0, 0, 0.3}), rot_z(-0.6)), 1e-15);
    EXPECT_LT(quat_distance(to_rotation({kPi / 2, 0.4, 0}), rot_from_axis_angle(0.4, kPi / 2)), 1e-15);
}

TEST(Rotor, RotationRejectsZeroQuaternion) { EXPECT_THROW(Rotation(0, 0, 0, 0), std::invalid_argument); }

// Independent oracle: enumerate every word of length <= 4 over the four
// generators, keep the shortest lexicographically-first word per element.
TEST(CliffordTable, MatchesBruteForceWordEnumeration) {
    const CliffordTable& t = clifford_table();
    ASSERT_EQ(t.size(), 24u);

    std::vector<std::pair<Rotation, Word>> found;
    for (std::size_t len = 0; len <= 4; ++len) {
        std::size_t count = 1;
        for (std::size_t i = 0; i < len; ++i) count *= 4;
        for (std::size_t code = 0; code < count; ++code) {
            Word w(len);
            std::size_t c = code;
            for (std::size_t i = len; i-- > 0;) {
                w[i] = static_cast<Generator>(c % 4);
                c /= 4;
            }
            const Rotation r = word_rotation(w);
            bool seen = false;
            for (const auto& f : found) seen = seen || quat_distance(f.first, r) < 1e-9;
            if (!seen) found.emplace_back(r, w);
        }
    }
    ASSERT_EQ(found.size(), 24u);

    std::map<std::size_t, int> histogram;
    for (const auto& [r, w] : found) {
        const int idx = t.find(r);
        ASSERT_GE(idx, 0);
        EXPECT_EQ(t.word(idx), w);
        histogram[w.size()]++;
    }
    // 1 identity, 4 generators, 10 of length 2, 8 of length 3, Z_π needs 4.
    EXPECT_EQ(histogram[0], 1);
    EXPECT_EQ(histogram[1], 4);
    EXPECT_EQ(histogram[2], 10);
    EXPECT_EQ(histogram[3], 8);
    EXPECT_EQ(histogram[4], 1);
    EXPECT_EQ(t.max_word_length(), 4u);
    EXPECT_NEAR(t.mean_word_length(), 52.0 / 24.0, 1e-15);
    EXPECT_GE(t.mean_word_length(), 2.0);
    EXPECT_LE(t.mean_word_length(), 2.25);
    EXPECT_EQ(t.word(static_cast<std::size_t>(t.find(Rotation(0, 0, 0, 1)))).size(), 4u);
}

TEST(CliffordTable, Invariants) {
    const CliffordTable& t = clifford_table();
    EXPECT_TRUE(t.word(0).empty());
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = i + 1; j < t.size(); ++j) EXPECT_GT(quat_distance(t.element(i), t.element(j)), 1e-9);
        EXPECT_LT(quat_distance(word_rotation(t.word(i)), t.element(i)), 1e-12);
        EXPECT_LT(quat_distance(compose(t.element(i), t.element(t.inverse_index(i))), Rotation::identity()), 1e-12);
        for (std::size_t j = 0; j < t.size(); ++j) EXPECT_GE(t.find(compose(t.element(i), t.element(j))), 0);
    }
}

TEST(CliffordTable, PaulisAreMembers) {
    for (const Rotation& p : pauli_rotations()) EXPECT_GE(clifford_table().find(p), 0);
    EXPECT_EQ(pauli_index(rot_from_axis_angle(kPi / 2, kPi)), 2);
    EXPECT_EQ(pauli_index(rot_from_axis_angle(0, kPi / 2)), -1);
}
