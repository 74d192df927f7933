#pragma once

// Bloch-sphere rotation algebra.
//
// A Rotation is stored as a unit quaternion q = (w, x, y, z) and acts on
// qubits as U = w·I − i(x·σx + y·σy + z·σz). q and −q are the same element
// of SO(3); every comparison in this header is sign-invariant.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ionaddr {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Wraps an angle into [0, 2π).
inline double wrap_angle(double a) {
    double r = std::fmod(a, kTwoPi);
    if (r < 0) r += kTwoPi;
    if (r >= kTwoPi) r = 0.0;
    return r;
}

/// Signed difference a − b wrapped into (−π, π].
inline double angle_diff(double a, double b) {
    double d = std::remainder(a - b, kTwoPi);
    return d == -kPi ? kPi : d;
}

class Rotation {
public:
    constexpr Rotation() = default;

    /// Normalizes the given quaternion. Throws if it is (numerically) zero.
    Rotation(double w, double x, double y, double z) : q_{w, x, y, z} {
        const double n = std::sqrt(w * w + x * x + y * y + z * z);
        if (!(n > 1e-300) || !std::isfinite(n)) {
            throw std::invalid_argument("Rotation: quaternion must be finite and non-zero");
        }
        for (auto& c : q_) c /= n;
    }

    static Rotation identity() { return {}; }

    double w() const { return q_[0]; }
    double x() const { return q_[1]; }
    double y() const { return q_[2]; }
    double z() const { return q_[3]; }
    const std::array<double, 4>& quaternion() const { return q_; }

    Rotation inverse() const { return Rotation(q_[0], -q_[1], -q_[2], -q_[3]); }

    /// Rotation angle in [0, π].
    double angle() const {
        const double s = std::sqrt(q_[1] * q_[1] + q_[2] * q_[2] + q_[3] * q_[3]);
        return 2.0 * std::atan2(s, std::abs(q_[0]));
    }

    /// Unit rotation axis, oriented so that angle() is the positive sense.
    /// Returns ẑ for the identity.
    Vec3 axis() const {
        const double s = std::sqrt(q_[1] * q_[1] + q_[2] * q_[2] + q_[3] * q_[3]);
        if (s < 1e-15) return {0.0, 0.0, 1.0};
        const double sgn = q_[0] < 0 ? -1.0 : 1.0;
        return {sgn * q_[1] / s, sgn * q_[2] / s, sgn * q_[3] / s};
    }

    /// SO(3) view.
    Mat3 matrix() const {
        const auto [w, x, y, z] = q_;
        return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                 {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                 {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
    }

    Vec3 apply(const Vec3& v) const {
        const Mat3 m = matrix();
        Vec3 r{};
        for (int i = 0; i < 3; ++i) {
            r[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
        }
        return r;
    }

private:
    std::array<double, 4> q_{1.0, 0.0, 0.0, 0.0};
};

/// Result acts as "apply b first, then a".
inline Rotation compose(const Rotation& a, const Rotation& b) {
    const auto& p = a.quaternion();
    const auto& q = b.quaternion();
    return Rotation(p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
                    p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
                    p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
                    p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]);
}

inline Rotation operator*(const Rotation& a, const Rotation& b) { return compose(a, b); }

/// Rotation by `theta` about an arbitrary (not necessarily unit) axis.
inline Rotation rot_about(const Vec3& axis, double theta) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (n == 0.0) throw std::invalid_argument("rot_about: zero axis");
    const double s = std::sin(theta / 2) / n;
    return Rotation(std::cos(theta / 2), axis[0] * s, axis[1] * s, axis[2] * s);
}

/// Rotation by `theta` about the equatorial axis (cos φ, sin φ, 0).
inline Rotation rot_from_axis_angle(double phi, double theta) {
    const double s = std::sin(theta / 2);
    return Rotation(std::cos(theta / 2), s * std::cos(phi), s * std::sin(phi), 0.0);
}

inline Rotation rot_z(double angle) { return Rotation(std::cos(angle / 2), 0.0, 0.0, std::sin(angle / 2)); }

/// Frobenius norm of M(a) − M(b).
inline double distance_hs(const Rotation& a, const Rotation& b) {
    const Mat3 ma = a.matrix();
    const Mat3 mb = b.matrix();
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double d = ma[i][j] - mb[i][j];
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

/// Sign-invariant quaternion distance: 0 iff same rotation, ~half-angle otherwise.
inline double quat_distance(const Rotation& a, const Rotation& b) {
    const auto& p = a.quaternion();
    const auto& q = b.quaternion();
    double dm = 0.0, dp = 0.0;
    for (int i = 0; i < 4; ++i) {
        dm += (p[i] - q[i]) * (p[i] - q[i]);
        dp += (p[i] + q[i]) * (p[i] + q[i]);
    }
    return std::sqrt(std::min(dm, dp));
}

inline bool same_rotation(const Rotation& a, const Rotation& b, double tol = 1e-9) {
    return quat_distance(a, b) < tol;
}

/// Target gate parameters: rotation angle theta, equatorial axis azimuth phi and
/// diagonal phase delta. All radians.
struct TargetGate {
    double theta = 0.0;
    double phi = 0.0;
    double delta = 0.0;

    friend bool operator==(const TargetGate&, const TargetGate&) = default;
};

/// U = [[e^{iδ}cos(θ/2), −i e^{−iφ}sin(θ/2)], [−i e^{iφ}sin(θ/2), e^{−iδ}cos(θ/2)]].
inline Rotation to_rotation(const TargetGate& g) {
    const double c = std::cos(g.theta / 2);
    const double s = std::sin(g.theta / 2);
    return Rotation(c * std::cos(g.delta), s * std::cos(g.phi), s * std::sin(g.phi), -c * std::sin(g.delta));
}

/// Canonical parameters: theta in [0, π], phi in [0, 2π), delta in [0, π).
/// At theta = 0 phi is reported as 0; at theta = π delta is reported as 0.
inline TargetGate to_target(const Rotation& r) {
    const double c = std::hypot(r.w(), r.z());
    const double s = std::hypot(r.x(), r.y());
    TargetGate g;
    g.theta = 2.0 * std::atan2(s, c);
    g.phi = s > 1e-15 ? wrap_angle(std::atan2(r.y(), r.x())) : 0.0;
    g.delta = c > 1e-15 ? wrap_angle(std::atan2(-r.z(), r.w())) : 0.0;
    if (g.delta >= kPi) {
        g.delta -= kPi;
        if (s > 1e-15) g.phi = wrap_angle(g.phi + kPi);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Single-qubit Clifford group

/// ±π/2 generators about x and y. Enumerator order is the lexicographic
/// tie-break order for shortest words.
enum class Generator : int { XPlus = 0, XMinus = 1, YPlus = 2, YMinus = 3 };

inline constexpr std::array<Generator, 4> kGenerators{Generator::XPlus, Generator::XMinus, Generator::YPlus,
                                                      Generator::YMinus};

/// Pulse phase (equatorial axis azimuth) realizing a generator as a +π/2 pulse.
inline double generator_phase(Generator g) {
    switch (g) {
        case Generator::XPlus: return 0.0;
        case Generator::YPlus: return kPi / 2;
        case Generator::XMinus: return kPi;
        case Generator::YMinus: return 3 * kPi / 2;
    }
    return 0.0;
}

inline Rotation generator_rotation(Generator g) { return rot_from_axis_angle(generator_phase(g), kPi / 2); }

inline std::string to_string(Generator g) {
    switch (g) {
        case Generator::XPlus: return "X+";
        case Generator::XMinus: return "X-";
        case Generator::YPlus: return "Y+";
        case Generator::YMinus: return "Y-";
    }
    return "?";
}

/// Words are in time order: word[0] is applied first.
using Word = std::vector<Generator>;

inline Rotation word_rotation(const Word& word) {
    Rotation r;
    for (Generator g : word) r = compose(generator_rotation(g), r);
    return r;
}

class CliffordTable {
public:
    static constexpr std::size_t kOrder = 24;

    /// Breadth-first closure from the identity. Throws std::logic_error if the
    /// closure does not contain exactly 24 elements.
    static CliffordTable build() {
        CliffordTable t;
        t.elements_.push_back(Rotation::identity());
        t.words_.push_back({});
        for (std::size_t head = 0; head < t.elements_.size(); ++head) {
            for (Generator g : kGenerators) {
                const Rotation next = compose(generator_rotation(g), t.elements_[head]);
                if (t.find(next, 1e-9) >= 0) continue;
                Word w = t.words_[head];
                w.push_back(g);
                t.elements_.push_back(next);
                t.words_.push_back(std::move(w));
                if (t.elements_.size() > kOrder) {
                    throw std::logic_error("CliffordTable: closure exceeded 24 elements");
                }
            }
        }
        if (t.elements_.size() != kOrder) {
            throw std::logic_error("CliffordTable: closure reached " + std::to_string(t.elements_.size()) +
                                   " elements, expected 24");
        }
        t.inverse_.resize(kOrder);
        for (std::size_t i = 0; i < kOrder; ++i) {
            const int j = t.find(t.elements_[i].inverse(), 1e-9);
            if (j < 0) throw std::logic_error("CliffordTable: inverse not in table");
            t.inverse_[i] = static_cast<std::size_t>(j);
        }
        return t;
    }

    std::size_t size() const { return elements_.size(); }
    const Rotation& element(std::size_t i) const { return elements_.at(i); }
    const Word& word(std::size_t i) const { return words_.at(i); }
    std::size_t inverse_index(std::size_t i) const { return inverse_.at(i); }
    const std::vector<Rotation>& elements() const { return elements_; }

    /// Index of `r` in the table, or -1.
    int find(const Rotation& r, double tol = 1e-9) const {
        for (std::size_t i = 0; i < elements_.size(); ++i) {
            if (quat_distance(elements_[i], r) < tol) return static_cast<int>(i);
        }
        return -1;
    }

    std::size_t index_of(const Rotation& r) const {
        const int i = find(r, 1e-6);
        if (i < 0) throw std::invalid_argument("CliffordTable: rotation is not a Clifford");
        return static_cast<std::size_t>(i);
    }

    std::size_t max_word_length() const {
        std::size_t m = 0;
        for (const auto& w : words_) m = std::max(m, w.size());
        return m;
    }

    double mean_word_length() const {
        double s = 0.0;
        for (const auto& w : words_) s += static_cast<double>(w.size());
        return s / static_cast<double>(words_.size());
    }

private:
    std::vector<Rotation> elements_;
    std::vector<Word> words_;
    std::vector<std::size_t> inverse_;
};

/// Shared immutable table.
inline const CliffordTable& clifford_table() {
    static const CliffordTable table = CliffordTable::build();
    return table;
}

/// Identity and the three π flips; index 0 is the identity.
inline const std::array<Rotation, 4>& pauli_rotations() {
    static const std::array<Rotation, 4> p{Rotation::identity(), Rotation(0, 1, 0, 0), Rotation(0, 0, 1, 0),
                                           Rotation(0, 0, 0, 1)};
    return p;
}

/// Index into pauli_rotations(), or -1 if `r` is not a Pauli rotation.
inline int pauli_index(const Rotation& r, double tol = 1e-9) {
    const auto& p = pauli_rotations();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (quat_distance(p[i], r) < tol) return static_cast<int>(i);
    }
    return -1;
}

}  // namespace ionaddr
