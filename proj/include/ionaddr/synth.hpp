#pragma once

// Composite pulse synthesis for ions that share one drive field.
//
// Every pulse rotates every ion about the same equatorial axis; ion k turns by
// π·A/a_pi[k]. A train of pulses is tuned so that each ion ends on its own
// target rotation. The objective is the sum over ions of the Frobenius
// distance between the realized and requested SO(3) matrices.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ionaddr/random.hpp"
#include "ionaddr/rotor.hpp"

namespace ionaddr {

struct Pulse {
    double amplitude = 0.0;  // same units as IonSet::a_pi
    double phase = 0.0;      // rad
    double duration = 0.6e-6;
    double ramp_time = 120e-9;

    void validate() const {
        if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
            throw std::invalid_argument("Pulse: amplitude must be finite and >= 0");
        }
        if (!std::isfinite(phase)) throw std::invalid_argument("Pulse: phase must be finite");
        if (!(duration > 0.0)) throw std::invalid_argument("Pulse: duration must be > 0");
        if (!(ramp_time >= 0.0) || 2.0 * ramp_time > duration) {
            throw std::invalid_argument("Pulse: require 0 <= 2*ramp_time <= duration");
        }
    }

    friend bool operator==(const Pulse&, const Pulse&) = default;
};

struct PulseSequence {
    std::vector<Pulse> pulses;
    double inter_pulse_delay = 2e-6;

    bool empty() const { return pulses.empty(); }
    std::size_t size() const { return pulses.size(); }

    /// Shared envelope and non-negative delay. Empty trains are allowed here
    /// (an all-identity Clifford stream compiles to one); operations that need
    /// a pulse reject them themselves.
    void validate() const {
        if (!(inter_pulse_delay >= 0.0)) throw std::invalid_argument("PulseSequence: negative delay");
        for (const Pulse& p : pulses) {
            p.validate();
            if (p.duration != pulses.front().duration || p.ramp_time != pulses.front().ramp_time) {
                throw std::invalid_argument("PulseSequence: pulses must share duration and ramp_time");
            }
        }
    }

    friend bool operator==(const PulseSequence&, const PulseSequence&) = default;
};

struct IonSet {
    std::vector<double> a_pi;

    IonSet() = default;
    explicit IonSet(std::vector<double> v) : a_pi(std::move(v)) { validate(); }

    /// Two ions with Rabi ratio Ω1/Ω0 = `ratio` and a_pi[0] = `a_pi0`.
    static IonSet from_ratio(double ratio, double a_pi0 = 1.0) {
        if (!(ratio > 0.0)) throw std::invalid_argument("IonSet: ratio must be > 0");
        return IonSet({a_pi0, a_pi0 / ratio});
    }

    std::size_t size() const { return a_pi.size(); }
    double rabi_ratio(std::size_t k) const { return a_pi.at(0) / a_pi.at(k); }
    double max_a_pi() const {
        double m = 0.0;
        for (double a : a_pi) m = std::max(m, a);
        return m;
    }

    void validate() const {
        if (a_pi.empty()) throw std::invalid_argument("IonSet: no ions");
        for (double a : a_pi) {
            if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("IonSet: a_pi entries must be > 0");
        }
    }
};

inline Rotation ideal_pulse_rotation(const Pulse& pulse, double a_pi_k) {
    if (!(a_pi_k > 0.0)) throw std::invalid_argument("ideal_pulse_rotation: a_pi must be > 0");
    return rot_from_axis_angle(pulse.phase, kPi * pulse.amplitude / a_pi_k);
}

/// First pulse is applied first.
inline Rotation sequence_rotation(const PulseSequence& seq, double a_pi_k) {
    if (seq.empty()) throw std::invalid_argument("sequence_rotation: empty sequence");
    Rotation r;
    for (const Pulse& p : seq.pulses) r = compose(ideal_pulse_rotation(p, a_pi_k), r);
    return r;
}

inline void check_targets(const std::vector<TargetGate>& targets, const IonSet& ions) {
    ions.validate();
    if (targets.size() != ions.size()) {
        throw std::invalid_argument("synth: " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(ions.size()) + " ions");
    }
}

inline std::vector<double> per_ion_distance(const PulseSequence& seq, const std::vector<TargetGate>& targets,
                                            const IonSet& ions) {
    check_targets(targets, ions);
    std::vector<double> d;
    d.reserve(ions.size());
    for (std::size_t k = 0; k < ions.size(); ++k) {
        d.push_back(distance_hs(sequence_rotation(seq, ions.a_pi[k]), to_rotation(targets[k])));
    }
    return d;
}

inline double cost(const PulseSequence& seq, const std::vector<TargetGate>& targets, const IonSet& ions) {
    double c = 0.0;
    for (double d : per_ion_distance(seq, targets, ions)) c += d;
    return c;
}

namespace detail {

using Quat = std::array<double, 4>;

inline Quat qmul(const Quat& p, const Quat& q) {
    return {p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
            p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
            p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
            p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]};
}

// Symmetric bilinear form whose diagonal H(q, q) is the homogeneous SO(3)
// matrix of q. Row-major 9 entries.
inline std::array<double, 9> so3_bilinear(const Quat& q, const Quat& p) {
    const double ww = q[0] * p[0], xx = q[1] * p[1], yy = q[2] * p[2], zz = q[3] * p[3];
    const double xy = q[1] * p[2] + p[1] * q[2], xz = q[1] * p[3] + p[1] * q[3], yz = q[2] * p[3] + p[2] * q[3];
    const double wx = q[0] * p[1] + p[0] * q[1], wy = q[0] * p[2] + p[0] * q[2], wz = q[0] * p[3] + p[0] * q[3];
    return {ww + xx - yy - zz, xy - wz, xz + wy,  //
            xy + wz, ww - xx + yy - zz, yz - wx,  //
            xz - wy, yz + wx, ww - xx - yy + zz};
}

// Parameter layout: [A_0 .. A_{n-1}, phi_0 .. phi_{n-1}].
struct Residuals {
    Eigen::VectorXd r;  // 9 entries per ion: M_k - G_k
    Eigen::MatrixXd J;  // d r / d params
};

inline Residuals evaluate(const Eigen::VectorXd& x, const std::vector<Mat3>& targets, const std::vector<double>& a_pi,
                          bool with_jacobian) {
    const int n = static_cast<int>(x.size() / 2);
    const int nk = static_cast<int>(a_pi.size());
    Residuals out;
    out.r.resize(9 * nk);
    if (with_jacobian) out.J.resize(9 * nk, 2 * n);

    std::vector<Quat> q(n), dqa(n), dqp(n), prefix(n + 1), suffix(n + 1);
    for (int k = 0; k < nk; ++k) {
        for (int j = 0; j < n; ++j) {
            const double half = 0.5 * kPi * x[j] / a_pi[k];
            const double c = std::cos(half), s = std::sin(half);
            const double cp = std::cos(x[n + j]), sp = std::sin(x[n + j]);
            q[j] = {c, s * cp, s * sp, 0.0};
            const double dh = 0.5 * kPi / a_pi[k];
            dqa[j] = {-s * dh, c * cp * dh, c * sp * dh, 0.0};
            dqp[j] = {0.0, -s * sp, s * cp, 0.0};
        }
        // prefix[j] = q_{j-1} ... q_0 (applied first), suffix[j] = q_{n-1} ... q_j
        prefix[0] = {1, 0, 0, 0};
        for (int j = 0; j < n; ++j) prefix[j + 1] = qmul(q[j], prefix[j]);
        suffix[n] = {1, 0, 0, 0};
        for (int j = n - 1; j >= 0; --j) suffix[j] = qmul(suffix[j + 1], q[j]);
        const Quat& total = prefix[n];
        const auto m = so3_bilinear(total, total);
        for (int e = 0; e < 9; ++e) out.r[9 * k + e] = m[e] - targets[k][e / 3][e % 3];
        if (!with_jacobian) continue;
        for (int j = 0; j < n; ++j) {
            for (int which = 0; which < 2; ++which) {
                const Quat d = qmul(suffix[j + 1], qmul(which == 0 ? dqa[j] : dqp[j], prefix[j]));
                const auto dm = so3_bilinear(total, d);
                for (int e = 0; e < 9; ++e) out.J(9 * k + e, which * n + j) = 2.0 * dm[e];
            }
        }
    }
    return out;
}

inline Eigen::VectorXd pack(const PulseSequence& seq) {
    const int n = static_cast<int>(seq.size());
    Eigen::VectorXd x(2 * n);
    for (int j = 0; j < n; ++j) {
        x[j] = seq.pulses[j].amplitude;
        x[n + j] = seq.pulses[j].phase;
    }
    return x;
}

inline std::vector<Mat3> target_matrices(const std::vector<TargetGate>& targets) {
    std::vector<Mat3> m;
    for (const auto& t : targets) m.push_back(to_rotation(t).matrix());
    return m;
}

}  // namespace detail

/// d cost / d params in the layout [amplitudes..., phases...]. Ions whose
/// distance is exactly zero contribute nothing (the norm is not differentiable there).
inline std::vector<double> cost_gradient(const PulseSequence& seq, const std::vector<TargetGate>& targets,
                                         const IonSet& ions) {
    check_targets(targets, ions);
    if (seq.empty()) throw std::invalid_argument("cost_gradient: empty sequence");
    const auto res = detail::evaluate(detail::pack(seq), detail::target_matrices(targets), ions.a_pi, true);
    std::vector<double> g(res.J.cols(), 0.0);
    for (std::size_t k = 0; k < ions.size(); ++k) {
        const auto block = res.r.segment(9 * static_cast<int>(k), 9);
        const double norm = block.norm();
        if (norm == 0.0) continue;
        const Eigen::VectorXd gk = res.J.middleRows(9 * static_cast<int>(k), 9).transpose() * block / norm;
        for (int i = 0; i < gk.size(); ++i) g[i] += gk[i];
    }
    return g;
}

/// ceil(3N/2): N ions carry 3N gate parameters, each pulse offers two.
inline std::size_t required_pulse_count(std::size_t n_ions) {
    if (n_ions == 0) throw std::invalid_argument("required_pulse_count: zero ions");
    return (3 * n_ions + 1) / 2;
}

struct SynthesisOptions {
    std::size_t n_pulses = 4;
    std::uint64_t seed = 0;
    double tol = 1e-9;
    std::size_t max_restarts = 200;
    std::size_t max_iterations = 400;
    double duration = 2.12e-6;
    double ramp_time = 120e-9;
    double inter_pulse_delay = 2e-6;
};

struct SynthesisResult {
    PulseSequence sequence;
    double residual_cost = std::numeric_limits<double>::infinity();
    std::vector<double> per_ion_distance;
    std::size_t attempts = 0;
    bool converged = false;
};

namespace detail {

// Levenberg-Marquardt on the stacked SO(3) residuals. Returns the final
// parameter vector.
inline Eigen::VectorXd levenberg_marquardt(Eigen::VectorXd x, const std::vector<Mat3>& targets,
                                           const std::vector<double>& a_pi, std::size_t max_iterations) {
    const int p = static_cast<int>(x.size());
    Residuals cur = evaluate(x, targets, a_pi, true);
    double f = 0.5 * cur.r.squaredNorm();
    double lambda = 1e-3;
    for (std::size_t it = 0; it < max_iterations && f > 1e-30; ++it) {
        const Eigen::MatrixXd A = cur.J.transpose() * cur.J;
        const Eigen::VectorXd g = cur.J.transpose() * cur.r;
        if (g.lpNorm<Eigen::Infinity>() < 1e-16) break;
        bool accepted = false;
        while (lambda < 1e16) {
            Eigen::MatrixXd damped = A;
            for (int i = 0; i < p; ++i) damped(i, i) += lambda * std::max(A(i, i), 1e-9);
            const Eigen::VectorXd step = damped.ldlt().solve(-g);
            const Eigen::VectorXd trial = x + step;
            Residuals next = evaluate(trial, targets, a_pi, false);
            const double f_next = 0.5 * next.r.squaredNorm();
            if (std::isfinite(f_next) && f_next < f) {
                x = trial;
                f = f_next;
                cur = evaluate(x, targets, a_pi, true);
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if (!accepted) break;
    }
    return x;
}

inline PulseSequence unpack(const Eigen::VectorXd& x, const SynthesisOptions& opt) {
    const int n = static_cast<int>(x.size() / 2);
    PulseSequence seq;
    seq.inter_pulse_delay = opt.inter_pulse_delay;
    for (int j = 0; j < n; ++j) {
        Pulse p;
        p.amplitude = x[j];
        p.phase = x[n + j];
        if (p.amplitude < 0) {
            p.amplitude = -p.amplitude;
            p.phase += kPi;
        }
        p.phase = wrap_angle(p.phase);
        p.duration = opt.duration;
        p.ramp_time = opt.ramp_time;
        seq.pulses.push_back(p);
    }
    return seq;
}

}  // namespace detail

/// Multi-start least-squares search. Restart r draws amplitudes uniformly in
/// [0, 2·max(a_pi)] and phases in [0, 2π) from the stream (seed, r). Stops at
/// the first restart whose cost is below tol; otherwise returns the best
/// candidate (lowest cost, earliest restart on ties) with converged = false.
inline SynthesisResult synthesize(const std::vector<TargetGate>& targets, const IonSet& ions,
                                  const SynthesisOptions& opt) {
    check_targets(targets, ions);
    if (opt.n_pulses == 0) throw std::invalid_argument("synthesize: n_pulses must be >= 1");
    if (opt.max_restarts == 0) throw std::invalid_argument("synthesize: restart budget must be >= 1");
    const auto tmats = detail::target_matrices(targets);
    const int n = static_cast<int>(opt.n_pulses);
    const double amp_hi = 2.0 * ions.max_a_pi();

    SynthesisResult best;
    for (std::size_t restart = 0; restart < opt.max_restarts; ++restart) {
        Rng rng = make_rng(opt.seed, {restart});
        Eigen::VectorXd x(2 * n);
        for (int j = 0; j < n; ++j) x[j] = uniform(rng, 0.0, amp_hi);
        for (int j = 0; j < n; ++j) x[n + j] = uniform(rng, 0.0, kTwoPi);
        x = detail::levenberg_marquardt(x, tmats, ions.a_pi, opt.max_iterations);
        PulseSequence seq = detail::unpack(x, opt);
        const auto dist = per_ion_distance(seq, targets, ions);
        double c = 0.0;
        for (double d : dist) c += d;
        if (c < best.residual_cost) {
            best.sequence = std::move(seq);
            best.residual_cost = c;
            best.per_ion_distance = dist;
        }
        best.attempts = restart + 1;
        if (best.residual_cost < opt.tol) {
            best.converged = true;
            break;
        }
    }
    return best;
}

/// Adds `delta_axis` to every pulse phase. Each realized gate G becomes
/// Rz(Δ)·G·Rz(−Δ).
inline PulseSequence shift_phases(const PulseSequence& seq, double delta_axis) {
    PulseSequence out = seq;
    if (delta_axis == 0.0) return out;
    for (Pulse& p : out.pulses) p.phase = wrap_angle(p.phase + delta_axis);
    return out;
}

// ---------------------------------------------------------------------------
// Addressed gate alphabet and its orbits under simultaneous axis shifts

/// Declaration order is the lexicographic order used for orbit representatives.
enum class AddressedGate : int { XPlus = 0, XMinus = 1, YPlus = 2, YMinus = 3, I = 4 };

inline constexpr std::array<AddressedGate, 5> kAddressedGates{AddressedGate::XPlus, AddressedGate::XMinus,
                                                              AddressedGate::YPlus, AddressedGate::YMinus,
                                                              AddressedGate::I};

inline AddressedGate to_addressed(Generator g) { return static_cast<AddressedGate>(static_cast<int>(g)); }

inline std::string to_string(AddressedGate g) {
    return g == AddressedGate::I ? "I" : to_string(static_cast<Generator>(static_cast<int>(g)));
}

inline AddressedGate addressed_gate_from_string(const std::string& s) {
    for (AddressedGate g : kAddressedGates) {
        if (to_string(g) == s) return g;
    }
    throw std::invalid_argument("unknown addressed gate '" + s + "'");
}

inline TargetGate to_target(AddressedGate g) {
    if (g == AddressedGate::I) return {};
    return {kPi / 2, generator_phase(static_cast<Generator>(static_cast<int>(g))), 0.0};
}

inline Rotation to_rotation(AddressedGate g) { return to_rotation(to_target(g)); }

/// Image of `g` under an axis shift of steps·π/2 (X+ → Y+ → X− → Y− → X+).
inline AddressedGate shift_gate(AddressedGate g, int steps) {
    if (g == AddressedGate::I) return g;
    static constexpr std::array<AddressedGate, 4> cycle{AddressedGate::XPlus, AddressedGate::YPlus,
                                                        AddressedGate::XMinus, AddressedGate::YMinus};
    int pos = 0;
    while (cycle[pos] != g) ++pos;
    return cycle[((pos + steps) % 4 + 4) % 4];
}

using GatePair = std::pair<AddressedGate, AddressedGate>;

inline std::string to_string(const GatePair& p) { return "(" + to_string(p.first) + ", " + to_string(p.second) + ")"; }

struct OrbitMember {
    GatePair pair;
    int shift_steps = 0;  // member = shift(representative, shift_steps·π/2)
    double shift_angle() const { return shift_steps * kPi / 2; }
};

struct Orbit {
    GatePair representative;
    std::vector<OrbitMember> members;
};

/// All ordered pairs over {X±, Y±, I}: 25.
inline std::vector<GatePair> all_gate_pairs() {
    std::vector<GatePair> v;
    for (AddressedGate a : kAddressedGates) {
        for (AddressedGate b : kAddressedGates) v.emplace_back(a, b);
    }
    return v;
}

/// Partitions the 24 pairs other than (I, I) under simultaneous shifts by
/// {0, π/2, π, 3π/2}. Orbits and members are sorted lexicographically; the
/// representative is the smallest member.
inline std::vector<Orbit> orbit_classes() {
    std::vector<Orbit> orbits;
    std::vector<GatePair> seen;
    for (const GatePair& p : all_gate_pairs()) {
        if (p.first == AddressedGate::I && p.second == AddressedGate::I) continue;
        if (std::find(seen.begin(), seen.end(), p) != seen.end()) continue;
        Orbit o;
        o.representative = p;  // pairs are visited in lexicographic order
        for (int s = 0; s < 4; ++s) {
            const GatePair m{shift_gate(p.first, s), shift_gate(p.second, s)};
            if (std::find(seen.begin(), seen.end(), m) != seen.end()) continue;
            seen.push_back(m);
            o.members.push_back({m, s});
        }
        std::sort(o.members.begin(), o.members.end(),
                  [](const OrbitMember& a, const OrbitMember& b) { return a.pair < b.pair; });
        orbits.push_back(std::move(o));
    }
    return orbits;
}

/// (orbit index, member) for `pair`. Throws for (I, I).
inline std::pair<std::size_t, OrbitMember> locate_orbit(const std::vector<Orbit>& orbits, const GatePair& pair) {
    for (std::size_t i = 0; i < orbits.size(); ++i) {
        for (const auto& m : orbits[i].members) {
            if (m.pair == pair) return {i, m};
        }
    }
    throw std::invalid_argument("no orbit contains " + to_string(pair));
}

/// One synthesized sequence per orbit representative, for a two-ion register.
struct SequenceLibrary {
    IonSet ions;
    std::vector<Orbit> orbits;
    std::vector<PulseSequence> sequences;  // indexed like orbits
    std::vector<double> residuals;

    /// Sequence realizing `pair` (representative shifted by the member angle).
    PulseSequence sequence_for(const GatePair& pair) const {
        if (pair.first == AddressedGate::I && pair.second == AddressedGate::I) {
            throw std::invalid_argument("SequenceLibrary: (I, I) is never requested");
        }
        const auto [idx, member] = locate_orbit(orbits, pair);
        if (idx >= sequences.size() || sequences[idx].empty()) {
            throw std::invalid_argument("SequenceLibrary: missing sequence for orbit of " + to_string(pair));
        }
        return shift_phases(sequences[idx], member.shift_angle());
    }
};

inline std::vector<TargetGate> pair_targets(const GatePair& p) { return {to_target(p.first), to_target(p.second)}; }

/// Synthesizes every orbit representative. Orbit i uses seed stream (seed, i).
/// Throws std::runtime_error if any representative fails to converge.
inline SequenceLibrary build_library(const IonSet& ions, const SynthesisOptions& opt) {
    if (ions.size() != 2) throw std::invalid_argument("build_library: two ions required");
    SequenceLibrary lib;
    lib.ions = ions;
    lib.orbits = orbit_classes();
    for (std::size_t i = 0; i < lib.orbits.size(); ++i) {
        SynthesisOptions o = opt;
        o.seed = derive_seed(opt.seed, {0x11B, i});
        const auto res = synthesize(pair_targets(lib.orbits[i].representative), ions, o);
        if (!res.converged) {
            throw std::runtime_error("build_library: synthesis did not converge for " +
                                     to_string(lib.orbits[i].representative) + " (residual " +
                                     std::to_string(res.residual_cost) + ")");
        }
        lib.sequences.push_back(res.sequence);
        lib.residuals.push_back(res.residual_cost);
    }
    return lib;
}

// ---------------------------------------------------------------------------
// Sequence exchange document

inline nlohmann::json sequence_to_json(const PulseSequence& seq, const std::vector<TargetGate>& targets,
                                       const IonSet& ions, double residual_cost) {
    nlohmann::json j;
    j["duration_s"] = seq.empty() ? 0.0 : seq.pulses.front().duration;
    j["ramp_s"] = seq.empty() ? 0.0 : seq.pulses.front().ramp_time;
    j["delay_s"] = seq.inter_pulse_delay;
    j["pulses"] = nlohmann::json::array();
    for (const Pulse& p : seq.pulses) j["pulses"].push_back({{"amplitude", p.amplitude}, {"phase_rad", p.phase}});
    j["targets"] = nlohmann::json::array();
    for (const TargetGate& t : targets) j["targets"].push_back({{"theta", t.theta}, {"phi", t.phi}, {"delta", t.delta}});
    j["a_pi"] = ions.a_pi;
    j["residual_cost"] = residual_cost;
    return j;
}

struct SequenceDocument {
    PulseSequence sequence;
    std::vector<TargetGate> targets;
    IonSet ions;
    double residual_cost = 0.0;
};

inline SequenceDocument sequence_from_json(const nlohmann::json& j) {
    SequenceDocument d;
    const double duration = j.at("duration_s").get<double>();
    const double ramp = j.at("ramp_s").get<double>();
    d.sequence.inter_pulse_delay = j.at("delay_s").get<double>();
    for (const auto& p : j.at("pulses")) {
        d.sequence.pulses.push_back(
            {p.at("amplitude").get<double>(), p.at("phase_rad").get<double>(), duration, ramp});
    }
    for (const auto& t : j.at("targets")) {
        d.targets.push_back({t.at("theta").get<double>(), t.at("phi").get<double>(), t.at("delta").get<double>()});
    }
    d.ions = IonSet(j.at("a_pi").get<std::vector<double>>());
    d.residual_cost = j.at("residual_cost").get<double>();
    d.sequence.validate();
    return d;
}

}  // namespace ionaddr
