#pragma once

// Pulse-level density-operator simulation of a driven qubit.
//
// Levels 0 and 1 are the qubit; levels 2.. are optional spectator states, each
// coupled to one qubit level. The Hamiltonian is written in the frame of the
// drive:
//
//   H(t) = Ω(t)/2 (cos φ σx + sin φ σy) + δ/2 σz + Σ_s [E_s |s><s| + r_s Ω(t)/2 (e^{-iφ}|s><l_s| + h.c.)]
//
// Coherent evolution uses fixed-step RK4 on the propagator; dephasing (phase
// flip on level 1) and leakage (population loss out of the register) are
// applied by operator splitting after every step. A pulse is compiled into a
// superoperator acting on vec(ρ) (column-major), so a pulse shape is simulated
// once and reused.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionaddr/rotor.hpp"
#include "ionaddr/synth.hpp"

namespace ionaddr {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

struct Spectator {
    double detuning_hz = 100e6;
    double relative_rabi = 1.0;
    int level = 0;  // qubit level the spectator couples to
};

/// Classical Rabi-frequency modulation from thermal ion motion.
struct MotionModel {
    double mode_freq_hz = 5.66e6;
    double rel_amp_mod = 0.0;
    bool enabled = false;
    int phase_points = 8;

    /// Modulation depth 2η√n̄: the classical excursion of a mode with mean
    /// occupation n̄ in units of the ground-state extent, times the coupling η.
    static MotionModel thermal(double eta, double nbar, double mode_freq_hz) {
        MotionModel m;
        m.mode_freq_hz = mode_freq_hz;
        m.rel_amp_mod = 2.0 * eta * std::sqrt(nbar);
        m.enabled = true;
        return m;
    }
};

struct DriftPoint {
    double time_s = 0.0;
    double amp_scale = 1.0;
};

/// Peak Rabi frequency of a 0.6 µs π/2 pulse with 120 ns ramps: 1/(4·480 ns).
inline constexpr double kReferenceRabiHz = 1.0 / (4.0 * 480e-9);

struct NoiseModel {
    double detuning_hz = 0.0;
    double t2_s = std::numeric_limits<double>::infinity();
    double amp_scale = 1.0;
    std::vector<DriftPoint> amp_drift;  // overrides amp_scale when non-empty
    double zeeman_shift_hz = 0.0;       // at a peak Rabi frequency of zeeman_ref_rabi_hz
    double zeeman_comp_hz = 0.0;
    double zeeman_ref_rabi_hz = kReferenceRabiHz;
    std::vector<Spectator> spectators;
    double leakage_per_s = 0.0;
    MotionModel motion;

    std::size_t dim() const { return 2 + spectators.size(); }

    void validate() const {
        if (!(t2_s > 0.0)) throw std::invalid_argument("NoiseModel: t2_s must be > 0");
        if (!(leakage_per_s >= 0.0)) throw std::invalid_argument("NoiseModel: leakage_per_s must be >= 0");
        if (!(amp_scale > 0.0)) throw std::invalid_argument("NoiseModel: amp_scale must be > 0");
        if (!(zeeman_ref_rabi_hz > 0.0)) throw std::invalid_argument("NoiseModel: zeeman_ref_rabi_hz must be > 0");
        if (motion.enabled && !(motion.mode_freq_hz > 0.0)) {
            throw std::invalid_argument("NoiseModel: motion.mode_freq_hz must be > 0 when enabled");
        }
        if (motion.enabled && motion.phase_points < 1) throw std::invalid_argument("NoiseModel: phase_points < 1");
        for (const auto& s : spectators) {
            if (s.level != 0 && s.level != 1) throw std::invalid_argument("NoiseModel: spectator level must be 0 or 1");
        }
        for (std::size_t i = 1; i < amp_drift.size(); ++i) {
            if (!(amp_drift[i].time_s > amp_drift[i - 1].time_s)) {
                throw std::invalid_argument("NoiseModel: amp_drift times must be strictly increasing");
            }
        }
        for (const auto& d : amp_drift) {
            if (!(d.amp_scale > 0.0)) throw std::invalid_argument("NoiseModel: amp_drift scale must be > 0");
        }
    }

    /// Piecewise-linear drift trace, clamped at both ends.
    double amp_scale_at(double t) const {
        if (amp_drift.empty()) return amp_scale;
        if (t <= amp_drift.front().time_s) return amp_drift.front().amp_scale;
        if (t >= amp_drift.back().time_s) return amp_drift.back().amp_scale;
        const auto it = std::upper_bound(amp_drift.begin(), amp_drift.end(), t,
                                         [](double v, const DriftPoint& p) { return v < p.time_s; });
        const DriftPoint& b = *it;
        const DriftPoint& a = *(it - 1);
        const double f = (t - a.time_s) / (b.time_s - a.time_s);
        return a.amp_scale + f * (b.amp_scale - a.amp_scale);
    }
};

struct SimOptions {
    double max_step_s = 1e-9;
    double steps_per_period = 50.0;
    double fixed_step_s = 0.0;  // > 0 forces this step; rejected if too coarse
    double psd_tolerance = 1e-10;
};

struct QubitState {
    CMatrix rho;
    double leaked = 0.0;       // population that left the register
    double frame_phase = 0.0;  // accumulated drive-frame phase, rad
    double time_s = 0.0;

    static QubitState ground(std::size_t dim = 2) {
        QubitState s;
        s.rho = CMatrix::Zero(dim, dim);
        s.rho(0, 0) = 1.0;
        return s;
    }

    static QubitState pure(const CVector& psi) {
        QubitState s;
        const CVector v = psi / psi.norm();
        s.rho = v * v.adjoint();
        return s;
    }

    std::size_t dim() const { return static_cast<std::size_t>(rho.rows()); }
    double population(std::size_t level) const { return rho(level, level).real(); }
    double trace() const { return rho.trace().real(); }

    /// (⟨σx⟩, ⟨σy⟩, ⟨σz⟩) of the qubit block.
    Vec3 bloch() const {
        return {2.0 * rho(1, 0).real(), 2.0 * rho(1, 0).imag(), (rho(0, 0) - rho(1, 1)).real()};
    }

    double min_eigenvalue() const {
        const CMatrix h = 0.5 * (rho + rho.adjoint());
        Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }

    double fidelity(const CVector& psi) const { return (psi.adjoint() * rho * psi)(0, 0).real(); }
};

/// 2×2 unitary of a rotation: w·I − i(xσx + yσy + zσz).
inline Eigen::Matrix2cd to_unitary(const Rotation& r) {
    const cplx i(0, 1);
    Eigen::Matrix2cd u;
    u << r.w() - i * r.z(), -i * r.x() - r.y(), -i * r.x() + r.y(), r.w() + i * r.z();
    return u;
}

/// sin² rise over ramp_time, flat top, mirrored fall.
inline double envelope(double t, const Pulse& pulse) {
    if (t < 0.0 || t > pulse.duration) throw std::out_of_range("envelope: t outside pulse");
    const double tr = pulse.ramp_time;
    if (tr <= 0.0) return 1.0;
    auto rise = [tr](double u) {
        const double s = std::sin(kPi * u / (2.0 * tr));
        return s * s;
    };
    if (t < tr) return rise(t);
    if (t > pulse.duration - tr) return rise(pulse.duration - t);
    return 1.0;
}

/// ∫ envelope dt.
inline double envelope_area(const Pulse& pulse) { return pulse.duration - pulse.ramp_time; }

// ---------------------------------------------------------------------------
// Superoperators on vec(ρ), column-major: index i + d·j addresses ρ(i, j).

class Superop {
public:
    Superop() = default;
    explicit Superop(std::size_t dim) : dim_(dim), m_(CMatrix::Identity(dim * dim, dim * dim)) {}
    Superop(std::size_t dim, CMatrix m) : dim_(dim), m_(std::move(m)) {}

    std::size_t dim() const { return dim_; }
    const CMatrix& matrix() const { return m_; }

    /// this ∘ first: apply `first`, then this.
    Superop after(const Superop& first) const { return Superop(dim_, m_ * first.m_); }

    Superop power(std::size_t n) const {
        Superop result(dim_);
        CMatrix base = m_;
        while (n > 0) {
            if (n & 1u) result.m_ = base * result.m_;
            n >>= 1u;
            if (n) base = base * base;
        }
        return result;
    }

    CMatrix apply(const CMatrix& rho) const {
        const CVector v = Eigen::Map<const CVector>(rho.data(), rho.size());
        const CVector out = m_ * v;
        return Eigen::Map<const CMatrix>(out.data(), static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
    }

    Superop& operator+=(const Superop& o) {
        m_ += o.m_;
        return *this;
    }
    Superop& operator*=(double s) {
        m_ *= s;
        return *this;
    }

private:
    std::size_t dim_ = 0;
    CMatrix m_;
};

namespace detail {

// vec(P ρ P†) = (conj(P) ⊗ P) vec(ρ)
inline CMatrix conjugation_superop(const CMatrix& p) {
    const Eigen::Index d = p.rows();
    CMatrix s(d * d, d * d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index l = 0; l < d; ++l) s.block(j * d, l * d, d, d) = std::conj(p(j, l)) * p;
    return s;
}

// Phase flip on level 1 with probability p, then uniform loss.
inline void apply_channels(CMatrix& s, std::size_t d, double flip_p, double keep) {
    const double c = 1.0 - 2.0 * flip_p;
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) {
            double f = keep;
            if ((i == 1) != (j == 1)) f *= c;
            if (f != 1.0) s.row(static_cast<Eigen::Index>(i + d * j)) *= f;
        }
    }
}

// Applies one step to every column of a superoperator: each column is a
// vec(ρ), mapped to channels(P ρ P†). Cheaper than forming the d²×d² step.
inline void step_columns(CMatrix& s, std::size_t d, const CMatrix& p, double flip_p, double keep) {
    const auto di = static_cast<Eigen::Index>(d);
    const double c = 1.0 - 2.0 * flip_p;
    const CMatrix padj = p.adjoint();
    CMatrix tmp(di, di);
    for (Eigen::Index col = 0; col < s.cols(); ++col) {
        Eigen::Map<CMatrix> rho(s.col(col).data(), di, di);
        tmp.noalias() = p * rho;
        rho.noalias() = tmp * padj;
        for (Eigen::Index j = 0; j < di; ++j)
            for (Eigen::Index i = 0; i < di; ++i) rho(i, j) *= ((i == 1) != (j == 1)) ? keep * c : keep;
    }
}

inline double flip_probability(double dt, double t2) {
    if (!std::isfinite(t2)) return 0.0;
    return 0.5 * (1.0 - std::exp(-dt / t2));
}

struct DriveTerms {
    CMatrix static_part;  // detuning and spectator energies
    CMatrix coupling;     // Hermitian; multiplied by Ω(t)/2
};

inline DriveTerms drive_terms(const NoiseModel& noise, double phase, double detuning_rad) {
    const std::size_t d = noise.dim();
    DriveTerms t{CMatrix::Zero(d, d), CMatrix::Zero(d, d)};
    t.static_part(0, 0) = 0.5 * detuning_rad;
    t.static_part(1, 1) = -0.5 * detuning_rad;
    const cplx e = std::polar(1.0, -phase);
    t.coupling(0, 1) = e;
    t.coupling(1, 0) = std::conj(e);
    for (std::size_t s = 0; s < noise.spectators.size(); ++s) {
        const auto& sp = noise.spectators[s];
        const std::size_t k = 2 + s;
        const std::size_t l = static_cast<std::size_t>(sp.level);
        t.static_part(k, k) = t.static_part(l, l) + kTwoPi * sp.detuning_hz;
        t.coupling(k, l) = sp.relative_rabi * e;
        t.coupling(l, k) = sp.relative_rabi * std::conj(e);
    }
    return t;
}

// One RK4 step of dU/dt = -i H(t) U from U = I.
template <class RabiFn>
CMatrix rk4_step(const DriveTerms& terms, const RabiFn& rabi, double t, double h) {
    const cplx mi(0, -1);
    const Eigen::Index d = terms.static_part.rows();
    const CMatrix id = CMatrix::Identity(d, d);
    const CMatrix h0 = terms.static_part + 0.5 * rabi(t) * terms.coupling;
    const CMatrix hm = terms.static_part + 0.5 * rabi(t + 0.5 * h) * terms.coupling;
    const CMatrix h1 = terms.static_part + 0.5 * rabi(t + h) * terms.coupling;
    const CMatrix k1 = mi * h0;
    const CMatrix k2 = mi * hm * (id + 0.5 * h * k1);
    const CMatrix k3 = mi * hm * (id + 0.5 * h * k2);
    const CMatrix k4 = mi * h1 * (id + h * k3);
    return id + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Effective in-pulse detuning in Hz for a pulse with the given peak Rabi
/// frequency: static detuning plus the AC Zeeman shift (∝ field²) minus the
/// applied compensation.
inline double pulse_detuning_hz(const NoiseModel& noise, double peak_rabi_hz) {
    const double ratio = peak_rabi_hz / noise.zeeman_ref_rabi_hz;
    return noise.detuning_hz + noise.zeeman_shift_hz * ratio * ratio - noise.zeeman_comp_hz;
}

/// Peak Rabi angular frequency (rad/s) of `pulse` on an ion with π amplitude a_pi.
inline double peak_rabi(const Pulse& pulse, double a_pi, double amp_scale) {
    return kPi * amp_scale * pulse.amplitude / (a_pi * envelope_area(pulse));
}

/// Superoperator of one pulse starting at absolute time `t_start` (used only
/// to look up amplitude drift).
inline Superop pulse_superop(const Pulse& pulse, double a_pi, const NoiseModel& noise, const SimOptions& opt = {},
                             double t_start = 0.0) {
    pulse.validate();
    noise.validate();
    if (!(a_pi > 0.0)) throw std::invalid_argument("propagate_pulse: a_pi must be > 0");
    const std::size_t d = noise.dim();
    const double omega = peak_rabi(pulse, a_pi, noise.amp_scale_at(t_start));
    const double det_hz = pulse_detuning_hz(noise, omega / kTwoPi);
    const bool motion = noise.motion.enabled && noise.motion.rel_amp_mod != 0.0;
    const double mod = motion ? noise.motion.rel_amp_mod : 0.0;

    double f_max = std::max(omega * (1.0 + std::abs(mod)) / kTwoPi, std::abs(det_hz));
    for (const auto& s : noise.spectators) {
        f_max = std::max(f_max, std::abs(s.detuning_hz) + std::abs(s.relative_rabi) * omega / kTwoPi);
    }
    if (motion) f_max = std::max(f_max, noise.motion.mode_freq_hz);
    const double h_limit = f_max > 0.0 ? 1.0 / (opt.steps_per_period * f_max) : std::numeric_limits<double>::infinity();
    double h_max = std::min(opt.max_step_s, h_limit);
    if (opt.fixed_step_s > 0.0) {
        if (opt.fixed_step_s > h_limit * (1.0 + 1e-12)) {
            throw std::domain_error("propagate_pulse: step " + std::to_string(opt.fixed_step_s) +
                                    " s exceeds 1/(" + std::to_string(opt.steps_per_period) + "·f_max) = " +
                                    std::to_string(h_limit) + " s");
        }
        h_max = opt.fixed_step_s;
    }

    const auto terms = detail::drive_terms(noise, pulse.phase, kTwoPi * det_hz);
    const double keep_rate = noise.leakage_per_s;

    // Segment boundaries: rise, flat top, fall.
    const double tr = pulse.ramp_time;
    const std::array<double, 4> edges{0.0, tr, pulse.duration - tr, pulse.duration};

    const int n_phase = motion ? noise.motion.phase_points : 1;
    Superop total(d);
    total *= 0.0;
    for (int ip = 0; ip < n_phase; ++ip) {
        const double psi = kTwoPi * ip / n_phase;
        auto rabi = [&](double t) {
            double r = omega * envelope(std::clamp(t, 0.0, pulse.duration), pulse);
            if (motion) r *= 1.0 + mod * std::sin(kTwoPi * noise.motion.mode_freq_hz * t + psi);
            return r;
        };
        Superop acc(d);
        for (int seg = 0; seg < 3; ++seg) {
            const double len = edges[seg + 1] - edges[seg];
            if (len <= 0.0) continue;
            const auto n = static_cast<std::size_t>(std::ceil(len / h_max - 1e-9));
            const double h = len / static_cast<double>(n);
            const double flip = detail::flip_probability(h, noise.t2_s);
            const double keep = std::exp(-keep_rate * h);
            if (seg == 1 && !motion) {
                CMatrix s = detail::conjugation_superop(detail::rk4_step(terms, rabi, edges[1], h));
                detail::apply_channels(s, d, flip, keep);
                acc = Superop(d, std::move(s)).power(n).after(acc);
            } else {
                CMatrix m = acc.matrix();
                for (std::size_t k = 0; k < n; ++k) {
                    detail::step_columns(m, d, detail::rk4_step(terms, rabi, edges[seg] + h * static_cast<double>(k), h),
                                         flip, keep);
                }
                acc = Superop(d, std::move(m));
            }
        }
        total += acc;
    }
    total *= 1.0 / n_phase;
    return total;
}

/// Free evolution: detuning only (the AC Zeeman shift is absent without drive).
inline Superop delay_superop(double dt, const NoiseModel& noise) {
    if (!(dt >= 0.0)) throw std::invalid_argument("propagate_delay: dt must be >= 0");
    noise.validate();
    const std::size_t d = noise.dim();
    const auto terms = detail::drive_terms(noise, 0.0, kTwoPi * noise.detuning_hz);
    CMatrix u = CMatrix::Zero(d, d);
    for (std::size_t i = 0; i < d; ++i) u(i, i) = std::polar(1.0, -terms.static_part(i, i).real() * dt);
    CMatrix s = detail::conjugation_superop(u);
    detail::apply_channels(s, d, detail::flip_probability(dt, noise.t2_s), std::exp(-noise.leakage_per_s * dt));
    return Superop(d, std::move(s));
}

inline void check_state(const QubitState& s, double tol) {
    if (s.min_eigenvalue() < -tol) throw std::runtime_error("qsim: density operator lost positivity");
}

inline void apply_superop(QubitState& s, const Superop& op) {
    if (s.dim() != op.dim()) {
        throw std::invalid_argument("qsim: state dimension " + std::to_string(s.dim()) + " does not match model " +
                                    std::to_string(op.dim()));
    }
    const double before = s.trace();
    s.rho = op.apply(s.rho);
    s.leaked += before - s.trace();
}

inline QubitState propagate_pulse(QubitState state, const Pulse& pulse, double ion_a_pi, const NoiseModel& noise,
                                  const SimOptions& opt = {}) {
    apply_superop(state, pulse_superop(pulse, ion_a_pi, noise, opt, state.time_s));
    state.time_s += pulse.duration;
    check_state(state, opt.psd_tolerance);
    return state;
}

/// Also advances frame_phase by the phase the compensated oscillator gains on
/// the qubit, which the controller adds to the next pulse's phase.
inline QubitState propagate_delay(QubitState state, double dt, const NoiseModel& noise) {
    if (!(dt >= 0.0)) throw std::invalid_argument("propagate_delay: dt must be >= 0");
    if (dt == 0.0) return state;
    apply_superop(state, delay_superop(dt, noise));
    state.frame_phase = wrap_angle(state.frame_phase + kTwoPi * noise.zeeman_comp_hz * dt);
    state.time_s += dt;
    return state;
}

/// Single-owner simulator that memoizes pulse and delay superoperators. With
/// amplitude drift, the drift value at each pulse start is part of the key.
class Simulator {
public:
    explicit Simulator(NoiseModel noise, SimOptions opt = {}) : noise_(std::move(noise)), opt_(opt) {
        noise_.validate();
    }

    const NoiseModel& noise() const { return noise_; }
    const SimOptions& options() const { return opt_; }

    const Superop& pulse_map(const Pulse& p, double a_pi, double t_start) {
        const std::array<double, 6> key{p.amplitude, p.phase, p.duration, p.ramp_time, a_pi,
                                        noise_.amp_scale_at(t_start)};
        auto it = pulses_.find(key);
        if (it == pulses_.end()) it = pulses_.emplace(key, pulse_superop(p, a_pi, noise_, opt_, t_start)).first;
        return it->second;
    }

    const Superop& delay_map(double dt) {
        auto it = delays_.find(dt);
        if (it == delays_.end()) it = delays_.emplace(dt, delay_superop(dt, noise_)).first;
        return it->second;
    }

    void pulse(QubitState& s, const Pulse& p, double a_pi) {
        apply_superop(s, pulse_map(p, a_pi, s.time_s));
        s.time_s += p.duration;
    }

    void delay(QubitState& s, double dt) {
        if (!(dt >= 0.0)) throw std::invalid_argument("propagate_delay: dt must be >= 0");
        if (dt == 0.0) return;
        apply_superop(s, delay_map(dt));
        s.frame_phase = wrap_angle(s.frame_phase + kTwoPi * noise_.zeeman_comp_hz * dt);
        s.time_s += dt;
    }

    /// Every pulse is followed by the sequence's inter-pulse delay.
    void run(QubitState& s, const PulseSequence& seq, double a_pi) {
        seq.validate();
        for (const Pulse& p : seq.pulses) {
            pulse(s, p, a_pi);
            delay(s, seq.inter_pulse_delay);
        }
    }

    /// Superoperator of a whole sequence, starting at t = 0 (no drift support).
    Superop sequence_map(const PulseSequence& seq, double a_pi) {
        Superop acc(noise_.dim());
        for (const Pulse& p : seq.pulses) {
            acc = pulse_map(p, a_pi, 0.0).after(acc);
            acc = delay_map(seq.inter_pulse_delay).after(acc);
        }
        return acc;
    }

    void check(const QubitState& s) const { check_state(s, opt_.psd_tolerance); }

private:
    NoiseModel noise_;
    SimOptions opt_;
    std::map<std::array<double, 6>, Superop> pulses_;
    std::map<double, Superop> delays_;
};

inline QubitState run_sequence(QubitState state, const PulseSequence& seq, double ion_a_pi, const NoiseModel& noise,
                               const SimOptions& opt = {}) {
    Simulator sim(noise, opt);
    sim.run(state, seq, ion_a_pi);
    sim.check(state);
    return state;
}

// ---------------------------------------------------------------------------
// Error metrics

/// The six Pauli eigenstates (a state 2-design), embedded in `dim` levels.
inline std::vector<CVector> pauli_eigenstates(std::size_t dim) {
    const double r = 1.0 / std::sqrt(2.0);
    const cplx i(0, 1);
    const std::array<std::array<cplx, 2>, 6> amps{{{1, 0}, {0, 1}, {r, r}, {r, -r}, {r, i * r}, {r, -i * r}}};
    std::vector<CVector> out;
    for (const auto& a : amps) {
        CVector v = CVector::Zero(static_cast<Eigen::Index>(dim));
        v[0] = a[0];
        v[1] = a[1];
        out.push_back(v);
    }
    return out;
}

/// 1 − average gate fidelity of `op` relative to the ideal qubit rotation.
/// Population lost from the qubit block counts as error.
inline double average_infidelity(const Superop& op, const Rotation& ideal) {
    const std::size_t d = op.dim();
    const Eigen::Matrix2cd u = to_unitary(ideal);
    double f = 0.0;
    const auto states = pauli_eigenstates(d);
    for (const CVector& psi : states) {
        const CMatrix out = op.apply(psi * psi.adjoint());
        CVector target = CVector::Zero(static_cast<Eigen::Index>(d));
        target.head<2>() = u * psi.head<2>();
        f += (target.adjoint() * out * target)(0, 0).real();
    }
    return 1.0 - f / static_cast<double>(states.size());
}

/// Timing of the π/2 pulses from which Clifford gates are built.
struct CliffordStats {
    double pulses_per_clifford = 2.2;
    double pulse_s = 0.6e-6;
    double delay_s = 2e-6;
    double ramp_s = 120e-9;
    double a_pi = 1.0;

    Pulse half_pi_pulse(double phase = 0.0) const { return {0.5 * a_pi, phase, pulse_s, ramp_s}; }
};

/// Error-budget operating point. T2, leakage, the motional parameters and the
/// ~100 MHz spectator splitting are measured values; the detuning, amplitude
/// and Zeeman offsets are typical day-to-day residuals after calibration.
inline NoiseModel reference_noise_model() {
    NoiseModel n;
    n.t2_s = 4.6;
    n.leakage_per_s = 0.02;
    n.detuning_hz = 30.0;
    n.amp_scale = 1.0 + 3.0e-4;
    n.zeeman_shift_hz = 283.0;
    n.zeeman_comp_hz = 283.0 - 39.0;
    n.spectators = {{-100e6, 1.0, 0}, {100e6, 1.0, 0}, {-100e6, 1.0, 1}, {100e6, 1.0, 1}};
    n.motion = MotionModel::thermal(8e-4, 23.0, 5.66e6);
    return n;
}

/// Error of one π/2 pulse followed by its inter-pulse delay.
inline double pulse_slot_error(const NoiseModel& noise, const CliffordStats& stats, const SimOptions& opt = {}) {
    const Pulse p = stats.half_pi_pulse();
    const Superop slot = delay_superop(stats.delay_s, noise).after(pulse_superop(p, stats.a_pi, noise, opt));
    return average_infidelity(slot, rot_from_axis_angle(0.0, kPi / 2));
}

struct BudgetRow {
    std::string source;
    double error_per_clifford = 0.0;
};

struct ErrorBudget {
    std::vector<BudgetRow> rows;
    double total = 0.0;
};

/// One noise source at a time, everything else ideal.
inline std::vector<std::pair<std::string, NoiseModel>> isolate_sources(const NoiseModel& noise) {
    std::vector<std::pair<std::string, NoiseModel>> out;
    const NoiseModel clean;
    auto add = [&](const std::string& name, bool active, auto&& set) {
        NoiseModel m = clean;
        if (active) set(m);
        out.emplace_back(name, active ? m : NoiseModel{});
    };
    add("decoherence", std::isfinite(noise.t2_s), [&](NoiseModel& m) { m.t2_s = noise.t2_s; });
    add("motion", noise.motion.enabled && noise.motion.rel_amp_mod != 0.0,
        [&](NoiseModel& m) { m.motion = noise.motion; });
    add("leakage", noise.leakage_per_s > 0.0, [&](NoiseModel& m) { m.leakage_per_s = noise.leakage_per_s; });
    add("amplitude", noise.amp_scale != 1.0, [&](NoiseModel& m) { m.amp_scale = noise.amp_scale; });
    add("detuning", noise.detuning_hz != 0.0, [&](NoiseModel& m) { m.detuning_hz = noise.detuning_hz; });
    add("zeeman", noise.zeeman_shift_hz != noise.zeeman_comp_hz || noise.zeeman_shift_hz != 0.0, [&](NoiseModel& m) {
        m.zeeman_shift_hz = noise.zeeman_shift_hz;
        m.zeeman_comp_hz = noise.zeeman_comp_hz;
        m.zeeman_ref_rabi_hz = noise.zeeman_ref_rabi_hz;
    });
    add("spectator", !noise.spectators.empty(), [&](NoiseModel& m) { m.spectators = noise.spectators; });
    return out;
}

/// Per-source error per Clifford: π/2 pulse plus delay, simulated with that
/// source alone and scaled by the pulses per Clifford. Inactive sources are 0.
inline ErrorBudget error_budget(const NoiseModel& noise, const CliffordStats& stats, const SimOptions& opt = {}) {
    noise.validate();
    ErrorBudget b;
    for (const auto& [name, model] : isolate_sources(noise)) {
        const bool inactive = model.dim() == 2 && !std::isfinite(model.t2_s) && model.leakage_per_s == 0.0 &&
                              model.amp_scale == 1.0 && model.detuning_hz == 0.0 && model.zeeman_shift_hz == 0.0 &&
                              model.zeeman_comp_hz == 0.0 && !model.motion.enabled;
        const double e = inactive ? 0.0 : stats.pulses_per_clifford * pulse_slot_error(model, stats, opt);
        b.rows.push_back({name, e});
        b.total += e;
    }
    return b;
}

}  // namespace ionaddr
