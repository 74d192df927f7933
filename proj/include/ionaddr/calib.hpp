#pragma once

// Simulated calibration experiments. A SimulatedIon hides the true noise and
// exposes only the knobs an experimenter has (amplitude factor, drive
// frequency offset, pulse-on compensation detuning) and measured populations.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionaddr/bench.hpp"
#include "ionaddr/io.hpp"
#include "ionaddr/qsim.hpp"
#include "ionaddr/random.hpp"
#include "ionaddr/synth.hpp"
#include "json.hpp"

namespace ionaddr {

struct HistoryRow {
    std::size_t step = 0;
    std::string parameter;
    double value = 0.0;
    double residual = 0.0;
};

struct CalibrationRecord {
    std::string parameter;
    double value = 0.0;     // calibrated setting
    double residual = 0.0;  // 1 − best figure of merit
    std::size_t iterations = 0;
    std::vector<HistoryRow> history;
};

class SimulatedIon {
public:
    explicit SimulatedIon(NoiseModel truth, double a_pi = 1.0, std::size_t shots = 0, std::uint64_t seed = 0,
                          SimOptions opt = {})
        : truth_(std::move(truth)), a_pi_(a_pi), shots_(shots), seed_(seed), opt_(opt) {
        truth_.validate();
        if (!(a_pi_ > 0.0)) throw std::invalid_argument("SimulatedIon: a_pi must be > 0");
    }

    // Controls.
    double amp_factor = 1.0;
    double freq_offset_hz = 0.0;
    double zeeman_comp_hz = 0.0;
    double clock_s = 0.0;  // wall time of the next experiment (drift lookup)

    double a_pi() const { return a_pi_; }
    std::size_t shots() const { return shots_; }
    std::size_t experiments() const { return counter_; }

    /// Starting in |0⟩, applies `repeats` × (each block pulse followed by
    /// delay_s) and returns the measured probability of `level`. Commanded
    /// amplitudes are multiplied by amp_factor.
    double probe(const std::vector<Pulse>& block, std::size_t repeats, double delay_s, std::size_t level,
                 bool compensate = true) {
        const NoiseModel eff = effective(compensate);
        Superop acc(eff.dim());
        for (Pulse p : block) {
            p.amplitude *= amp_factor;
            acc = pulse_superop(p, a_pi_, eff, opt_, clock_s).after(acc);
            acc = delay_superop(delay_s, eff).after(acc);
        }
        QubitState s = QubitState::ground(eff.dim());
        apply_superop(s, acc.power(repeats));
        check_state(s, opt_.psd_tolerance);
        const double p = std::clamp(s.population(level), 0.0, 1.0);
        const std::uint64_t n = counter_++;
        if (shots_ == 0) return p;
        Rng rng = make_rng(seed_, {0xCA11B, n});
        std::binomial_distribution<std::size_t> b(shots_, p);
        return static_cast<double>(b(rng)) / static_cast<double>(shots_);
    }

    NoiseModel effective(bool compensate = true) const {
        NoiseModel n = truth_;
        n.detuning_hz = truth_.detuning_hz - freq_offset_hz;
        n.zeeman_comp_hz = compensate ? zeeman_comp_hz : 0.0;
        return n;
    }

private:
    NoiseModel truth_;
    double a_pi_;
    std::size_t shots_;
    std::uint64_t seed_;
    SimOptions opt_;
    std::uint64_t counter_ = 0;
};

namespace detail {

struct Extremum {
    double x = 0.0;
    double f = 0.0;
    std::size_t evaluations = 0;
};

/// Grid scan over [lo, hi] followed by golden-section refinement around the
/// best grid point. Maximizes f.
template <class F>
Extremum scan_and_refine(F&& f, double lo, double hi, std::size_t grid, double tol, std::size_t max_iter = 200) {
    if (grid < 3) grid = 3;
    std::vector<double> xs(grid), fs(grid);
    std::size_t best = 0;
    for (std::size_t i = 0; i < grid; ++i) {
        xs[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid - 1);
        fs[i] = f(xs[i]);
        if (fs[i] > fs[best]) best = i;
    }
    Extremum e{xs[best], fs[best], grid};
    double a = xs[best == 0 ? 0 : best - 1];
    double b = xs[best + 1 == grid ? grid - 1 : best + 1];
    const double g = (std::sqrt(5.0) - 1) / 2;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    e.evaluations += 2;
    for (std::size_t it = 0; it < max_iter && (b - a) > tol; ++it) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        ++e.evaluations;
    }
    const double x = fc >= fd ? c : d;
    const double fx = std::max(fc, fd);
    if (fx >= e.f) {
        e.x = x;
        e.f = fx;
    }
    return e;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Amplitude

struct AmplitudeStage {
    std::size_t repetitions = 0;
    double amp_factor = 1.0;
    double uncertainty = 0.0;  // 1σ in amp_factor for nominal_shots per point
};

struct AmplitudeCalibration {
    CalibrationRecord record;  // value: recovered amplitude scale (1 / amp_factor)
    std::vector<AmplitudeStage> stages;
};

struct AmplitudeOptions {
    std::vector<std::size_t> repetitions{16, 64, 256, 1024};
    std::size_t grid = 13;
    double tol = 1e-9;
    double nominal_shots = 100;
    double pulse_s = 0.6e-6;
    double ramp_s = 120e-9;
    double delay_s = 2e-6;
};

/// N-fold π/2 repetitions (N ≡ 0 mod 4) return the ion to |0⟩ only for the
/// correct amplitude. The search window shrinks with N to stay inside the
/// central fringe (aliases sit 4/N apart).
inline AmplitudeCalibration calibrate_amplitude(SimulatedIon& ion, double init_factor = 1.0,
                                                const AmplitudeOptions& opt = {}) {
    AmplitudeCalibration out;
    out.record.parameter = "amp_factor";
    const double start = ion.amp_factor;
    double center = init_factor;
    for (std::size_t n : opt.repetitions) {
        if (n == 0 || n % 4 != 0) throw std::invalid_argument("calibrate_amplitude: repetitions must be multiples of 4");
        const Pulse p{0.5 * ion.a_pi(), 0.0, opt.pulse_s, opt.ramp_s};
        auto p0 = [&](double f) {
            ion.amp_factor = f;
            const double v = ion.probe({p}, n, opt.delay_s, 0);
            out.record.history.push_back({out.record.history.size(), "amp_factor", f, 1 - v});
            return v;
        };
        const double half = 1.5 / static_cast<double>(n) * center;
        const auto e = detail::scan_and_refine(p0, center - half, center + half, opt.grid, opt.tol * center);
        out.record.iterations += e.evaluations;

        // Fisher bound from the simulated fringe slope near half contrast.
        const double h = center / static_cast<double>(n);
        const double f_half = e.x + h;
        const double eps = 1e-3 * h;
        const double slope = (p0(f_half + eps) - p0(f_half - eps)) / (2 * eps);
        const double ph = p0(f_half);
        const double sigma = std::sqrt(std::max(ph * (1 - ph), 1e-12) / opt.nominal_shots) / std::abs(slope);
        out.stages.push_back({n, e.x, sigma});
        center = e.x;
        out.record.residual = 1 - e.f;
    }
    (void)start;
    ion.amp_factor = center;
    out.record.value = 1.0 / center;
    return out;
}

// ---------------------------------------------------------------------------
// Detuning

struct DetuningOptions {
    double probe_s = 2e-3;
    double ramp_s = 120e-9;
    double window_hz = 1000.0;
    std::size_t grid = 41;
    double tol_hz = 1e-3;
};

/// Transfer probability of the weak π probe at each drive offset.
inline std::vector<std::pair<double, double>> detuning_lineshape(SimulatedIon& ion, const std::vector<double>& offsets,
                                                                 const DetuningOptions& opt = {}) {
    const double saved = ion.freq_offset_hz;
    const Pulse p{ion.a_pi(), 0.0, opt.probe_s, opt.ramp_s};
    std::vector<std::pair<double, double>> out;
    for (double f : offsets) {
        ion.freq_offset_hz = f;
        out.emplace_back(f, ion.probe({p}, 1, 0.0, 1, false));
    }
    ion.freq_offset_hz = saved;
    return out;
}

/// Weak, long π pulse: maximal transfer when the drive sits on the qubit.
/// The probe runs without Zeeman compensation (its own shift is negligible).
inline CalibrationRecord calibrate_detuning(SimulatedIon& ion, const DetuningOptions& opt = {}) {
    CalibrationRecord rec;
    rec.parameter = "freq_offset_hz";
    const Pulse p{ion.a_pi(), 0.0, opt.probe_s, opt.ramp_s};
    const double center = ion.freq_offset_hz;
    auto p1 = [&](double f) {
        ion.freq_offset_hz = f;
        const double v = ion.probe({p}, 1, 0.0, 1, false);
        rec.history.push_back({rec.history.size(), rec.parameter, f, 1 - v});
        return v;
    };
    const double lo = center - opt.window_hz, hi = center + opt.window_hz;
    const auto e = detail::scan_and_refine(p1, lo, hi, opt.grid, opt.tol_hz);
    const double step = (hi - lo) / static_cast<double>(opt.grid - 1);
    if (e.f < 0.5 || e.x - lo < step || hi - e.x < step) {
        ion.freq_offset_hz = center;
        throw std::runtime_error("calibrate_detuning: no transfer peak inside the sweep window");
    }
    ion.freq_offset_hz = e.x;
    rec.value = e.x;
    rec.residual = 1 - e.f;
    rec.iterations = e.evaluations;
    return rec;
}

// ---------------------------------------------------------------------------
// AC Zeeman compensation

struct ZeemanOptions {
    std::size_t pulses = 800;  // alternating +/− phase π/2 pulses
    double lo_hz = -100.0;
    double hi_hz = 600.0;
    std::size_t grid = 71;
    double tol_hz = 1e-3;
    double pulse_s = 0.6e-6;
    double ramp_s = 120e-9;
    double delay_s = 2e-6;
};

/// Alternating-phase π/2 pairs cancel amplitude errors but not a pulse-on
/// detuning, so the return probability peaks at the right compensation.
inline CalibrationRecord calibrate_zeeman_compensation(SimulatedIon& ion, const ZeemanOptions& opt = {}) {
    if (opt.pulses == 0 || opt.pulses % 2 != 0) throw std::invalid_argument("calibrate_zeeman: pulses must be even");
    CalibrationRecord rec;
    rec.parameter = "zeeman_comp_hz";
    const std::vector<Pulse> block{{0.5 * ion.a_pi(), 0.0, opt.pulse_s, opt.ramp_s},
                                   {0.5 * ion.a_pi(), kPi, opt.pulse_s, opt.ramp_s}};
    const double saved = ion.zeeman_comp_hz;
    auto p0 = [&](double c) {
        ion.zeeman_comp_hz = c;
        const double v = ion.probe(block, opt.pulses / 2, opt.delay_s, 0);
        rec.history.push_back({rec.history.size(), rec.parameter, c, 1 - v});
        return v;
    };
    const auto e = detail::scan_and_refine(p0, opt.lo_hz, opt.hi_hz, opt.grid, opt.tol_hz);
    const double step = (opt.hi_hz - opt.lo_hz) / static_cast<double>(opt.grid - 1);
    if (e.x - opt.lo_hz < step || opt.hi_hz - e.x < step) {
        ion.zeeman_comp_hz = saved;
        throw std::runtime_error("calibrate_zeeman: optimum at the edge of the scan window");
    }
    ion.zeeman_comp_hz = e.x;
    rec.value = e.x;
    rec.residual = 1 - e.f;
    rec.iterations = e.evaluations;
    return rec;
}

// ---------------------------------------------------------------------------
// Drift monitoring

struct DriftSample {
    double time_s = 0.0;
    double population = 0.0;  // P(|1⟩)
    double amp_error = 0.0;   // inferred relative amplitude error ε
    double pulse_error = 0.0; // (2/3) sin²(πε/4) for a π/2 pulse
};

/// Number of π/2 rotations `n` pulses of amplitude A produce on an ion.
inline double half_pi_rotations(double amplitude, std::size_t n, double a_pi) {
    return static_cast<double>(n) * 2.0 * amplitude / a_pi;
}

/// P(|1⟩) after an odd number h of π/2 rotations scaled by (1 + ε) is
/// ½(1 + s·sin(hπε/2)), s = +1 for h ≡ 1 (mod 4) and −1 for h ≡ 3.
inline double invert_probe(double p1, double h) {
    const long hi = std::lround(h);
    if (std::abs(h - static_cast<double>(hi)) > 1e-9 || hi % 2 == 0) {
        throw std::invalid_argument("drift probe must perform an odd number of pi/2 rotations");
    }
    const double s = (hi % 4 == 1) ? 1.0 : -1.0;
    const double arg = s * (2 * p1 - 1);
    if (!(std::abs(arg) < 1.0)) throw std::domain_error("drift probe population outside the invertible branch");
    return 2.0 / (h * kPi) * std::asin(arg);
}

inline double half_pi_pulse_error(double amp_error) {
    const double s = std::sin(kPi * amp_error / 4);
    return 2.0 / 3.0 * s * s;
}

/// Probes with `n` pulses of `amplitude` (default a_pi/2, i.e. n π/2 pulses)
/// at each schedule time; the drift is read at the probe start.
inline std::vector<DriftSample> drift_monitor(SimulatedIon& ion, std::size_t n, const std::vector<double>& schedule,
                                              std::optional<double> amplitude = std::nullopt, double pulse_s = 0.6e-6,
                                              double ramp_s = 120e-9, double delay_s = 2e-6) {
    const double a = amplitude.value_or(0.5 * ion.a_pi());
    const double h = half_pi_rotations(a, n, ion.a_pi());
    invert_probe(0.5, h);  // validates h
    std::vector<DriftSample> out;
    const double saved = ion.clock_s;
    for (double t : schedule) {
        ion.clock_s = t;
        const double p1 = ion.probe({{a, 0.0, pulse_s, ramp_s}}, n, delay_s, 1);
        const double eps = invert_probe(p1, h);
        out.push_back({t, p1, eps, half_pi_pulse_error(eps)});
    }
    ion.clock_s = saved;
    return out;
}

inline std::vector<DriftPoint> read_drift_csv(std::istream& in) {
    const CsvTable t = read_csv(in);
    const std::size_t ct = t.column("time_s"), ca = t.column("amp_scale");
    std::vector<DriftPoint> out;
    for (const auto& r : t.rows) out.push_back({parse_double(r[ct]), parse_double(r[ca])});
    NoiseModel check;
    check.amp_drift = out;
    check.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Sequence acceptance loop

struct Candidate {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool synthesized = false;
    PulseSequence sequence;
    double synth_residual = 0.0;
    double rb_error = std::numeric_limits<double>::infinity();  // mean over both ions
    double orbit_error = std::numeric_limits<double>::infinity();  // direct gate infidelity, mean over members and ions
};

struct AcceptanceLoopState {
    GatePair target;
    double threshold = 5e-5;
    std::vector<Candidate> candidates;
    std::optional<std::size_t> accepted;  // index into candidates

    const Candidate* best() const {
        const Candidate* b = nullptr;
        for (const auto& c : candidates)
            if (c.synthesized && (!b || c.rb_error < b->rb_error)) b = &c;
        return b;
    }
};

/// Mean average infidelity of a sequence over its orbit's members and both ions.
inline double orbit_gate_error(const PulseSequence& seq, const Orbit& orbit, const IonSet& ions,
                               const NoiseModel& noise) {
    Simulator sim(noise);
    double e = 0.0;
    std::size_t n = 0;
    for (const auto& m : orbit.members) {
        const PulseSequence s = shift_phases(seq, m.shift_angle());
        e += average_infidelity(sim.sequence_map(s, ions.a_pi[0]), to_rotation(m.pair.first));
        e += average_infidelity(sim.sequence_map(s, ions.a_pi[1]), to_rotation(m.pair.second));
        n += 2;
    }
    return e / static_cast<double>(n);
}

struct OrbitRBOptions {
    std::vector<std::size_t> lengths{1, 10, 25, 50, 100};  // Cliffords on the driven ion
    std::size_t trials = 4;
};

struct OrbitRBResult {
    std::array<DecayFit, 2> fits;
    double mean_error = 0.0;       // error per addressed gate, averaged over both ions
    std::vector<RBRecord> records; // length column holds the Clifford count, gates the x value
};

/// Simultaneous RB restricted to one orbit: a random Clifford sequence is
/// played on the driven ion and every step uses the orbit member whose gate
/// on that ion matches, so the partner ion sees the member's other gate.
/// Survival is the exact overlap with each ion's ideal final state.
inline OrbitRBResult orbit_rb(const PulseSequence& seq, const Orbit& orbit, const IonSet& ions,
                              const NoiseModel& noise, const OrbitRBOptions& opt, std::uint64_t seed,
                              const SimOptions& sim_opt = {}) {
    if (ions.size() != 2) throw std::invalid_argument("orbit_rb: two ions required");
    const bool drive0 = orbit.representative.first != AddressedGate::I;

    Simulator sim(noise, sim_opt);
    // member index by the driven ion's gate
    std::array<int, 4> member_of{-1, -1, -1, -1};
    std::vector<std::array<Superop, 2>> maps;
    std::vector<std::array<Rotation, 2>> ideal;
    for (std::size_t i = 0; i < orbit.members.size(); ++i) {
        const auto& m = orbit.members[i];
        const AddressedGate g = drive0 ? m.pair.first : m.pair.second;
        if (g == AddressedGate::I) throw std::logic_error("orbit_rb: driven ion idles");
        member_of[static_cast<std::size_t>(g)] = static_cast<int>(i);
        const PulseSequence s = shift_phases(seq, m.shift_angle());
        maps.push_back({sim.sequence_map(s, ions.a_pi[0]), sim.sequence_map(s, ions.a_pi[1])});
        ideal.push_back({to_rotation(m.pair.first), to_rotation(m.pair.second)});
    }

    OrbitRBResult out;
    std::array<std::vector<DecayPoint>, 2> pts;
    for (std::size_t li = 0; li < opt.lengths.size(); ++li) {
        for (std::size_t t = 0; t < opt.trials; ++t) {
            Rng rng = make_rng(seed, {li, t});
            const RBSequence rb = gen_rb_sequence(opt.lengths[li], rng);
            const Word stream = generator_stream(rb.cliffords);
            std::array<QubitState, 2> st{QubitState::ground(noise.dim()), QubitState::ground(noise.dim())};
            std::array<Rotation, 2> total;
            for (Generator g : stream) {
                const int mi = member_of[static_cast<std::size_t>(to_addressed(g))];
                if (mi < 0) throw std::logic_error("orbit_rb: orbit lacks a member for " + to_string(g));
                for (std::size_t k = 0; k < 2; ++k) {
                    apply_superop(st[k], maps[static_cast<std::size_t>(mi)][k]);
                    total[k] = compose(ideal[static_cast<std::size_t>(mi)][k], total[k]);
                }
            }
            for (std::size_t k = 0; k < 2; ++k) {
                CVector psi = CVector::Zero(static_cast<Eigen::Index>(noise.dim()));
                psi.head<2>() = to_unitary(total[k]).col(0);
                const double p = st[k].fidelity(psi);
                const auto x = static_cast<double>(stream.size());
                pts[k].push_back({x, p, 1.0});
                out.records.push_back({k, opt.lengths[li], t, x, p});
            }
        }
    }
    for (std::size_t k = 0; k < 2; ++k) out.fits[k] = fit_decay(pts[k]);
    out.mean_error = 0.5 * (out.fits[0].error_per_gate + out.fits[1].error_per_gate);
    return out;
}

struct AcceptanceOptions {
    double threshold = 5e-5;
    std::size_t budget = 20;
    std::uint64_t seed = 0;
    SynthesisOptions synthesis;
    OrbitRBOptions rb;
    SimOptions sim;
};

/// Tries candidate sequences for the orbit of `target` (candidate c uses seed
/// stream (seed, orbit, c)) until orbit RB gives an error, averaged over both
/// ions, below the threshold. Every candidate sees the same RB sequences.
inline AcceptanceLoopState acceptance_loop(const GatePair& target, const IonSet& ions, const NoiseModel& noise,
                                           const AcceptanceOptions& opt) {
    if (opt.budget == 0) throw std::invalid_argument("acceptance_loop: budget must be >= 1");
    const std::vector<Orbit> orbits = orbit_classes();
    const std::size_t oi = locate_orbit(orbits, target).first;
    const Orbit& orbit = orbits[oi];
    AcceptanceLoopState st;
    st.target = orbit.representative;
    st.threshold = opt.threshold;
    for (std::size_t c = 0; c < opt.budget; ++c) {
        Candidate cand;
        cand.index = c;
        cand.seed = derive_seed(opt.seed, {0xACC, oi, c});
        SynthesisOptions so = opt.synthesis;
        so.seed = cand.seed;
        const SynthesisResult sr = synthesize(pair_targets(orbit.representative), ions, so);
        cand.synth_residual = sr.residual_cost;
        cand.synthesized = sr.converged;
        if (cand.synthesized) {
            cand.sequence = sr.sequence;
            cand.rb_error = orbit_rb(sr.sequence, orbit, ions, noise, opt.rb, derive_seed(opt.seed, {0x4B, oi}), opt.sim)
                                .mean_error;
            cand.orbit_error = orbit_gate_error(sr.sequence, orbit, ions, noise);
        }
        st.candidates.push_back(cand);
        if (cand.synthesized && cand.rb_error < opt.threshold) {
            st.accepted = c;
            break;
        }
    }
    return st;
}

struct LibraryCalibration {
    SequenceLibrary library;
    std::vector<AcceptanceLoopState> loops;  // one per orbit, in orbit order
    bool complete = false;
};

/// Runs the loop orbit by orbit and memorizes the accepted sequence of each
/// (or the best tested one when the budget runs out).
inline LibraryCalibration calibrate_library(const IonSet& ions, const NoiseModel& noise, const AcceptanceOptions& opt) {
    LibraryCalibration out;
    out.complete = true;
    out.library.ions = ions;
    out.library.orbits = orbit_classes();
    for (const Orbit& o : out.library.orbits) {
        AcceptanceLoopState st = acceptance_loop(o.representative, ions, noise, opt);
        const Candidate* pick = st.accepted ? &st.candidates[*st.accepted] : st.best();
        if (!st.accepted) out.complete = false;
        if (pick == nullptr) throw std::runtime_error("calibrate_library: no candidate converged for " + to_string(o.representative));
        out.library.sequences.push_back(pick->sequence);
        out.library.residuals.push_back(pick->synth_residual);
        out.loops.push_back(std::move(st));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Output

inline void write_history_csv(std::ostream& os, const std::vector<CalibrationRecord>& records) {
    os << "step,parameter,value,residual\n";
    std::size_t step = 0;
    for (const auto& r : records)
        for (const auto& h : r.history) os << step++ << ',' << h.parameter << ',' << fmt(h.value) << ',' << fmt(h.residual) << '\n';
}

}  // namespace ionaddr
