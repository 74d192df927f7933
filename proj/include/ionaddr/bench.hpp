#pragma once

// Randomized benchmarking: random Clifford streams closed by a Pauli-returning
// element, compilation to physical pulses (single ion, or two ions addressed
// through the orbit library), density-operator execution and decay fitting.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionaddr/io.hpp"
#include "ionaddr/qsim.hpp"
#include "ionaddr/random.hpp"
#include "ionaddr/rotor.hpp"
#include "ionaddr/synth.hpp"
#include "json.hpp"

namespace ionaddr {

struct RBSequence {
    std::vector<std::size_t> cliffords;  // m random elements, then the closing one
    int pauli = 0;                       // index into pauli_rotations(): I, X, Y, Z
    int expected_outcome = 0;            // 0 ↔ |0⟩, 1 ↔ |1⟩ for a |0⟩ start
};

/// m uniform Cliffords plus a closing element that makes the whole product a
/// uniformly drawn Pauli.
inline RBSequence gen_rb_sequence(std::size_t m, Rng& rng) {
    if (m < 1) throw std::invalid_argument("gen_rb_sequence: m must be >= 1");
    const CliffordTable& t = clifford_table();
    RBSequence s;
    Rotation total;
    for (std::size_t i = 0; i < m; ++i) {
        const auto c = static_cast<std::size_t>(uniform_index(rng, t.size()));
        s.cliffords.push_back(c);
        total = compose(t.element(c), total);
    }
    s.pauli = static_cast<int>(uniform_index(rng, 4));
    const Rotation closing = compose(pauli_rotations()[static_cast<std::size_t>(s.pauli)], total.inverse());
    const int idx = t.find(closing);
    if (idx < 0) throw std::logic_error("gen_rb_sequence: closing element not in the Clifford group");
    s.cliffords.push_back(static_cast<std::size_t>(idx));
    s.expected_outcome = (s.pauli == 1 || s.pauli == 2) ? 1 : 0;
    return s;
}

inline Rotation total_rotation(const std::vector<std::size_t>& cliffords) {
    Rotation r;
    for (std::size_t c : cliffords) r = compose(clifford_table().element(c), r);
    return r;
}

/// Generator stream of a Clifford list, in time order.
inline Word generator_stream(const std::vector<std::size_t>& cliffords) {
    Word w;
    for (std::size_t c : cliffords) {
        const Word& cw = clifford_table().word(c);
        w.insert(w.end(), cw.begin(), cw.end());
    }
    return w;
}

struct PulseTiming {
    double duration_s = 0.6e-6;
    double ramp_s = 120e-9;
    double delay_s = 2e-6;
};

/// One π/2 pulse per generator.
inline PulseSequence compile_single(const std::vector<std::size_t>& cliffords, double a_pi, const PulseTiming& timing = {}) {
    PulseSequence seq;
    seq.inter_pulse_delay = timing.delay_s;
    for (Generator g : generator_stream(cliffords)) {
        seq.pulses.push_back({0.5 * a_pi, generator_phase(g), timing.duration_s, timing.ramp_s});
    }
    return seq;
}

inline double pulses_per_clifford(const std::vector<std::size_t>& cliffords) {
    if (cliffords.empty()) return 0.0;
    return static_cast<double>(generator_stream(cliffords).size()) / static_cast<double>(cliffords.size());
}

/// Aligned addressed-gate pairs: the shorter stream is padded with I at the
/// end, so (I, I) cannot occur.
inline std::vector<GatePair> align_streams(const Word& ion0, const Word& ion1) {
    const std::size_t n = std::max(ion0.size(), ion1.size());
    std::vector<GatePair> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        pairs.emplace_back(i < ion0.size() ? to_addressed(ion0[i]) : AddressedGate::I,
                           i < ion1.size() ? to_addressed(ion1[i]) : AddressedGate::I);
    }
    return pairs;
}

/// One library sequence per aligned gate pair.
inline std::vector<PulseSequence> compile_simultaneous(const Word& ion0, const Word& ion1,
                                                       const SequenceLibrary& library) {
    std::vector<PulseSequence> out;
    for (const GatePair& p : align_streams(ion0, ion1)) {
        if (p.first == AddressedGate::I && p.second == AddressedGate::I) {
            throw std::logic_error("compile_simultaneous: (I, I) requested");
        }
        out.push_back(library.sequence_for(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decay fitting

struct DecayPoint {
    double x = 0.0;         // sequence length in gate units
    double survival = 0.0;
    double weight = 1.0;
};

struct DecayFit {
    double alpha = 1.0;
    double spam = 0.0;
    double error_per_gate = 0.0;  // (1 − α)/2
    double error_stderr = 0.0;
    bool degenerate = false;      // flat data: error 0, infinite uncertainty
};

/// Weighted least squares for P(x) = 0.5 + (0.5 − s)·α^x, parameterized by
/// (s, e) with α = 1 − 2e. Gauss–Newton with step halving.
inline DecayFit fit_decay(const std::vector<DecayPoint>& pts) {
    std::vector<double> xs;
    for (const auto& p : pts) {
        if (!std::isfinite(p.x) || !std::isfinite(p.survival) || !(p.weight > 0)) {
            throw std::invalid_argument("fit_decay: non-finite point or non-positive weight");
        }
        if (std::find(xs.begin(), xs.end(), p.x) == xs.end()) xs.push_back(p.x);
    }
    if (xs.size() < 3) throw std::invalid_argument("fit_decay: need >= 3 distinct lengths");

    double lo = pts.front().survival, hi = lo;
    for (const auto& p : pts) {
        lo = std::min(lo, p.survival);
        hi = std::max(hi, p.survival);
    }
    DecayFit fit;
    if (hi - lo < 1e-14) {
        fit.degenerate = true;
        fit.spam = 0.5 - (hi - 0.5);
        fit.error_stderr = std::numeric_limits<double>::infinity();
        return fit;
    }

    // Start: line through log(P − 0.5) at the extreme lengths.
    auto mean_at = [&](double x) {
        double s = 0, n = 0;
        for (const auto& p : pts)
            if (p.x == x) s += p.survival, n += 1;
        return s / n;
    };
    const double x0 = *std::min_element(xs.begin(), xs.end());
    const double x1 = *std::max_element(xs.begin(), xs.end());
    const double y0 = std::max(mean_at(x0) - 0.5, 1e-6);
    const double y1 = std::max(mean_at(x1) - 0.5, 1e-6);
    double alpha0 = std::clamp(std::exp(std::log(y1 / y0) / (x1 - x0)), 1e-6, 1.0);
    Eigen::Vector2d th(0.5 - y0 / std::pow(alpha0, x0), 0.5 * (1 - alpha0));

    auto residuals = [&](const Eigen::Vector2d& t, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
        const auto n = static_cast<Eigen::Index>(pts.size());
        r.resize(n);
        if (J) J->resize(n, 2);
        const double a = 1 - 2 * t[1];
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& p = pts[static_cast<std::size_t>(i)];
            const double w = std::sqrt(p.weight);
            const double ax = std::pow(a, p.x);
            r[i] = w * (0.5 + (0.5 - t[0]) * ax - p.survival);
            if (J) {
                (*J)(i, 0) = -w * ax;
                (*J)(i, 1) = p.x == 0 ? 0.0 : w * (0.5 - t[0]) * p.x * std::pow(a, p.x - 1) * -2.0;
            }
        }
        return r.squaredNorm();
    };

    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    double f = residuals(th, r, &J);
    for (int it = 0; it < 200; ++it) {
        const Eigen::Matrix2d A = J.transpose() * J;
        const Eigen::Vector2d step = A.ldlt().solve(-J.transpose() * r);
        if (!step.allFinite()) break;
        double scale = 1.0;
        bool improved = false;
        for (int k = 0; k < 40; ++k) {
            Eigen::Vector2d trial = th + scale * step;
            if (1 - 2 * trial[1] > 0) {
                Eigen::VectorXd rt;
                const double ft = residuals(trial, rt, nullptr);
                if (ft <= f) {
                    th = trial;
                    improved = ft < f;
                    f = residuals(th, r, &J);
                    break;
                }
            }
            scale *= 0.5;
        }
        if (!improved || std::abs(step[1]) <= 1e-15 * std::max(std::abs(th[1]), 1e-300)) break;
    }

    fit.spam = th[0];
    fit.error_per_gate = th[1];
    fit.alpha = 1 - 2 * th[1];
    const auto dof = static_cast<double>(pts.size()) - 2.0;
    const Eigen::Matrix2d A = J.transpose() * J;
    const double sigma2 = dof > 0 ? f / dof : 0.0;
    const Eigen::Matrix2d cov = A.inverse() * sigma2;
    fit.error_stderr = std::sqrt(std::max(cov(1, 1), 0.0));
    return fit;
}

// ---------------------------------------------------------------------------
// Running RB

enum class RBMode { Single, Simultaneous };
enum class GateMetric { Clifford, AddressedGate };

inline std::string to_string(RBMode m) { return m == RBMode::Single ? "single" : "simultaneous"; }
inline RBMode rb_mode_from_string(const std::string& s) {
    if (s == "single") return RBMode::Single;
    if (s == "simultaneous") return RBMode::Simultaneous;
    throw std::invalid_argument("rb.mode: expected single|simultaneous, got '" + s + "'");
}
inline std::string to_string(GateMetric m) { return m == GateMetric::Clifford ? "clifford" : "addressed_gate"; }
inline GateMetric gate_metric_from_string(const std::string& s) {
    if (s == "clifford") return GateMetric::Clifford;
    if (s == "addressed_gate") return GateMetric::AddressedGate;
    throw std::invalid_argument("rb.gate_metric: expected clifford|addressed_gate, got '" + s + "'");
}

struct RBConfig {
    std::vector<std::size_t> lengths{1, 10, 100, 1000};
    std::size_t trials_per_length = 10;
    std::uint64_t seed = 0;
    RBMode mode = RBMode::Single;
    GateMetric gate_metric = GateMetric::Clifford;
    PulseTiming timing;             // single mode pulses
    std::size_t shots = 0;          // 0: exact expectation
    double spam_prep_error = 0.0;   // probability of starting in |1⟩
    double spam_meas_error = 0.0;   // probability of reading the wrong outcome
    bool reference = false;         // replace every pulse by a delay of equal length

    void validate() const {
        if (lengths.empty()) throw std::invalid_argument("rb.lengths: empty");
        for (std::size_t i = 0; i < lengths.size(); ++i) {
            if (lengths[i] < 1) throw std::invalid_argument("rb.lengths: entries must be >= 1");
            if (i > 0 && lengths[i] <= lengths[i - 1]) throw std::invalid_argument("rb.lengths: must be strictly increasing");
        }
        if (trials_per_length < 1) throw std::invalid_argument("rb.trials_per_length: must be >= 1");
        for (double p : {spam_prep_error, spam_meas_error}) {
            if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("rb.spam: probabilities must lie in [0, 1]");
        }
    }
};

struct RBRecord {
    std::size_t ion = 0;
    std::size_t length = 0;  // Clifford count m
    std::size_t trial = 0;
    double gates = 0.0;      // x used in the fit
    double survival = 0.0;
};

struct RBIonFit {
    std::size_t ion = 0;
    DecayFit fit;
};

struct RBResult {
    RBConfig config;
    std::vector<RBRecord> records;
    std::vector<RBIonFit> fits;

    double mean_error() const {
        double s = 0;
        for (const auto& f : fits) s += f.fit.error_per_gate;
        return fits.empty() ? 0.0 : s / static_cast<double>(fits.size());
    }

    std::vector<DecayPoint> points(std::size_t ion) const {
        std::vector<DecayPoint> p;
        for (const auto& r : records)
            if (r.ion == ion) p.push_back({r.gates, r.survival, 1.0});
        return p;
    }
};

namespace detail {

inline QubitState prepared_state(std::size_t dim, double prep_error) {
    QubitState s = QubitState::ground(dim);
    s.rho(0, 0) = 1.0 - prep_error;
    s.rho(1, 1) = prep_error;
    return s;
}

inline double readout(const QubitState& s, int expected, const RBConfig& cfg, Rng& shot_rng) {
    double p = std::clamp(s.population(static_cast<std::size_t>(expected)), 0.0, 1.0);
    p = (1 - cfg.spam_meas_error) * p + cfg.spam_meas_error * (1 - p);
    if (cfg.shots == 0) return p;
    std::binomial_distribution<std::size_t> b(cfg.shots, p);
    return static_cast<double>(b(shot_rng)) / static_cast<double>(cfg.shots);
}

inline Superop idle_map(const NoiseModel& noise, double duration) { return delay_superop(duration, noise); }

}  // namespace detail

/// Single mode: every ion in `ions` runs its own stream with A = a_pi/2
/// pulses. Simultaneous mode: two ions, each with an independent Clifford
/// stream, driven together through `library`.
inline RBResult run_rb(const RBConfig& cfg, const NoiseModel& noise, const IonSet& ions,
                       const SequenceLibrary* library = nullptr, const SimOptions& opt = {}) {
    cfg.validate();
    ions.validate();
    noise.validate();
    const std::size_t n_ions = ions.size();
    if (cfg.mode == RBMode::Simultaneous) {
        if (n_ions != 2) throw std::invalid_argument("run_rb: simultaneous mode needs two ions");
        if (!library) throw std::invalid_argument("run_rb: simultaneous mode needs a sequence library");
    }
    const bool drift = !noise.amp_drift.empty();
    const std::size_t d = noise.dim();

    RBResult res;
    res.config = cfg;
    std::vector<Simulator> sims;
    for (std::size_t k = 0; k < n_ions; ++k) sims.emplace_back(noise, opt);

    // Per-ion Clifford and gate-pair maps, valid only without drift.
    std::vector<std::map<std::size_t, Superop>> clifford_maps(n_ions);
    std::vector<std::map<GatePair, Superop>> pair_maps(n_ions);

    auto reference_map = [&](const PulseSequence& seq) {
        Superop acc(d);
        for (const Pulse& p : seq.pulses) {
            acc = detail::idle_map(noise, p.duration).after(acc);
            acc = detail::idle_map(noise, seq.inter_pulse_delay).after(acc);
        }
        return acc;
    };
    auto sequence_map = [&](std::size_t k, const PulseSequence& seq) {
        return cfg.reference ? reference_map(seq) : sims[k].sequence_map(seq, ions.a_pi[k]);
    };
    auto run_seq = [&](std::size_t k, QubitState& s, const PulseSequence& seq) {
        if (cfg.reference) {
            for (const Pulse& p : seq.pulses) {
                sims[k].delay(s, p.duration);
                sims[k].delay(s, seq.inter_pulse_delay);
            }
        } else {
            sims[k].run(s, seq, ions.a_pi[k]);
        }
    };

    for (std::size_t li = 0; li < cfg.lengths.size(); ++li) {
        const std::size_t m = cfg.lengths[li];
        for (std::size_t trial = 0; trial < cfg.trials_per_length; ++trial) {
            std::vector<RBSequence> streams;
            for (std::size_t k = 0; k < n_ions; ++k) {
                Rng rng = make_rng(cfg.seed, {k, m, trial});
                streams.push_back(gen_rb_sequence(m, rng));
            }

            std::vector<QubitState> states;
            for (std::size_t k = 0; k < n_ions; ++k) states.push_back(detail::prepared_state(d, cfg.spam_prep_error));
            double gates = static_cast<double>(m);

            if (cfg.mode == RBMode::Single) {
                for (std::size_t k = 0; k < n_ions; ++k) {
                    for (std::size_t c : streams[k].cliffords) {
                        const PulseSequence seq = compile_single({c}, ions.a_pi[k], cfg.timing);
                        if (drift) {
                            run_seq(k, states[k], seq);
                            continue;
                        }
                        auto it = clifford_maps[k].find(c);
                        if (it == clifford_maps[k].end()) it = clifford_maps[k].emplace(c, sequence_map(k, seq)).first;
                        apply_superop(states[k], it->second);
                        states[k].time_s += seq.pulses.size() * (cfg.timing.duration_s + cfg.timing.delay_s);
                    }
                }
            } else {
                if (library == nullptr) throw std::logic_error("run_rb: library missing");
                const SequenceLibrary& lib = *library;
                const auto pairs = align_streams(generator_stream(streams[0].cliffords),
                                                 generator_stream(streams[1].cliffords));
                if (cfg.gate_metric == GateMetric::AddressedGate) gates = static_cast<double>(pairs.size());
                for (const GatePair& gp : pairs) {
                    const PulseSequence seq = lib.sequence_for(gp);
                    for (std::size_t k = 0; k < 2; ++k) {
                        if (drift) {
                            run_seq(k, states[k], seq);
                            continue;
                        }
                        auto it = pair_maps[k].find(gp);
                        if (it == pair_maps[k].end()) it = pair_maps[k].emplace(gp, sequence_map(k, seq)).first;
                        apply_superop(states[k], it->second);
                    }
                }
            }

            for (std::size_t k = 0; k < n_ions; ++k) {
                check_state(states[k], opt.psd_tolerance);
                Rng shot_rng = make_rng(cfg.seed, {k, m, trial, 0x5407});
                const int expected = cfg.reference ? 0 : streams[k].expected_outcome;
                res.records.push_back({k, m, trial, gates, detail::readout(states[k], expected, cfg, shot_rng)});
            }
        }
    }

    if (cfg.lengths.size() >= 3 || cfg.mode == RBMode::Simultaneous) {
        for (std::size_t k = 0; k < n_ions; ++k) {
            std::vector<DecayPoint> pts = res.points(k);
            std::vector<double> xs;
            for (const auto& p : pts)
                if (std::find(xs.begin(), xs.end(), p.x) == xs.end()) xs.push_back(p.x);
            if (xs.size() >= 3) res.fits.push_back({k, fit_decay(pts)});
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Output

inline void write_rb_csv(std::ostream& os, const RBResult& r) {
    os << "mode,ion,length,trial,survival\n";
    for (const auto& rec : r.records) {
        os << to_string(r.config.mode) << ',' << rec.ion << ',' << rec.length << ',' << rec.trial << ','
           << fmt(rec.survival) << '\n';
    }
}

inline nlohmann::json fit_json(const RBResult& r) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : r.fits) {
        nlohmann::json j;
        j["ion"] = f.ion;
        j["error_per_gate"] = f.fit.error_per_gate;
        j["error_stderr"] = f.fit.degenerate ? nlohmann::json("inf") : nlohmann::json(f.fit.error_stderr);
        j["spam"] = f.fit.spam;
        j["alpha"] = f.fit.alpha;
        arr.push_back(j);
    }
    return arr;
}

}  // namespace ionaddr
