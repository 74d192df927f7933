#include "ionaddr/synth.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>

using namespace ionaddr;

namespace {

const TargetGate kX90{kPi / 2, 0, 0};
const TargetGate kY90{kPi / 2, kPi / 2, 0};
const TargetGate kXm90{kPi / 2, kPi, 0};

PulseSequence random_sequence(Rng& rng, std::size_t n, double amp_hi = 2.0) {
    PulseSequence s;
    for (std::size_t i = 0; i < n; ++i) s.pulses.push_back({uniform(rng, 0, amp_hi), uniform(rng, 0, kTwoPi)});
    return s;
}

Rotation conjugate_z(const Rotation& g, double delta) { return rot_z(delta) * g * rot_z(-delta); }

SynthesisOptions opts(std::size_t n_pulses, std::uint64_t seed) {
    SynthesisOptions o;
    o.n_pulses = n_pulses;
    o.seed = seed;
    return o;
}

}  // namespace

TEST(Synth, IdealPulseRotation) {
    EXPECT_LT(quat_distance(ideal_pulse_rotation({1.0, 0.0}, 1.0), rot_from_axis_angle(0, kPi)), 1e-15);
    EXPECT_LT(quat_distance(ideal_pulse_rotation({0.5, kPi / 2}, 1.0), rot_from_axis_angle(kPi / 2, kPi / 2)),
              1e-15);
    // Ion with Rabi ratio 0.80 turns by 0.80π under the other ion's π pulse.
    const double a = 1.3;
    EXPECT_NEAR(ideal_pulse_rotation({a, 0.9}, a / 0.80).angle(), 0.80 * kPi, 1e-14);
    EXPECT_THROW(ideal_pulse_rotation({1.0, 0.0}, 0.0), std::invalid_argument);
    EXPECT_THROW(ideal_pulse_rotation({1.0, 0.0}, -1.0), std::invalid_argument);
}

TEST(Synth, SequenceRotation) {
    const Pulse p{0.37, 1.2};
    EXPECT_LT(quat_distance(sequence_rotation({{p}}, 0.9), ideal_pulse_rotation(p, 0.9)), 1e-15);
    EXPECT_LT(quat_distance(sequence_rotation({{{0.5, 0}, {0.5, 0}}}, 1.0), rot_from_axis_angle(0, kPi)), 1e-15);
    EXPECT_LT(quat_distance(sequence_rotation({{p, {p.amplitude, p.phase + kPi}}}, 0.9), Rotation::identity()),
              1e-15);
    // time order: first pulse applied first
    const Pulse x{0.5, 0}, y{0.5, kPi / 2};
    EXPECT_LT(quat_distance(sequence_rotation({{x, y}}, 1.0),
                            compose(ideal_pulse_rotation(y, 1.0), ideal_pulse_rotation(x, 1.0))),
              1e-15);
    EXPECT_THROW(sequence_rotation(PulseSequence{}, 1.0), std::invalid_argument);
}

TEST(Synth, CostExamples) {
    const IonSet ions = IonSet::from_ratio(0.8);
    EXPECT_EQ(cost({{{0, 0}, {0, 1}, {0, 2}}}, {{}, {}}, ions), 0.0);

    // Degenerate ions behave identically.
    const IonSet same({1.0, 1.0});
    const PulseSequence xs{{{0.5, 0.0}}};
    EXPECT_LT(cost(xs, {kX90, kX90}, same), 1e-15);

    EXPECT_THROW(cost(xs, {kX90}, ions), std::invalid_argument);
}

TEST(Synth, CostGradientMatchesCentralDifference) {
    Rng rng = make_rng(21);
    const IonSet ions = IonSet::from_ratio(0.8);
    const std::vector<TargetGate> targets{kX90, kY90};
    for (int trial = 0; trial < 20; ++trial) {
        PulseSequence seq = random_sequence(rng, 4);
        const auto g = cost_gradient(seq, targets, ions);
        std::vector<double> dir(8);
        for (double& d : dir) d = uniform(rng, -1, 1);
        const double analytic = std::inner_product(g.begin(), g.end(), dir.begin(), 0.0);
        const double h = 1e-6;
        auto moved = [&](double s) {
            PulseSequence m = seq;
            for (int j = 0; j < 4; ++j) {
                m.pulses[j].amplitude += s * dir[j];
                m.pulses[j].phase += s * dir[4 + j];
            }
            return cost(m, targets, ions);
        };
        const double fd = (moved(h) - moved(-h)) / (2 * h);
        EXPECT_NEAR(fd, analytic, 1e-5);
    }
}

TEST(Synth, SolvedCostGrowsLinearlyInPhasePerturbation) {
    const IonSet ions = IonSet::from_ratio(0.8);
    const auto res = synthesize({kX90, kY90}, ions, opts(4, 1));
    ASSERT_TRUE(res.converged);
    auto perturbed = [&](double eps) {
        PulseSequence s = res.sequence;
        s.pulses[1].phase += eps;
        return cost(s, {kX90, kY90}, ions);
    };
    const double slope_a = perturbed(1e-4) / 1e-4;
    const double slope_b = perturbed(1e-6) / 1e-6;
    EXPECT_GT(slope_a, 1e-3);
    EXPECT_NEAR(slope_a, slope_b, 1e-3 * slope_b);
}

TEST(Synth, AddressingPairFourPulses) {
    const IonSet ions = IonSet::from_ratio(0.80);
    const auto res = synthesize({kX90, kY90}, ions, opts(4, 2023));
    ASSERT_TRUE(res.converged);
    EXPECT_LT(res.residual_cost, 1e-9);
    EXPECT_EQ(res.sequence.size(), 4u);
    EXPECT_NEAR(res.residual_cost, cost(res.sequence, {kX90, kY90}, ions), 1e-12);
    EXPECT_LT(distance_hs(sequence_rotation(res.sequence, ions.a_pi[0]), to_rotation(kX90)), 1e-9);
    EXPECT_LT(distance_hs(sequence_rotation(res.sequence, ions.a_pi[1]), to_rotation(kY90)), 1e-9);
    for (const Pulse& p : res.sequence.pulses) {
        EXPECT_GE(p.amplitude, 0.0);
        EXPECT_GE(p.phase, 0.0);
        EXPECT_LT(p.phase, kTwoPi);
        EXPECT_DOUBLE_EQ(p.duration, 2.12e-6);
    }
    res.sequence.validate();
}

TEST(Synth, IdentityTargets) {
    const auto res = synthesize({{}, {}}, IonSet::from_ratio(0.67), opts(4, 5));
    EXPECT_TRUE(res.converged);
    EXPECT_LT(res.residual_cost, 1e-9);
    // The all-zero train is an exact solution as well.
    EXPECT_EQ(cost({{{0, 0}, {0, 0}, {0, 0}, {0, 0}}}, {{}, {}}, IonSet::from_ratio(0.67)), 0.0);
}

TEST(Synth, Deterministic) {
    const IonSet ions = IonSet::from_ratio(0.8);
    const auto a = synthesize({kX90, kY90}, ions, opts(4, 99));
    const auto b = synthesize({kX90, kY90}, ions, opts(4, 99));
    EXPECT_EQ(a.sequence, b.sequence);
    EXPECT_EQ(a.attempts, b.attempts);
}

// Oracle: exhaustive grid over both pulses' amplitudes and phases.
TEST(Synth, TwoPulsesCannotAddressPair) {
    const IonSet ions = IonSet::from_ratio(0.80);
    const std::vector<TargetGate> targets{kX90, kY90};
    const int na = 48, np = 48;
    double grid_min = 1e9;
    for (int a1 = 0; a1 < na; ++a1) {
        for (int p1 = 0; p1 < np; ++p1) {
            for (int a2 = 0; a2 < na; ++a2) {
                for (int p2 = 0; p2 < np; ++p2) {
                    const PulseSequence s{{{2.5 * a1 / na, kTwoPi * p1 / np}, {2.5 * a2 / na, kTwoPi * p2 / np}}};
                    grid_min = std::min(grid_min, cost(s, targets, ions));
                }
            }
        }
    }
    EXPECT_GT(grid_min, 1e-3);

    auto o = opts(2, 4);
    const auto res = synthesize(targets, ions, o);
    EXPECT_FALSE(res.converged);
    EXPECT_EQ(res.attempts, o.max_restarts);
    EXPECT_GT(res.residual_cost, 1e-3);
    // the optimizer does at least as well as the grid (up to grid resolution)
    EXPECT_LE(res.residual_cost, grid_min + 1e-12);
}

TEST(Synth, DegreesOfFreedomCounting) {
    Rng rng = make_rng(77);
    int converged3 = 0, converged2 = 0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
        double r = uniform(rng, 0.5, 0.95);
        const IonSet ions = IonSet::from_ratio(r);
        const std::vector<TargetGate> targets{{uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi), 0.0},
                                              {uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi), 0.0}};
        const auto three = synthesize(targets, ions, opts(3, s));
        if (three.converged) ++converged3;
        auto o2 = opts(2, s);
        o2.max_restarts = 20;
        const auto two = synthesize(targets, ions, o2);
        if (two.residual_cost < 1e-3) ++converged2;
    }
    EXPECT_GE(converged3, 95);
    EXPECT_EQ(converged2, 0);
}

TEST(Synth, DeltaTargetsAreAccepted) {
    const IonSet ions = IonSet::from_ratio(0.8);
    const auto res = synthesize({{kPi / 3, 0.2, 0.7}, {kPi / 2, 1.0, 0.0}}, ions, opts(4, 8));
    EXPECT_TRUE(res.converged);
}

TEST(Synth, VerificationClosure) {
    Rng rng = make_rng(5);
    for (int s = 0; s < 10; ++s) {
        const IonSet ions = IonSet::from_ratio(uniform(rng, 0.5, 0.95));
        const std::vector<TargetGate> targets{{uniform(rng, 0, kPi), uniform(rng, 0, kTwoPi), 0.0},
                                              {uniform(rng, 0, kPi), uniform(rng, 0, kTwoPi), 0.0}};
        const auto res = synthesize(targets, ions, opts(4, s));
        ASSERT_TRUE(res.converged);
        EXPECT_NEAR(res.residual_cost, cost(res.sequence, targets, ions), 1e-12);
        for (std::size_t k = 0; k < 2; ++k) {
            EXPECT_LE(distance_hs(sequence_rotation(res.sequence, ions.a_pi[k]), to_rotation(targets[k])),
                      res.residual_cost + 1e-15);
        }
    }
}

TEST(Synth, ShiftPhasesExamples) {
    Rng rng = make_rng(1);
    const PulseSequence s = random_sequence(rng, 4);
    EXPECT_EQ(shift_phases(s, 0.0), s);

    const IonSet ions = IonSet::from_ratio(0.80);
    const auto res = synthesize({kX90, kY90}, ions, opts(4, 3));
    ASSERT_TRUE(res.converged);
    const PulseSequence shifted = shift_phases(res.sequence, kPi / 2);
    EXPECT_LT(cost(shifted, {kY90, kXm90}, ions), 1e-9);

    const PulseSequence twice = shift_phases(shift_phases(res.sequence, kPi), kPi);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_LT(quat_distance(sequence_rotation(twice, ions.a_pi[k]), sequence_rotation(res.sequence, ions.a_pi[k])),
                  1e-12);
    }
}

TEST(Synth, PhaseShiftConjugationLaw) {
    Rng rng = make_rng(17);
    for (int i = 0; i < 100; ++i) {
        const PulseSequence s = random_sequence(rng, 1 + uniform_index(rng, 6));
        const double delta = uniform(rng, -kTwoPi, kTwoPi);
        const PulseSequence shifted = shift_phases(s, delta);
        for (double a : {1.0, 1.25, 0.7}) {
            EXPECT_LT(distance_hs(sequence_rotation(shifted, a), conjugate_z(sequence_rotation(s, a), delta)), 1e-12);
        }
    }
}

TEST(Synth, RequiredPulseCount) {
    EXPECT_EQ(required_pulse_count(1), 2u);
    EXPECT_EQ(required_pulse_count(2), 3u);
    EXPECT_EQ(required_pulse_count(3), 5u);
    EXPECT_EQ(required_pulse_count(4), 6u);
    EXPECT_THROW(required_pulse_count(0), std::invalid_argument);
}

// Oracle: union-find over pairs of rotations under Rz conjugation, with no use
// of the gate-label shift table.
TEST(Orbits, BruteForceEnumeration) {
    const auto pairs = all_gate_pairs();
    EXPECT_EQ(pairs.size(), 25u);
    std::vector<std::pair<Rotation, Rotation>> rots;
    for (const auto& p : pairs) rots.emplace_back(to_rotation(p.first), to_rotation(p.second));
    std::vector<int> label(pairs.size(), -1);
    int classes = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (label[i] >= 0) continue;
        label[i] = classes;
        for (int s = 1; s < 4; ++s) {
            const Rotation a = conjugate_z(rots[i].first, s * kPi / 2);
            const Rotation b = conjugate_z(rots[i].second, s * kPi / 2);
            for (std::size_t j = 0; j < pairs.size(); ++j) {
                if (quat_distance(rots[j].first, a) < 1e-12 && quat_distance(rots[j].second, b) < 1e-12) label[j] = classes;
            }
        }
        ++classes;
    }
    EXPECT_EQ(classes, 7);  // includes {(I, I)}

    const auto orbits = orbit_classes();
    ASSERT_EQ(orbits.size(), 6u);
    std::size_t members = 0;
    for (const auto& o : orbits) {
        members += o.members.size();
        EXPECT_EQ(o.representative, o.members.front().pair);
        const int cls = label[std::find(pairs.begin(), pairs.end(), o.representative) - pairs.begin()];
        for (const auto& m : o.members) {
            EXPECT_EQ(label[std::find(pairs.begin(), pairs.end(), m.pair) - pairs.begin()], cls);
            // stored angle maps the representative onto the member
            EXPECT_LT(quat_distance(conjugate_z(to_rotation(o.representative.first), m.shift_angle()),
                                    to_rotation(m.pair.first)),
                      1e-12);
            EXPECT_LT(quat_distance(conjugate_z(to_rotation(o.representative.second), m.shift_angle()),
                                    to_rotation(m.pair.second)),
                      1e-12);
        }
    }
    EXPECT_EQ(members, 24u);
}

TEST(Orbits, Examples) {
    const auto orbits = orbit_classes();
    const auto [i, m] = locate_orbit(orbits, {AddressedGate::XPlus, AddressedGate::XPlus});
    const auto [j, n] = locate_orbit(orbits, {AddressedGate::YPlus, AddressedGate::YPlus});
    EXPECT_EQ(i, j);
    EXPECT_DOUBLE_EQ(n.shift_angle() - m.shift_angle(), kPi / 2);

    const auto [k, fig] = locate_orbit(orbits, {AddressedGate::XPlus, AddressedGate::YPlus});
    EXPECT_EQ(orbits[k].representative, (GatePair{AddressedGate::XPlus, AddressedGate::YPlus}));
    EXPECT_EQ(fig.shift_steps, 0);
    const auto [k2, shifted] = locate_orbit(orbits, {AddressedGate::YPlus, AddressedGate::XMinus});
    EXPECT_EQ(k2, k);
    EXPECT_EQ(shifted.shift_steps, 1);

    EXPECT_THROW(locate_orbit(orbits, {AddressedGate::I, AddressedGate::I}), std::invalid_argument);
}

TEST(Orbits, LibrarySoundness) {
    const IonSet ions = IonSet::from_ratio(0.80);
    SynthesisOptions o;
    o.seed = 12;
    const SequenceLibrary lib = build_library(ions, o);
    ASSERT_EQ(lib.sequences.size(), 6u);
    for (std::size_t i = 0; i < lib.orbits.size(); ++i) {
        EXPECT_LT(lib.residuals[i], 1e-9);
        for (const auto& m : lib.orbits[i].members) {
            const PulseSequence s = lib.sequence_for(m.pair);
            for (std::size_t k = 0; k < 2; ++k) {
                const Rotation rep = sequence_rotation(lib.sequences[i], ions.a_pi[k]);
                EXPECT_LT(distance_hs(sequence_rotation(s, ions.a_pi[k]), conjugate_z(rep, m.shift_angle())), 1e-12);
            }
            EXPECT_LT(cost(s, pair_targets(m.pair), ions), 1e-9);
        }
    }
    EXPECT_THROW(lib.sequence_for({AddressedGate::I, AddressedGate::I}), std::invalid_argument);
}

TEST(Synth, SequenceJsonRoundTrip) {
    const IonSet ions = IonSet::from_ratio(0.8);
    const auto res = synthesize({kX90, kY90}, ions, opts(4, 2));
    const auto j = sequence_to_json(res.sequence, {kX90, kY90}, ions, res.residual_cost);
    for (const char* key : {"duration_s", "ramp_s", "delay_s", "pulses", "targets", "a_pi", "residual_cost"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_TRUE(j["pulses"][0].contains("amplitude"));
    EXPECT_TRUE(j["pulses"][0].contains("phase_rad"));
    const auto doc = sequence_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(doc.sequence, res.sequence);
    EXPECT_EQ(doc.ions.a_pi, ions.a_pi);
    EXPECT_EQ(doc.residual_cost, res.residual_cost);
}

TEST(Synth, InvalidInputs) {
    EXPECT_THROW(IonSet({1.0, -0.5}), std::invalid_argument);
    EXPECT_THROW((Pulse{-1.0, 0.0}).validate(), std::invalid_argument);
    EXPECT_THROW((Pulse{1.0, 0.0, 100e-9, 60e-9}).validate(), std::invalid_argument);
    PulseSequence mixed{{{1.0, 0.0, 600e-9, 120e-9}, {1.0, 0.0, 700e-9, 120e-9}}};
    EXPECT_THROW(mixed.validate(), std::invalid_argument);
    EXPECT_THROW(synthesize({kX90}, IonSet::from_ratio(0.8), opts(4, 0)), std::invalid_argument);
}
