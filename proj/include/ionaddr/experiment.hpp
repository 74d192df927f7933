#pragma once

// Batch experiments: JSON config -> result files + figure data + manifest.
// Every result is a pure function of (config, seed); only the manifest's
// timestamps change between runs.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionaddr/bench.hpp"
#include "ionaddr/calib.hpp"
#include "ionaddr/io.hpp"
#include "ionaddr/qsim.hpp"
#include "ionaddr/random.hpp"
#include "ionaddr/synth.hpp"
#include "json.hpp"

#ifndef IONADDR_VERSION
#define IONADDR_VERSION "0.0.0"
#endif

namespace ionaddr {

using nlohmann::json;

struct ConfigError : std::invalid_argument {
    ConfigError(const std::string& field, const std::string& reason)
        : std::invalid_argument("config field '" + field + "': " + reason), field(field) {}
    std::string field;
};

// ---------------------------------------------------------------------------
// Config

struct SweepConfig {
    std::vector<std::string> variables{"detuning", "amplitude", "zeeman", "delay"};
    std::map<std::string, std::vector<double>> values;  // empty -> defaults
    std::vector<std::size_t> rb_lengths{1, 20, 50, 100, 200};
    std::size_t rb_trials = 20;
};

struct CalibrateConfig {
    std::vector<std::string> steps{"detuning", "zeeman", "amplitude", "acceptance"};
    std::size_t shots = 0;
    double threshold = 5e-5;
    std::size_t budget = 20;
    std::vector<std::size_t> rb_lengths{1, 10, 25, 50, 100};
    std::size_t rb_trials = 4;
};

struct DriftConfig {
    std::size_t pulses_per_probe = 101;
    std::optional<double> amplitude;  // pulse amplitude; default a_pi[0]/2
    std::vector<double> times;
    std::vector<std::size_t> ions{0};
};

struct ExperimentConfig {
    std::string kind;
    std::optional<std::uint64_t> seed;
    IonSet ions = IonSet::from_ratio(0.8);
    NoiseModel noise;
    RBConfig rb;
    SynthesisOptions synthesis;
    std::vector<TargetGate> targets{to_target(AddressedGate::XPlus), to_target(AddressedGate::YPlus)};
    SweepConfig sweep;
    CalibrateConfig calibrate;
    DriftConfig drift;
    CliffordStats stats;
    std::string out;
    json source;  // config document after overrides
};

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k{"synth", "orbits", "rb", "sweep", "calibrate", "budget", "drift"};
    return k;
}

namespace detail {

// Reads one JSON object, remembering which keys were consumed so unknown keys
// can be reported with their full path.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        used_.insert(key);
        return j_.contains(key);
    }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    template <class T>
    void read(const std::string& key, T& target) {
        if (!has(key)) return;
        try {
            target = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(field(key), "wrong type");
        }
    }

    Section sub(const std::string& key) {
        used_.insert(key);
        return Section(j_.at(key), field(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError(field(k), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
void validated(const std::string& field, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(field, e.what());
    }
}

inline void parse_noise(Section s, NoiseModel& n) {
    if (s.has("preset")) {
        const json& p = s.raw("preset");
        if (!p.is_string()) throw ConfigError(s.field("preset"), "wrong type");
        if (p == "reference") n = reference_noise_model();
        else if (p != "none") throw ConfigError(s.field("preset"), "expected 'reference' or 'none'");
    }
    s.read("detuning_hz", n.detuning_hz);
    if (s.has("t2_s")) {
        const json& t = s.raw("t2_s");
        if (t.is_null() || t == "inf") n.t2_s = std::numeric_limits<double>::infinity();
        else if (t.is_number()) n.t2_s = t.get<double>();
        else throw ConfigError(s.field("t2_s"), "wrong type");
    }
    s.read("amp_scale", n.amp_scale);
    s.read("zeeman_shift_hz", n.zeeman_shift_hz);
    s.read("zeeman_comp_hz", n.zeeman_comp_hz);
    s.read("zeeman_ref_rabi_hz", n.zeeman_ref_rabi_hz);
    s.read("leakage_per_s", n.leakage_per_s);
    if (s.has("amp_drift")) {
        n.amp_drift.clear();
        for (const auto& p : s.raw("amp_drift")) {
            if (!p.is_array() || p.size() != 2) throw ConfigError(s.field("amp_drift"), "entries must be [time_s, amp_scale]");
            n.amp_drift.push_back({p[0].get<double>(), p[1].get<double>()});
        }
    }
    if (s.has("amp_drift_csv")) {
        const json& p = s.raw("amp_drift_csv");
        if (!p.is_string()) throw ConfigError(s.field("amp_drift_csv"), "wrong type");
        std::ifstream f(p.get<std::string>());
        if (!f) throw ConfigError(s.field("amp_drift_csv"), "cannot open " + p.get<std::string>());
        validated(s.field("amp_drift_csv"), [&] { n.amp_drift = read_drift_csv(f); });
    }
    if (s.has("spectators")) {
        n.spectators.clear();
        const json& arr = s.raw("spectators");
        if (!arr.is_array()) throw ConfigError(s.field("spectators"), "must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Section e(arr[i], s.field("spectators") + "[" + std::to_string(i) + "]");
            Spectator sp;
            e.read("detuning_hz", sp.detuning_hz);
            e.read("relative_rabi", sp.relative_rabi);
            e.read("level", sp.level);
            e.finish();
            n.spectators.push_back(sp);
        }
    }
    if (s.has("motion")) {
        Section m = s.sub("motion");
        m.read("enabled", n.motion.enabled);
        m.read("mode_freq_hz", n.motion.mode_freq_hz);
        m.read("rel_amp_mod", n.motion.rel_amp_mod);
        m.read("phase_points", n.motion.phase_points);
        if (m.has("eta") || m.has("nbar")) {
            double eta = 0, nbar = 0;
            m.read("eta", eta);
            m.read("nbar", nbar);
            if (!(eta >= 0 && nbar >= 0)) throw ConfigError(m.field("eta"), "eta and nbar must be >= 0");
            const bool enabled = n.motion.enabled;
            n.motion = MotionModel::thermal(eta, nbar, n.motion.mode_freq_hz);
            n.motion.enabled = enabled || !m.has("enabled");
        }
        m.finish();
    }
    s.finish();
    validated("noise", [&] { n.validate(); });
}

inline void parse_rb(Section s, RBConfig& rb) {
    s.read("lengths", rb.lengths);
    s.read("trials_per_length", rb.trials_per_length);
    if (s.has("mode")) validated(s.field("mode"), [&] { rb.mode = rb_mode_from_string(s.raw("mode").get<std::string>()); });
    if (s.has("gate_metric")) {
        validated(s.field("gate_metric"),
                  [&] { rb.gate_metric = gate_metric_from_string(s.raw("gate_metric").get<std::string>()); });
    }
    s.read("shots", rb.shots);
    s.read("spam_prep_error", rb.spam_prep_error);
    s.read("spam_meas_error", rb.spam_meas_error);
    s.read("reference", rb.reference);
    if (s.has("timing")) {
        Section t = s.sub("timing");
        t.read("duration_s", rb.timing.duration_s);
        t.read("ramp_s", rb.timing.ramp_s);
        t.read("delay_s", rb.timing.delay_s);
        t.finish();
    }
    s.finish();
    validated("rb", [&] { rb.validate(); });
}

inline TargetGate parse_target(const json& t, const std::string& field) {
    if (t.is_string()) {
        AddressedGate g{};
        validated(field, [&] { g = addressed_gate_from_string(t.get<std::string>()); });
        return to_target(g);
    }
    Section s(t, field);
    TargetGate g;
    s.read("theta", g.theta);
    s.read("phi", g.phi);
    s.read("delta", g.delta);
    s.finish();
    return g;
}

}  // namespace detail

/// Parses and validates a config document. Unknown keys are errors.
inline ExperimentConfig parse_config(const json& doc) {
    using detail::Section;
    ExperimentConfig c;
    c.source = doc;
    Section root(doc, "");
    if (!root.has("kind")) throw ConfigError("kind", "missing");
    root.read("kind", c.kind);
    if (std::find(experiment_kinds().begin(), experiment_kinds().end(), c.kind) == experiment_kinds().end()) {
        throw ConfigError("kind", "unknown experiment kind '" + c.kind + "'");
    }
    if (root.has("seed")) {
        const json& s = root.raw("seed");
        if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<std::int64_t>() < 0))
            throw ConfigError("seed", "must be a non-negative integer");
        c.seed = s.get<std::uint64_t>();
    }
    root.read("out", c.out);
    if (root.has("ions")) {
        Section s = root.sub("ions");
        if (s.has("a_pi")) {
            std::vector<double> a;
            s.read("a_pi", a);
            detail::validated("ions.a_pi", [&] { c.ions = IonSet(a); });
        } else {
            double ratio = 0.8, a0 = 1.0;
            s.read("ratio", ratio);
            s.read("a_pi0", a0);
            detail::validated("ions.ratio", [&] { c.ions = IonSet::from_ratio(ratio, a0); });
        }
        s.finish();
    }
    if (root.has("noise")) detail::parse_noise(root.sub("noise"), c.noise);
    if (root.has("rb")) detail::parse_rb(root.sub("rb"), c.rb);
    if (root.has("synthesis")) {
        Section s = root.sub("synthesis");
        s.read("n_pulses", c.synthesis.n_pulses);
        s.read("tol", c.synthesis.tol);
        s.read("max_restarts", c.synthesis.max_restarts);
        s.read("max_iterations", c.synthesis.max_iterations);
        s.read("duration_s", c.synthesis.duration);
        s.read("ramp_s", c.synthesis.ramp_time);
        s.read("delay_s", c.synthesis.inter_pulse_delay);
        if (s.has("targets")) {
            c.targets.clear();
            const json& arr = s.raw("targets");
            if (!arr.is_array()) throw ConfigError("synthesis.targets", "must be an array");
            for (std::size_t i = 0; i < arr.size(); ++i)
                c.targets.push_back(detail::parse_target(arr[i], "synthesis.targets[" + std::to_string(i) + "]"));
        }
        s.finish();
        if (c.synthesis.n_pulses < 1) throw ConfigError("synthesis.n_pulses", "must be >= 1");
    }
    if (root.has("budget")) {
        Section s = root.sub("budget");
        s.read("pulses_per_clifford", c.stats.pulses_per_clifford);
        s.read("pulse_s", c.stats.pulse_s);
        s.read("delay_s", c.stats.delay_s);
        s.read("ramp_s", c.stats.ramp_s);
        s.finish();
    }
    if (root.has("sweep")) {
        Section s = root.sub("sweep");
        s.read("variables", c.sweep.variables);
        s.read("values", c.sweep.values);
        s.read("rb_lengths", c.sweep.rb_lengths);
        s.read("rb_trials", c.sweep.rb_trials);
        s.finish();
        for (const auto& v : c.sweep.variables)
            if (v != "detuning" && v != "amplitude" && v != "zeeman" && v != "delay")
                throw ConfigError("sweep.variables", "unknown variable '" + v + "'");
        for (const auto& [k, v] : c.sweep.values)
            if (std::find(c.sweep.variables.begin(), c.sweep.variables.end(), k) == c.sweep.variables.end())
                throw ConfigError("sweep.values." + k, "not a swept variable");
    }
    if (root.has("calibrate")) {
        Section s = root.sub("calibrate");
        s.read("steps", c.calibrate.steps);
        s.read("shots", c.calibrate.shots);
        s.read("threshold", c.calibrate.threshold);
        s.read("budget", c.calibrate.budget);
        s.read("rb_lengths", c.calibrate.rb_lengths);
        s.read("rb_trials", c.calibrate.rb_trials);
        s.finish();
        for (const auto& st : c.calibrate.steps)
            if (st != "detuning" && st != "zeeman" && st != "amplitude" && st != "acceptance")
                throw ConfigError("calibrate.steps", "unknown step '" + st + "'");
        if (c.calibrate.budget < 1) throw ConfigError("calibrate.budget", "must be >= 1");
    }
    if (root.has("drift")) {
        Section s = root.sub("drift");
        s.read("pulses_per_probe", c.drift.pulses_per_probe);
        if (s.has("amplitude")) c.drift.amplitude = s.raw("amplitude").get<double>();
        s.read("times", c.drift.times);
        if (s.has("schedule")) {
            Section g = s.sub("schedule");
            double start = 0, stop = 0;
            std::size_t count = 0;
            g.read("start_s", start);
            g.read("stop_s", stop);
            g.read("count", count);
            g.finish();
            if (count < 1) throw ConfigError("drift.schedule.count", "must be >= 1");
            c.drift.times.clear();
            for (std::size_t i = 0; i < count; ++i)
                c.drift.times.push_back(count == 1 ? start
                                                   : start + (stop - start) * static_cast<double>(i) /
                                                                 static_cast<double>(count - 1));
        }
        s.read("ions", c.drift.ions);
        s.finish();
        for (std::size_t k : c.drift.ions)
            if (k >= c.ions.size()) throw ConfigError("drift.ions", "ion index out of range");
    }
    root.finish();
    if (c.kind == "synth" && c.targets.size() != c.ions.size())
        throw ConfigError("synthesis.targets", "one target per ion required");
    if ((c.kind == "rb" && c.rb.mode == RBMode::Simultaneous) || c.kind == "calibrate") {
        if (c.ions.size() != 2) throw ConfigError("ions", "two ions required");
    }
    if (c.kind == "drift" && c.drift.times.empty()) throw ConfigError("drift.times", "empty schedule");
    return c;
}

/// Sets a dotted path ("noise.t2_s") to a value; the value is read as JSON
/// when it parses, otherwise as a string.
inline void apply_override(json& doc, const std::string& path, const std::string& value) {
    if (path.empty()) throw ConfigError("<override>", "empty key");
    json* node = &doc;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (key.empty()) throw ConfigError(path, "empty path segment");
        if (!node->is_object()) throw ConfigError(path, "parent is not an object");
        if (dot == std::string::npos) {
            json v = json::parse(value, nullptr, false);
            (*node)[key] = v.is_discarded() ? json(value) : v;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        pos = dot + 1;
    }
}

/// 64-bit FNV-1a over the canonical config dump (output directory excluded).
inline std::string config_hash(const json& doc) {
    json d = doc;
    if (d.is_object()) d.erase("out");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : d.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Runners

struct ExperimentResult {
    std::filesystem::path dir;
    std::vector<std::string> files;  // relative to dir, in write order
};

namespace detail {

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class Writer {
public:
    explicit Writer(ExperimentResult& r) : r_(r) {}

    std::ofstream open(const std::string& name) {
        std::ofstream f(r_.dir / name);
        if (!f) throw std::runtime_error("cannot write " + (r_.dir / name).string());
        if (std::find(r_.files.begin(), r_.files.end(), name) == r_.files.end()) r_.files.push_back(name);
        return f;
    }

    void put_json(const std::string& name, const json& j) { open(name) << j.dump(2) << '\n'; }

private:
    ExperimentResult& r_;
};

inline json orbits_json(const std::vector<Orbit>& orbits) {
    json arr = json::array();
    for (const auto& o : orbits) {
        json members = json::array();
        for (const auto& m : o.members)
            members.push_back({{"pair", {to_string(m.pair.first), to_string(m.pair.second)}},
                               {"shift_steps", m.shift_steps},
                               {"shift_rad", m.shift_angle()}});
        arr.push_back({{"representative", {to_string(o.representative.first), to_string(o.representative.second)}},
                       {"members", members}});
    }
    return arr;
}

inline json library_json(const SequenceLibrary& lib) {
    json arr = json::array();
    for (std::size_t i = 0; i < lib.orbits.size(); ++i) {
        json e = sequence_to_json(lib.sequences[i], pair_targets(lib.orbits[i].representative), lib.ions,
                                  lib.residuals[i]);
        e["representative"] = {to_string(lib.orbits[i].representative.first),
                               to_string(lib.orbits[i].representative.second)};
        arr.push_back(e);
    }
    return arr;
}

inline SynthesisOptions seeded(SynthesisOptions o, std::uint64_t seed) {
    o.seed = derive_seed(seed, {2});
    return o;
}

inline void run_synth(const ExperimentConfig& c, std::uint64_t seed, Writer& w) {
    const SynthesisResult r = synthesize(c.targets, c.ions, seeded(c.synthesis, seed));
    json j = sequence_to_json(r.sequence, c.targets, c.ions, r.residual_cost);
    j["converged"] = r.converged;
    j["attempts"] = r.attempts;
    j["per_ion_distance"] = r.per_ion_distance;
    w.put_json("sequence.json", j);
    if (!r.converged) throw std::runtime_error("synthesis did not converge (residual " + fmt(r.residual_cost) + ")");
}

inline void run_rb_kind(const ExperimentConfig& c, std::uint64_t seed, Writer& w) {
    RBConfig cfg = c.rb;
    cfg.seed = derive_seed(seed, {1});
    std::optional<SequenceLibrary> lib;
    if (cfg.mode == RBMode::Simultaneous) {
        lib = build_library(c.ions, seeded(c.synthesis, seed));
        w.put_json("library.json", library_json(*lib));
    }
    const RBResult r = run_rb(cfg, c.noise, c.ions, lib ? &*lib : nullptr);
    {
        auto f = w.open("rb.csv");
        write_rb_csv(f, r);
    }
    // mean fit abscissa per (ion, length), so the figure data can draw the fit
    json xs = json::array();
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> acc;
    for (const auto& rec : r.records) {
        auto& a = acc[{rec.ion, rec.length}];
        a.first += rec.gates;
        ++a.second;
    }
    for (const auto& [k, v] : acc)
        xs.push_back({{"ion", k.first}, {"length", k.second}, {"x", v.first / static_cast<double>(v.second)}});
    w.put_json("fits.json", {{"mode", to_string(cfg.mode)},
                             {"gate_metric", to_string(cfg.gate_metric)},
                             {"model", "P(x) = 0.5 + (0.5 - spam) * alpha^x, alpha = 1 - 2 * error_per_gate"},
                             {"fits", fit_json(r)},
                             {"mean_x", xs}});
}

inline std::vector<double> default_sweep(const std::string& var) {
    std::vector<double> v;
    auto range = [&](double lo, double hi, int n) {
        for (int i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * i / (n - 1));
    };
    if (var == "detuning") range(-200.0, 200.0, 9);
    else if (var == "amplitude") range(-2e-3, 2e-3, 9);
    else if (var == "zeeman") range(-300.0, 300.0, 9);
    else range(0.0, 20e-6, 9);
    return v;
}

inline std::string sweep_letter(const std::string& var) {
    if (var == "detuning") return "a";
    if (var == "amplitude") return "b";
    if (var == "zeeman") return "c";
    return "d";
}

/// Single-ion RB at each sweep point (measured: error per Clifford divided by
/// the mean pulses per Clifford) next to the simulated π/2 + delay slot error.
inline void run_sweep(const ExperimentConfig& c, std::uint64_t seed, Writer& w) {
    const IonSet one({c.ions.a_pi[0]});
    for (const std::string& var : c.sweep.variables) {
        const auto it = c.sweep.values.find(var);
        const std::vector<double> values = it != c.sweep.values.end() ? it->second : default_sweep(var);
        auto f = w.open("sweep_" + var + ".csv");
        f << "variable,measured,model,measured_stderr\n";
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double v = values[i];
            NoiseModel n = c.noise;
            CliffordStats st = c.stats;
            st.a_pi = c.ions.a_pi[0];
            RBConfig rb = c.rb;
            rb.mode = RBMode::Single;
            rb.gate_metric = GateMetric::Clifford;
            rb.lengths = c.sweep.rb_lengths;
            rb.trials_per_length = c.sweep.rb_trials;
            rb.timing = {st.pulse_s, st.ramp_s, st.delay_s};
            if (var == "detuning") n.detuning_hz += v;
            else if (var == "amplitude") n.amp_scale *= 1.0 + v;
            else if (var == "zeeman") n.zeeman_comp_hz += v;
            else {
                if (v < 0) throw ConfigError("sweep.values.delay", "delays must be >= 0");
                st.delay_s = v;
                rb.timing.delay_s = v;
            }
            rb.seed = derive_seed(seed, {5});  // same sequences at every point
            validated("sweep", [&] { n.validate(); });
            const RBResult r = run_rb(rb, n, one);
            const double ppc = clifford_table().mean_word_length();
            const DecayFit& fit = r.fits.at(0).fit;
            f << fmt(v) << ',' << fmt(fit.error_per_gate / ppc) << ',' << fmt(pulse_slot_error(n, st)) << ','
              << (fit.degenerate ? std::string("inf") : fmt(fit.error_stderr / ppc)) << '\n';
        }
    }
}

inline void run_calibrate(const ExperimentConfig& c, std::uint64_t seed, Writer& w) {
    auto has = [&](const char* s) {
        return std::find(c.calibrate.steps.begin(), c.calibrate.steps.end(), s) != c.calibrate.steps.end();
    };
    SimulatedIon ion(c.noise, c.ions.a_pi[0], c.calibrate.shots, derive_seed(seed, {4}));
    std::vector<CalibrationRecord> recs;
    json summary;
    if (has("detuning")) {
        recs.push_back(calibrate_detuning(ion));
        summary["freq_offset_hz"] = ion.freq_offset_hz;
    }
    if (has("zeeman")) {
        recs.push_back(calibrate_zeeman_compensation(ion));
        summary["zeeman_comp_hz"] = ion.zeeman_comp_hz;
    }
    if (has("amplitude")) {
        const AmplitudeCalibration a = calibrate_amplitude(ion);
        recs.push_back(a.record);
        summary["amp_factor"] = ion.amp_factor;
        summary["amp_scale_estimate"] = a.record.value;
        json stages = json::array();
        for (const auto& s : a.stages)
            stages.push_back({{"repetitions", s.repetitions}, {"amp_factor", s.amp_factor}, {"uncertainty", s.uncertainty}});
        summary["amplitude_stages"] = stages;
    }
    if (!recs.empty()) {
        auto f = w.open("calibration_history.csv");
        write_history_csv(f, recs);
    }

    if (has("acceptance")) {
        // the loop runs on the ion as calibrated above
        NoiseModel eff = ion.effective();
        eff.amp_scale *= ion.amp_factor;
        AcceptanceOptions o;
        o.threshold = c.calibrate.threshold;
        o.budget = c.calibrate.budget;
        o.seed = derive_seed(seed, {3});
        o.synthesis = c.synthesis;
        o.rb.lengths = c.calibrate.rb_lengths;
        o.rb.trials = c.calibrate.rb_trials;
        const LibraryCalibration lc = calibrate_library(c.ions, eff, o);
        auto f = w.open("acceptance.csv");
        f << "orbit,gate0,gate1,candidate,seed,synthesized,rb_error,orbit_error,accepted,threshold\n";
        for (std::size_t i = 0; i < lc.loops.size(); ++i) {
            const auto& st = lc.loops[i];
            for (const auto& cand : st.candidates) {
                f << i << ',' << to_string(st.target.first) << ',' << to_string(st.target.second) << ',' << cand.index << ',' << cand.seed << ','
                  << (cand.synthesized ? 1 : 0) << ',' << fmt(cand.rb_error) << ',' << fmt(cand.orbit_error) << ','
                  << (st.accepted && *st.accepted == cand.index ? 1 : 0) << ',' << fmt(st.threshold) << '\n';
            }
        }
        w.put_json("library.json", library_json(lc.library));
        summary["library_complete"] = lc.complete;
    }
    w.put_json("calibration.json", summary);
}

inline void run_budget(const ExperimentConfig& c, Writer& w) {
    CliffordStats st = c.stats;
    st.a_pi = c.ions.a_pi[0];
    const ErrorBudget b = error_budget(c.noise, st);
    auto f = w.open("budget.csv");
    f << "source,error_per_clifford\n";
    for (const auto& r : b.rows) f << r.source << ',' << fmt(r.error_per_clifford) << '\n';
    f << "total," << fmt(b.total) << '\n';
}

inline void run_drift(const ExperimentConfig& c, std::uint64_t seed, Writer& w) {
    const double amp = c.drift.amplitude.value_or(0.5 * c.ions.a_pi[0]);
    auto f = w.open("drift.csv");
    f << "time_s,ion,population,amp_error,pulse_error\n";
    for (std::size_t k : c.drift.ions) {
        SimulatedIon ion(c.noise, c.ions.a_pi[k], 0, derive_seed(seed, {6, k}));
        for (const auto& d : drift_monitor(ion, c.drift.pulses_per_probe, c.drift.times, amp)) {
            f << fmt(d.time_s) << ',' << k << ',' << fmt(d.population) << ',' << fmt(d.amp_error) << ','
              << fmt(d.pulse_error) << '\n';
        }
    }
}

}  // namespace detail

/// Converts the raw results in `dir` into the per-figure CSVs. Throws if the
/// directory holds no recognized results or a result lacks its companion.
inline std::vector<std::string> emit_plotdata(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> out;
    auto write = [&](const std::string& name) {
        std::ofstream f(dir / name);
        if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
        out.push_back(name);
        return f;
    };

    if (fs::exists(dir / "rb.csv")) {
        if (!fs::exists(dir / "fits.json")) throw std::runtime_error("emit_plotdata: rb.csv without fits.json");
        const CsvTable t = read_csv_file((dir / "rb.csv").string());
        std::ifstream jf(dir / "fits.json");
        const json fits = json::parse(jf);
        std::map<std::size_t, DecayFit> fit;
        for (const auto& f : fits.at("fits")) {
            DecayFit d;
            d.alpha = f.at("alpha").get<double>();
            d.spam = f.at("spam").get<double>();
            fit[f.at("ion").get<std::size_t>()] = d;
        }
        std::map<std::pair<std::size_t, std::size_t>, double> xs;
        for (const auto& e : fits.at("mean_x")) xs[{e.at("ion").get<std::size_t>(), e.at("length").get<std::size_t>()}] = e.at("x").get<double>();
        std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> acc;
        const std::size_t ci = t.column("ion"), cl = t.column("length"), cs = t.column("survival");
        for (const auto& r : t.rows) {
            auto& a = acc[{std::stoul(r[ci]), std::stoul(r[cl])}];
            a.first += parse_double(r[cs]);
            ++a.second;
        }
        const bool single = fits.at("mode") == "single";
        auto f = write(single ? "fig1b.csv" : "fig4b.csv");
        f << (single ? "length,error,fit\n" : "ion,length,error,fit\n");
        for (const auto& [k, v] : acc) {
            if (single && k.first != 0) continue;
            const double err = 1.0 - v.first / static_cast<double>(v.second);
            std::string fitv = "nan";
            if (fit.count(k.first) && xs.count(k)) {
                const DecayFit& d = fit[k.first];
                fitv = fmt(1.0 - (0.5 + (0.5 - d.spam) * std::pow(d.alpha, xs[k])));
            }
            if (!single) f << k.first << ',';
            f << k.second << ',' << fmt(err) << ',' << fitv << '\n';
        }
    }
    if (fs::exists(dir / "acceptance.csv")) {
        const CsvTable t = read_csv_file((dir / "acceptance.csv").string());
        auto f = write("figS2.csv");
        f << "orbit,candidate,error,threshold\n";
        const std::size_t co = t.column("orbit"), cc = t.column("candidate"), ce = t.column("rb_error"),
                          ct = t.column("threshold");
        for (const auto& r : t.rows) f << r[co] << ',' << r[cc] << ',' << r[ce] << ',' << r[ct] << '\n';
    }
    for (const char* var : {"detuning", "amplitude", "zeeman", "delay"}) {
        const fs::path p = dir / (std::string("sweep_") + var + ".csv");
        if (!fs::exists(p)) continue;
        const CsvTable t = read_csv_file(p.string());
        auto f = write("figS4_" + detail::sweep_letter(var) + ".csv");
        f << "variable,measured,model\n";
        const std::size_t cv = t.column("variable"), cm = t.column("measured"), cd = t.column("model");
        for (const auto& r : t.rows) f << r[cv] << ',' << r[cm] << ',' << r[cd] << '\n';
    }
    if (fs::exists(dir / "drift.csv")) {
        const CsvTable t = read_csv_file((dir / "drift.csv").string());
        auto f = write("figS5.csv");
        f << "time_s,ion,inferred_error\n";
        const std::size_t ct = t.column("time_s"), ci = t.column("ion"), ce = t.column("pulse_error");
        for (const auto& r : t.rows) f << r[ct] << ',' << r[ci] << ',' << r[ce] << '\n';
    }
    if (out.empty() && !fs::exists(dir / "budget.csv") && !fs::exists(dir / "orbits.json") &&
        !fs::exists(dir / "sequence.json") && !fs::exists(dir / "calibration.json")) {
        throw std::runtime_error("emit_plotdata: no results in " + dir.string());
    }
    return out;
}

/// Runs the configured experiment into `c.out`, then emits figure data and
/// the manifest. The seed must come from the config (or an override).
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
    if (!c.seed) throw ConfigError("seed", "missing (no wall-clock fallback)");
    if (c.out.empty()) throw ConfigError("out", "missing output directory");
    const std::uint64_t seed = *c.seed;
    const std::string started = detail::utc_now();

    ExperimentResult res;
    res.dir = c.out;
    std::filesystem::create_directories(res.dir);
    detail::Writer w(res);

    if (c.kind == "synth") detail::run_synth(c, seed, w);
    else if (c.kind == "orbits") w.put_json("orbits.json", detail::orbits_json(orbit_classes()));
    else if (c.kind == "rb") detail::run_rb_kind(c, seed, w);
    else if (c.kind == "sweep") detail::run_sweep(c, seed, w);
    else if (c.kind == "calibrate") detail::run_calibrate(c, seed, w);
    else if (c.kind == "budget") detail::run_budget(c, w);
    else if (c.kind == "drift") detail::run_drift(c, seed, w);

    for (const auto& f : emit_plotdata(res.dir))
        if (std::find(res.files.begin(), res.files.end(), f) == res.files.end()) res.files.push_back(f);

    json m;
    m["config_hash"] = config_hash(c.source);
    m["seed"] = seed;
    m["version"] = IONADDR_VERSION;
    m["started"] = started;
    m["finished"] = detail::utc_now();
    m["kind"] = c.kind;
    m["files"] = res.files;
    m["config"] = c.source;
    w.put_json("manifest.json", m);
    return res;
}

inline json load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    try {
        return json::parse(f, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
    }
}

}  // namespace ionaddr
