// ionaddr: run one experiment kind from a JSON config.
//
//   ionaddr rb --config configs/rb_single.json --out results/rb --seed 1 --noise.t2_s=4.6
//
// Unrecognized --a.b=value flags override config keys by dotted path.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ionaddr/experiment.hpp"

namespace {

// Pulls "--key=value" / "--key value" pairs out of CLI11's leftovers.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& a = extras[i];
        if (a.rfind("--", 0) != 0 || a.size() < 3) throw CLI::ExtrasError({a});
        const std::string body = a.substr(2);
        const auto eq = body.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size()) throw CLI::ArgumentMismatch(a + " needs a value");
            out.emplace_back(body, extras[++i]);
        }
        if (out.back().first.find('.') == std::string::npos && out.back().first != "kind")
            throw CLI::ExtrasError({a});
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Composite-pulse addressing toolkit: synthesis, simulation, RB and calibration experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(IONADDR_VERSION));

    std::string config_path, out_dir;
    std::uint64_t seed = 0;

    for (const std::string& kind : ionaddr::experiment_kinds()) {
        CLI::App* sub = app.add_subcommand(kind, "run a '" + kind + "' experiment");
        sub->allow_extras();
        sub->add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("-o,--out", out_dir, "output directory (overrides config 'out')");
        sub->add_option("-s,--seed", seed, "random seed (required unless the config sets one)");
    }
    std::string plot_dir;
    CLI::App* plot = app.add_subcommand("plotdata", "re-emit figure CSVs from results in a directory");
    plot->add_option("dir", plot_dir, "results directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (plot->parsed()) {
            for (const auto& f : ionaddr::emit_plotdata(plot_dir)) std::cout << f << '\n';
            return 0;
        }
        CLI::App* sub = app.get_subcommands().front();
        nlohmann::json doc = config_path.empty() ? nlohmann::json::object() : ionaddr::load_config_file(config_path);
        if (doc.contains("kind") && doc["kind"] != sub->get_name()) {
            std::cerr << "error: config kind '" << doc["kind"].get<std::string>() << "' does not match subcommand '"
                      << sub->get_name() << "'\n";
            return 2;
        }
        doc["kind"] = sub->get_name();
        if (sub->count("--seed")) doc["seed"] = seed;
        if (sub->count("--out")) doc["out"] = out_dir;
        for (const auto& [k, v] : dotted_overrides(sub->remaining())) ionaddr::apply_override(doc, k, v);
        if (!doc.contains("seed")) {
            std::cerr << "error: --seed is required (or set 'seed' in the config)\n";
            return 2;
        }
        if (!doc.contains("out")) {
            std::cerr << "error: --out is required (or set 'out' in the config)\n";
            return 2;
        }
        const ionaddr::ExperimentConfig cfg = ionaddr::parse_config(doc);
        const auto res = ionaddr::run_experiment(cfg);
        for (const auto& f : res.files) std::cout << (res.dir / f).string() << '\n';
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ionaddr::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
