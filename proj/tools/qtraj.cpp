// qtraj: run a configured experiment and write CSV plus manifest.json.
//
// Exit status: 0 success, 1 failed check or run failure, 2 usage error.

#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "qtraj/experiment.hpp"

namespace {

struct Options {
    std::string config;
    std::string out = ".";
    int threads = qtraj::default_thread_count();
    std::optional<std::uint64_t> seed;
};

int run(qtraj::ExperimentKind kind, const Options& o) {
    qtraj::ExperimentConfig cfg;
    try {
        cfg = qtraj::parse_config_file(o.config, kind);
        if (o.seed) cfg.seed = *o.seed;
    } catch (const qtraj::ConfigError& e) {
        std::cerr << "qtraj: " << e.what() << "\n";
        return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    qtraj::ExperimentResult result;
    try {
        result = qtraj::run_experiment(cfg, o.threads);
    } catch (const qtraj::ConfigError& e) {
        std::cerr << "qtraj: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "qtraj: run failed: " << e.what() << "\n";
        return 1;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto manifest = qtraj::make_manifest(cfg, result, wall, o.threads);
    try {
        qtraj::write_outputs(o.out, result, manifest);
    } catch (const std::exception& e) {
        std::cerr << "qtraj: " << e.what() << "\n";
        return 1;
    }
    std::cout << result.checks.str();
    for (const auto& f : result.files) std::cout << "wrote " << (std::filesystem::path(o.out) / f.name).string() << "\n";
    std::cout << "summary " << result.summary.dump() << "\n";
    return result.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantum trajectory simulator for linear and non-linear stochastic Schroedinger equations"};
    app.require_subcommand(1);
    Options opt;
    std::optional<qtraj::ExperimentKind> kind;

    const std::pair<const char*, qtraj::ExperimentKind> commands[] = {
        {"simulate", qtraj::ExperimentKind::simulate_linear},
        {"heating", qtraj::ExperimentKind::heating},
        {"ehrenfest", qtraj::ExperimentKind::ehrenfest},
        {"regularity", qtraj::ExperimentKind::regularity},
        {"verify", qtraj::ExperimentKind::verify_identities},
        {"oracle-compare", qtraj::ExperimentKind::oracle_compare},
        {"resolvent", qtraj::ExperimentKind::resolvent_convergence},
    };
    for (const auto& [name, k] : commands) {
        auto* sub = app.add_subcommand(name, "run a " + qtraj::to_string(k) + " experiment");
        sub->add_option("--config", opt.config, "JSON config or run manifest")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
        sub->add_option("--threads", opt.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--seed", opt.seed, "master seed (overrides the config)");
        sub->callback([&kind, k = k] { kind = k; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return run(*kind, opt);
}
