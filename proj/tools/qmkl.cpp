// qmkl: command line driver for the quantum multiple-kernel-learning pipeline.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration/usage error,
// 3 solver or degenerate input, 4 I/O, ingestion or stale artifact.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qmkl/qmkl.hpp"

namespace {

struct Common {
    std::string config;
    bool force = false;
    int workers = 1;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "experiment configuration (JSON)")->required();
    cmd->add_flag("-f,--force", c.force, "recompute artifacts even if present");
    cmd->add_option("-w,--workers", c.workers, "worker threads")->check(CLI::Range(1, 256));
    cmd->add_option("--seed", c.seed, "override preprocessing.seed");
}

qmkl::ExperimentConfig load(const Common& c, bool need_dataset) {
    auto cfg = qmkl::load_config(c.config, need_dataset);
    if (c.seed) qmkl::override_seed(cfg, *c.seed);
    return cfg;
}

qmkl::RunOptions run_options(const Common& c) {
    qmkl::RunOptions o;
    o.force = c.force;
    o.workers = c.workers;
    o.log = &std::cerr;
    return o;
}

int report(const char* kind, const std::exception& e, int code) {
    std::cerr << "qmkl: " << kind << ": " << e.what() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantum multiple kernel learning experiments"};
    app.require_subcommand(1);

    Common prep, kern, run, diag;
    auto* c_prep = app.add_subcommand("prepare", "sample splits and preprocess features");
    auto* c_kern = app.add_subcommand("kernels", "compute kernel matrices for every split");
    auto* c_run = app.add_subcommand("run", "cross-validate and score every model");
    auto* c_diag = app.add_subcommand("diagnose", "concentration statistics and shot sweeps");
    add_common(c_prep, prep);
    add_common(c_kern, kern);
    add_common(c_run, run);
    add_common(c_diag, diag);

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_prep->parsed()) {
            const auto cfg = load(prep, true);
            const auto files = qmkl::cmd_prepare(cfg, run_options(prep));
            std::cout << "prepared " << files.size() << " splits under " << (cfg.output / "prepared").string()
                      << '\n';
        } else if (c_kern->parsed()) {
            const auto cfg = load(kern, true);
            const auto n = qmkl::cmd_kernels(cfg, run_options(kern));
            std::cout << "computed " << n << " kernels\n";
        } else if (c_run->parsed()) {
            const auto cfg = load(run, true);
            const auto summary = qmkl::cmd_run(cfg, run_options(run));
            std::cout << "results: " << summary.results_json.string() << '\n'
                      << "tidy:    " << summary.tidy_csv.string() << '\n';
        } else if (c_diag->parsed()) {
            const auto cfg = load(diag, true);
            const auto summary = qmkl::cmd_diagnose(cfg, run_options(diag));
            std::cout << "diagnose: " << summary.concentration.size() << " concentration rows, "
                      << summary.sweep.size() << " sweep rows in " << (cfg.output / "diagnose").string() << '\n';
        }
    } catch (const qmkl::configuration_error& e) {
        return report("configuration error", e, 2);
    } catch (const qmkl::usage_error& e) {
        return report("usage error", e, 2);
    } catch (const qmkl::parse_error& e) {
        return report("parse error", e, 2);
    } catch (const qmkl::solver_error& e) {
        return report("solver error", e, 3);
    } catch (const qmkl::degenerate_input_error& e) {
        return report("degenerate input", e, 3);
    } catch (const qmkl::ingestion_error& e) {
        return report("ingestion error", e, 4);
    } catch (const qmkl::io_error& e) {
        return report("i/o error", e, 4);
    } catch (const qmkl::stale_artifact_error& e) {
        return report("stale artifact", e, 4);
    } catch (const std::exception& e) {
        return report("error", e, 1);
    }
    return 0;
}
