#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "mmclab/harness.hpp"

namespace fs = std::filesystem;
using namespace mmclab;

namespace {

struct CommonOptions {
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool overrides)
{
    cmd->add_option("--out", o.out_dir, "output directory for records.csv and summary.json")->required();
    if (overrides) {
        cmd->add_option("--seed", o.seed, "root seed");
        cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    }
}

int execute(ExperimentConfig cfg, const CommonOptions& o)
{
    if (o.seed) cfg.root_seed = *o.seed;
    if (o.threads) cfg.threads = *o.threads;
    validate(cfg);
    std::error_code ec;
    fs::create_directories(o.out_dir, ec);
    if (ec) throw IoError("cannot create " + o.out_dir + ": " + ec.message());

    const auto records = run_experiment(cfg);
    const std::string csv = (fs::path(o.out_dir) / "records.csv").string();
    const std::string json = (fs::path(o.out_dir) / "summary.json").string();
    emit_csv(records, csv);
    emit_json_summary(records, json);

    const auto summary = summary_json(records);
    std::cout << records.size() << " records, " << summary["n_checks"].get<int>() << " checks, "
              << summary["n_failed"].get<int>() << " failed\n";
    for (const auto& f : summary["failures"])
        std::cout << "  FAIL " << f["experiment"].get<std::string>() << " " << f["method"].get<std::string>() << " "
                  << f["split"].get<std::string>() << " " << f["group"].get<std::string>() << " "
                  << f["metric"].get<std::string>() << " value=" << f["value"].dump()
                  << " prediction=" << f["prediction"].dump() << " (" << f["comparator"].get<std::string>() << ")\n";
    std::cout << "wrote " << csv << " and " << json << "\n";
    return all_pass(records) ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"mmclab: linear multimodal contrastive learning robustness experiments"};
    app.require_subcommand(1);

    CommonOptions verify_opts, run_opts, sweep_opts;
    std::string suite = "all", run_config, sweep_config;

    auto* verify = app.add_subcommand("verify", "run a built-in suite comparing measurements with predictions");
    verify->add_option("--suite", suite, "suite to run")->check(CLI::IsMember(verify_suite_names()));
    add_common(verify, verify_opts, true);

    auto* run = app.add_subcommand("run", "run one experiment config");
    run->add_option("--config", run_config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    add_common(run, run_opts, true);

    auto* sweep = app.add_subcommand("sweep", "run the grid of a sweep config");
    sweep->add_option("--config", sweep_config, "JSON experiment config with a grid")->required()->check(CLI::ExistingFile);
    add_common(sweep, sweep_opts, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*verify) {
            ExperimentConfig cfg;
            cfg.kind = ExperimentKind::VerifyTheorems;
            cfg.suite = suite;
            return execute(cfg, verify_opts);
        }
        if (*run) return execute(load_config(run_config), run_opts);
        ExperimentConfig cfg = load_config(sweep_config);
        if (cfg.grid.empty()) throw ValidationError("sweep config has no grid");
        return execute(cfg, sweep_opts);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
