// Command-line front end for the equalization experiment harness.
//
//   sweep     train/score every (method, lr, replicate) over a sweep grid
//   tracking  channel-switching run for the blind methods
//   screen    run the sweep and print the best-learning-rate table
//   eye       dump aligned (truth, received) samples for eyediagram plots
//   validate  parse a config, print its canonical form, hash, and manifest
//
// All artifacts are deterministic for a given config; wall-clock timings go
// to a separate timings file so repeated runs diff clean.

#include "blindeq/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    bool desk = false;
    unsigned threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool wants_threads) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out-dir", args.out_dir, "directory for output artifacts");
    cmd->add_option("--seed", args.seed, "override the master seed from the config");
    cmd->add_flag("--desk", args.desk, "shrink symbol counts 10x and cap replicates at 5");
    if (wants_threads)
        cmd->add_option("--threads", args.threads, "worker threads for independent runs")
            ->check(CLI::PositiveNumber);
}

blindeq::ExperimentConfig load(const CommonArgs& args) {
    blindeq::ExperimentConfig cfg = blindeq::load_config_file(args.config_path);
    if (args.seed) cfg.master_seed = *args.seed;
    if (args.desk) blindeq::apply_desk_scale(cfg);
    return cfg;
}

std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
}

void write_manifest(const std::filesystem::path& dir, const blindeq::ExperimentConfig& cfg) {
    auto out = open_out(dir, "manifest.json");
    out << blindeq::make_manifest(cfg).dump(2) << '\n';
}

void print_summary_table(const std::vector<blindeq::SweepSummaryRow>& summary) {
    std::printf("%-10s %10s %-9s %9s %12s %12s %5s\n", "parameter", "value", "method", "best_lr",
                "mean_ser", "ci95_half", "n_ok");
    for (const auto& s : summary)
        std::printf("%-10s %10.4g %-9s %9.3g %12.5g %12.5g %5zu\n", s.parameter.c_str(), s.value,
                    blindeq::method_name(s.method).c_str(), s.best_lr, s.mean_ser, s.ci95_half,
                    s.n_ok);
}

int run_sweep_cmd(const CommonArgs& args, bool screen_only) {
    const auto cfg = load(args);
    const auto result = blindeq::run_sweep(cfg, args.threads);
    if (screen_only) {
        print_summary_table(result.summary);
        return 0;
    }
    const std::filesystem::path dir(args.out_dir);
    { auto out = open_out(dir, "sweep.csv"); blindeq::write_sweep_csv(out, result); }
    { auto out = open_out(dir, "summary.csv"); blindeq::write_summary_csv(out, result.summary); }
    { auto out = open_out(dir, "timings.csv"); blindeq::write_timings_csv(out, result); }
    write_manifest(dir, cfg);
    std::printf("wrote %zu rows to %s (hash %s)\n", result.rows.size(),
                (dir / "sweep.csv").c_str(), blindeq::config_hash(cfg).c_str());
    print_summary_table(result.summary);
    return 0;
}

int run_tracking_cmd(const CommonArgs& args) {
    const auto cfg = load(args);
    const auto result = blindeq::run_tracking(cfg);
    const std::filesystem::path dir(args.out_dir);
    { auto out = open_out(dir, "tracking_loss.csv"); blindeq::write_tracking_loss_csv(out, result); }
    { auto out = open_out(dir, "tracking_ser.csv"); blindeq::write_tracking_ser_csv(out, result); }
    write_manifest(dir, cfg);
    std::printf("wrote %zu loss rows and %zu ser rows to %s\n", result.loss.size(),
                result.ser.size(), dir.c_str());
    return 0;
}

int run_eye_cmd(const CommonArgs& args, std::size_t point, std::size_t symbols) {
    const auto cfg = load(args);
    if (point >= blindeq::sweep_point_count(cfg))
        throw std::runtime_error("point index out of range for this config");
    const std::filesystem::path dir(args.out_dir);
    auto out = open_out(dir, "eye.csv");
    blindeq::export_eye_csv(out, cfg, point, symbols);
    std::printf("wrote %zu symbols to %s\n", symbols, (dir / "eye.csv").c_str());
    return 0;
}

int run_validate_cmd(const CommonArgs& args) {
    const auto cfg = load(args);
    std::cout << "hash: " << blindeq::config_hash(cfg) << '\n';
    std::cout << "canonical: " << blindeq::canonical_config_string(cfg) << '\n';
    std::cout << blindeq::make_manifest(cfg).dump(2) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"blind equalization experiment runner"};
    app.require_subcommand(1);

    CommonArgs sweep_args, tracking_args, screen_args, eye_args, validate_args;
    std::size_t eye_point = 0, eye_symbols = 2000;

    add_common(app.add_subcommand("sweep", "run the full sweep and write CSV artifacts"),
               sweep_args, true);
    add_common(app.add_subcommand("tracking", "run the channel-switching experiment"),
               tracking_args, false);
    add_common(app.add_subcommand("screen", "run the sweep, print only the summary table"),
               screen_args, true);
    auto* eye = app.add_subcommand("eye", "export aligned samples for eyediagram plots");
    add_common(eye, eye_args, false);
    eye->add_option("--point", eye_point, "sweep point index");
    eye->add_option("--symbols", eye_symbols, "number of symbols to export")
        ->check(CLI::PositiveNumber);
    add_common(app.add_subcommand("validate", "parse a config and print hash plus manifest"),
               validate_args, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("sweep")) return run_sweep_cmd(sweep_args, false);
        if (app.got_subcommand("screen")) return run_sweep_cmd(screen_args, true);
        if (app.got_subcommand("tracking")) return run_tracking_cmd(tracking_args);
        if (app.got_subcommand("eye")) return run_eye_cmd(eye_args, eye_point, eye_symbols);
        if (app.got_subcommand("validate")) return run_validate_cmd(validate_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
