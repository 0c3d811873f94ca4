// hybridstitch command-line driver.
//
// Exit codes:
//   0  success
//   1  usage error (bad flags or subcommand)
//   2  invalid configuration
//   3  run failure (non-finite latent, model mismatch, other runtime error)
//   4  cost-model validation failed or was rejected
//   5  I/O error (cannot create output directory or write a file)

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hybridstitch/hybridstitch.hpp"

namespace fs = std::filesystem;
using namespace hybridstitch;

namespace {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfig = 2,
    kRunFailure = 3,
    kValidationFailed = 4,
    kIo = 5,
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonFlags {
    std::string config_path;
    std::optional<std::string> variant;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> thresholds;
    bool simulated = false;
    std::size_t workers = 1;
};

std::vector<double> parse_number_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "inf" || item == "+inf") {
            out.push_back(std::numeric_limits<double>::infinity());
        } else if (item == "-inf") {
            out.push_back(-std::numeric_limits<double>::infinity());
        } else {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(item, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != item.size()) throw ConfigError("cannot parse number '" + item + "' in list");
            out.push_back(v);
        }
    }
    if (out.empty()) throw ConfigError("empty number list");
    return out;
}

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg = load_config(flags.config_path);
    if (flags.variant) {
        try {
            cfg.variant = parse_variant(*flags.variant);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (flags.seed) cfg.noise_seeds = {*flags.seed};
    if (flags.out_dir) cfg.output_dir = *flags.out_dir;
    if (flags.thresholds) cfg.thresholds = parse_number_list(*flags.thresholds);
    if (flags.simulated) cfg.simulated_latency = true;
    cfg.validate();
    return cfg;
}

fs::path prepare_output_dir(const RunConfig& cfg) {
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw IoError("write failed for " + path.string());
}

GenerationOptions generation_options(const RunConfig& cfg) {
    GenerationOptions opt;
    if (cfg.simulated_latency) opt.simulated = SimulatedLatency{cfg.sim_latency_large, cfg.sim_latency_small};
    return opt;
}

int cmd_generate(const CommonFlags& flags) {
    const RunConfig cfg = resolve_config(flags);
    const fs::path dir = prepare_output_dir(cfg);
    const Denoiser large(cfg.large);
    const Denoiser small(cfg.small);
    const ThresholdSchedule schedule = cfg.schedule();
    const std::uint64_t seed = cfg.noise_seeds.front();
    const GenerationOptions opt = generation_options(cfg);

    const GenerationResult run = run_generation(large, small, schedule, seed, cfg.variant, opt);
    const GenerationResult reference = cfg.variant == Variant::PureLarge
                                           ? run
                                           : run_generation(large, small, schedule, seed, Variant::PureLarge, opt);

    write_sgrd((dir / "latent.sgrd").string(), run.final_latent.data);
    std::ostringstream csv;
    write_trace_csv(csv, run.traces);
    write_text(dir / "trace.csv", csv.str());

    const auto entries = stage_entry_steps(run.traces, 1);
    const QualityProxy q = quality_proxy(run.final_latent, reference.final_latent);
    const double total_ms = total_wall_ms(run.traces);
    const double ref_ms = total_wall_ms(reference.traces);
    std::ostringstream summary;
    summary << "variant=" << to_string(cfg.variant) << '\n'
            << "seed=" << seed << '\n'
            << "steps=" << run.traces.size() << '\n'
            << "final_stage=" << run.traces.back().stage << '\n'
            << "first_switch=" << (entries[0] ? std::to_string(*entries[0]) : std::string("none")) << '\n'
            << "degenerate_tokens=" << run.degenerate_tokens << '\n'
            << "quality_rel_l1_vs_large=" << format_g6(q.rel_l1_vs_large) << '\n'
            << "quality_max_abs_dev=" << format_g6(q.max_abs_dev) << '\n'
            << "wall_ms_total=" << format_g6(total_ms) << '\n'
            << "wall_ms_pure_large=" << format_g6(ref_ms) << '\n'
            << "speedup_vs_pure_large=" << format_g6(total_ms > 0.0 ? ref_ms / total_ms : 0.0) << '\n';
    write_text(dir / "summary.txt", summary.str());
    std::cout << summary.str();
    return kOk;
}

int cmd_study(const CommonFlags& flags, const std::string& kind) {
    const RunConfig cfg = resolve_config(flags);
    const fs::path dir = prepare_output_dir(cfg);
    const Denoiser large(cfg.large);
    const Denoiser small(cfg.small);
    const bool all = kind == "all";

    if (all || kind == "divergence") {
        DivergenceOptions opt;
        opt.workers = flags.workers;
        const auto hists =
            model_divergence_study(large, small, cfg.noise_seeds, cfg.effective_probe_steps(), cfg.sigmas(), opt);
        std::ostringstream csv, dat;
        write_divergence_csv(csv, hists);
        write_divergence_dat(dat, hists);
        write_text(dir / "divergence.csv", csv.str());
        write_text(dir / "divergence.dat", dat.str());
        for (const auto& h : hists) {
            std::cout << "divergence step=" << h.step << " fraction_near_zero=" << format_g6(h.fraction_near_zero)
                      << '\n';
        }
    }
    if (all || kind == "switch") {
        const auto records = switch_step_study(large, small, cfg.schedule(),
                                               {Variant::Hybrid, Variant::StaticMask, Variant::NaiveSwitch},
                                               cfg.noise_seeds, flags.workers);
        std::ostringstream csv;
        write_switch_csv(csv, records);
        write_text(dir / "switch_steps.csv", csv.str());
        std::size_t failures = 0;
        for (const auto& r : records) failures += r.error.empty() ? 0 : 1;
        std::cout << "switch records=" << records.size() << " failures=" << failures << '\n';
    }
    if (all || kind == "latency") {
        LatencyOptions opt;
        opt.runs = cfg.latency_runs;
        opt.seed = cfg.noise_seeds.front();
        const auto result = mask_latency_study(large, cfg.latency_ratios, opt);
        std::ostringstream csv;
        write_latency_csv(csv, result);
        write_text(dir / "mask_latency.csv", csv.str());
        std::cout << csv.str();
    }
    return kOk;
}

int cmd_validate(const CommonFlags& flags, std::optional<double> tolerance) {
    RunConfig cfg = resolve_config(flags);
    if (tolerance) cfg.tolerance = *tolerance;
    const fs::path dir = prepare_output_dir(cfg);
    const Denoiser large(cfg.large);
    const Denoiser small(cfg.small);
    const ThresholdSchedule schedule = cfg.schedule();
    const std::uint64_t seed = cfg.noise_seeds.front();
    const GenerationOptions opt = generation_options(cfg);

    // In measured mode L_l and L_s are calibrated by timing one full forward of
    // each model on the same latent right after every step, so host speed
    // drift affects the calibration and the run alike.
    GenerationOptions run_opt = opt;
    double large_ms = 0.0, small_ms = 0.0;
    if (!cfg.simulated_latency) {
        run_opt.after_step = [&](std::size_t t, const LatentGrid& latent) {
            detail::StopWatch sw_large;
            (void)large.forward_full(latent, t);
            large_ms += sw_large.elapsed_ms();
            detail::StopWatch sw_small;
            (void)small.forward_full(latent, t);
            small_ms += sw_small.elapsed_ms();
        };
    }
    const GenerationResult run = run_generation(large, small, schedule, seed, cfg.variant, run_opt);
    double latency_large = cfg.sim_latency_large;
    double latency_small = cfg.sim_latency_small;
    if (!cfg.simulated_latency) {
        const auto steps = static_cast<double>(run.traces.size());
        latency_large = 1e-3 * large_ms / steps;
        latency_small = 1e-3 * small_ms / steps;
    }
    ValidationReport report;
    try {
        report = validate_trace(run.traces, params_from_trace(run.traces, run.mask_ratios, latency_large, latency_small),
                                cfg.tolerance);
    } catch (const CostModelError& e) {
        report.status = ValidationReport::Status::Rejected;
        report.reason = e.what();
        report.tolerance = cfg.tolerance;
    }
    std::ostringstream text;
    text << "variant=" << to_string(cfg.variant) << '\n'
         << "mode=" << (cfg.simulated_latency ? "simulated" : "measured") << '\n'
         << "latency_large_s=" << format_g6(latency_large) << '\n'
         << "latency_small_s=" << format_g6(latency_small) << '\n'
         << to_key_value_text(report);
    std::ostringstream csv;
    write_trace_csv(csv, run.traces);
    write_text(dir / "validate_trace.csv", csv.str());
    write_text(dir / "validation.txt", text.str());
    std::cout << text.str();
    return report.passed() ? kOk : kValidationFailed;
}

int cmd_dump_config(const CommonFlags& flags) {
    std::cout << dump_config(resolve_config(flags));
    return kOk;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "Run configuration (JSON)")->required();
    cmd->add_option("--variant", flags.variant,
                    "hybrid, static-mask, full-large, pure-large, pure-small or naive-switch");
    cmd->add_option("--seed", flags.seed, "Noise seed (replaces noise_seeds)");
    cmd->add_option("--out", flags.out_dir, "Output directory (replaces output_dir)");
    cmd->add_option("--thresholds", flags.thresholds, "Comma-separated threshold ladder, e.g. 0.02,0.015");
    cmd->add_flag("--simulated-latency", flags.simulated, "Record L_l*M + L_s per step instead of wall time");
    cmd->add_option("--workers", flags.workers, "Worker threads for studies")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region-aware large/small diffusion model stitching on toy denoisers"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string study_kind = "all";
    std::optional<double> tolerance;

    auto* generate = app.add_subcommand("generate", "Run one generation; write latent, trace and summary");
    add_common(generate, flags);
    auto* study = app.add_subcommand("study", "Run divergence, switch-step and mask-latency studies");
    add_common(study, flags);
    study->add_option("--kind", study_kind, "all, divergence, switch or latency")
        ->check(CLI::IsMember({"all", "divergence", "switch", "latency"}));
    auto* validate = app.add_subcommand("validate", "Check a run's wall time against the latency model");
    add_common(validate, flags);
    validate->add_option("--tolerance", tolerance, "Relative tolerance (default from config)");
    auto* dump = app.add_subcommand("dump-config", "Print the validated configuration in canonical form");
    add_common(dump, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*generate) return cmd_generate(flags);
        if (*study) return cmd_study(flags, study_kind);
        if (*validate) return cmd_validate(flags, tolerance);
        if (*dump) return cmd_dump_config(flags);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const FormatError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << '\n';
        return kRunFailure;
    }
    return kUsage;
}
