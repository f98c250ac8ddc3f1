// lslp: generate phantom data, train, evaluate, sweep grid scales and plot
// the alignment analysis.

#include <omp.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lslp/config.hpp"
#include "lslp/error.hpp"
#include "lslp/metrics.hpp"
#include "lslp/plot.hpp"
#include "lslp/synthgen.hpp"
#include "lslp/trainer.hpp"

namespace fs = std::filesystem;
using namespace lslp;

namespace {

std::shared_ptr<spdlog::logger> g_log;

void init_logging() {
    auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    console->set_pattern("%^%l%$: %v");
    g_log = std::make_shared<spdlog::logger>("lslp", console);
    const char* env = std::getenv("LSLP_LOG");
    g_log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

// Timestamps only ever land in <dir>/run.log so every other artifact stays reproducible.
void log_to(const fs::path& dir) {
    fs::create_directories(dir);
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((dir / "run.log").string(), false);
    file->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
    g_log->sinks().push_back(file);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse class id \"" + item + "\"");
        }
    }
    return out;
}

struct Common {
    std::string config;
    std::string out;
    int threads = 1;
    std::optional<std::uint64_t> seed;
};

RunConfig base_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

int cmd_gen_data(const Common& c) {
    RunConfig cfg = base_config(c);
    if (c.seed) cfg.phantom.seed = *c.seed;
    const fs::path dir = c.out.empty() ? cfg.output_dir / "data" : fs::path(c.out);
    generate_dataset(cfg.phantom, dir);
    g_log->info("wrote {} images with {} classes to {}", cfg.phantom.n_images, cfg.phantom.classes.size(), dir.string());
    for (const auto& s : layout_report(load_dataset(dir)))
        g_log->info("class {}: alignment Dice median {:.3f} (min {:.3f}, max {:.3f}) over {} pairs", s.class_id, s.median,
                    s.min, s.max, s.pairs);
    return 0;
}

int cmd_train(const Common& c, std::optional<std::size_t> iterations, const std::string& resume) {
    RunConfig cfg = base_config(c);
    if (iterations) cfg.train.total_iterations = *iterations;
    if (c.seed) cfg.train.seed = *c.seed;
    log_to(cfg.output_dir);
    save_run_config(cfg.output_dir / "resolved_config.json", cfg);
    const Dataset ds = resolve_dataset(cfg);

    TrainOptions opts;
    opts.out_dir = cfg.output_dir;
    if (!resume.empty()) opts.resume = resume;
    opts.on_step = [](const LossRow& r) {
        if ((r.iteration + 1) % 100 == 0) g_log->info("iteration {} lr {:g} loss {:.5f}", r.iteration + 1, r.lr, r.loss);
        else g_log->debug("iteration {} lr {:g} loss {:.5f}", r.iteration + 1, r.lr, r.loss);
    };
    const TrainResult res = train(cfg.train, ds, opts);
    g_log->info("finished at iteration {}; checkpoint in {}", res.checkpoint.optimizer.iteration,
                (cfg.output_dir / "final").string());
    return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset, std::optional<std::size_t> episodes,
             const std::string& classes, bool allow_mismatch, std::optional<std::size_t> overlays,
             const std::string& merge) {
    RunConfig cfg = base_config(c);
    const auto groups = merge.empty() ? std::vector<std::vector<int>>{} : parse_class_groups(merge);
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    // Without a config, data and model geometry come from the run that produced the checkpoint.
    if (c.config.empty()) {
        fs::path ck = fs::absolute(checkpoint).lexically_normal();
        if (!ck.has_filename()) ck = ck.parent_path();
        for (const fs::path& dir : {ck.parent_path(), ck.parent_path().parent_path()}) {
            if (!fs::exists(dir / "resolved_config.json")) continue;
            const RunConfig run = load_run_config(dir / "resolved_config.json");
            cfg.phantom = run.phantom;
            cfg.dataset = run.dataset;
            cfg.working_size = run.working_size;
            cfg.eval = run.eval;
            g_log->info("using data settings from {}", (dir / "resolved_config.json").string());
            break;
        }
        cfg.train = train_config_from_json(ckpt.config);
    }
    if (!dataset.empty()) cfg.dataset = dataset;
    if (episodes) cfg.eval.n_episodes = *episodes;
    if (c.seed) cfg.eval.seed = *c.seed;
    if (!classes.empty()) cfg.eval.classes = parse_ints(classes);
    if (allow_mismatch) cfg.eval.allow_mismatch = true;
    if (overlays) cfg.eval.overlays = *overlays;
    log_to(cfg.output_dir);
    save_run_config(cfg.output_dir / "resolved_config.json", cfg);

    const EvalReport report = evaluate(ckpt, resolve_dataset(cfg), cfg.train, cfg.eval);
    write_report_csv(cfg.output_dir / "report.csv", report);
    write_json(cfg.output_dir / "summary.json", summary_json(report));
    if (!report.overlays.empty()) fs::create_directories(cfg.output_dir / "overlays");
    for (const auto& o : report.overlays)
        write_png(cfg.output_dir / "overlays" / ("episode_" + std::to_string(o.episode_seed) + ".png"),
                  mask_overlay(o.image, o.labels));
    for (const auto& s : report.classes)
        g_log->info("class {}: Dice {:.4f} +/- {:.4f} over {} episodes", s.class_id, s.mean, s.stddev, s.episodes);
    g_log->info("mean Dice {:.4f}", report.mean_dice());
    if (!groups.empty()) {
        const EvalReport merged = merge_classes(report, groups);
        write_report_csv(cfg.output_dir / "merged_report.csv", merged);
        write_json(cfg.output_dir / "merged_summary.json", summary_json(merged));
        g_log->info("merged mean Dice {:.4f}", merged.mean_dice());
    }
    return 0;
}

int cmd_ablate(const Common& c, const std::string& alphas, const std::string& overlap, std::optional<std::size_t> iterations,
               const std::string& checkpoint) {
    RunConfig cfg = base_config(c);
    if (iterations) cfg.train.total_iterations = *iterations;
    if (c.seed) cfg.train.seed = *c.seed;
    std::vector<double> alpha_list;
    {
        std::stringstream ss(alphas);
        for (std::string a; std::getline(ss, a, ',');) {
            try {
                alpha_list.push_back(std::stod(a));
            } catch (const std::exception&) {
                throw ConfigError("cannot parse alpha \"" + a + "\"");
            }
        }
    }
    std::vector<bool> flags;
    if (overlap == "on") flags = {true};
    else if (overlap == "off") flags = {false};
    else if (overlap == "both") flags = {true, false};
    else throw ConfigError("--overlap must be on, off or both");
    std::vector<SweepSetting> settings;
    for (double a : alpha_list)
        for (bool f : flags) settings.push_back({a, f});

    log_to(cfg.output_dir);
    save_run_config(cfg.output_dir / "resolved_config.json", cfg);
    SweepOptions opts;
    if (!checkpoint.empty()) {
        opts.fixed_params = load_checkpoint(checkpoint).params;
    } else {
        opts.out_dir = cfg.output_dir;
        opts.on_step = [](const SweepSetting& s, const LossRow& r) {
            if ((r.iteration + 1) % 500 == 0)
                g_log->info("{}: iteration {} loss {:.5f}", setting_label(s), r.iteration + 1, r.loss);
        };
    }
    const auto rows = sweep_alpha(cfg.train, resolve_dataset(cfg), cfg.eval, settings, opts);
    write_sweep_csv(cfg.output_dir / "sweep.csv", rows);
    write_png(cfg.output_dir / "sweep.png", sweep_bar_chart(rows));
    for (const auto& r : rows) g_log->info("{}: mean Dice {:.4f}", setting_label(r.setting), r.mean_dice);
    return 0;
}

int cmd_misalign(const Common& c, const std::string& report_path) {
    const fs::path out = c.out.empty() ? fs::path(report_path).parent_path() : fs::path(c.out);
    fs::create_directories(out);
    const auto points = misalignment_points(read_report_csv(report_path));
    write_scatter_csv(out / "scatter.csv", points);
    write_png(out / "scatter.png", misalignment_scatter_plot(points));
    g_log->info("wrote {} points to {}", points.size(), (out / "scatter.csv").string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    init_logging();
    CLI::App app{"Few-shot segmentation with location-sensitive local prototypes"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config) sub->add_option("-c,--config", common.config, "RunConfig JSON file")->check(CLI::ExistingFile);
        sub->add_option("-o,--out", common.out, "Output directory (overrides output_dir)");
        sub->add_option("--threads", common.threads, "Worker threads (1 gives the bit-exact baseline)")
            ->check(CLI::PositiveNumber);
    };

    auto* gen = app.add_subcommand("gen-data", "Render the synthetic phantom dataset");
    add_common(gen);
    gen->add_option("--seed", common.seed, "Phantom seed");

    std::optional<std::size_t> iterations;
    std::string resume;
    auto* tr = app.add_subcommand("train", "Episodic training");
    add_common(tr);
    tr->add_option("--seed", common.seed, "Training seed");
    tr->add_option("--iterations", iterations, "Total iterations");
    tr->add_option("--resume", resume, "Checkpoint directory to continue from")->check(CLI::ExistingDirectory);

    std::string checkpoint, dataset, classes, merge;
    std::optional<std::size_t> episodes, overlays;
    bool allow_mismatch = false;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on test episodes");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--dataset", dataset, "Dataset directory (default: phantoms from the config)")
        ->check(CLI::ExistingDirectory);
    ev->add_option("--episodes", episodes, "Number of test episodes");
    ev->add_option("--merge", merge, "Also report paired classes as one, e.g. 0+1,4+5");
    ev->add_option("--seed", common.seed, "Episode sampling seed");
    ev->add_option("--classes", classes, "Comma-separated test class ids to evaluate");
    ev->add_flag("--allow-mismatch", allow_mismatch, "Evaluate even if the checkpoint fingerprint differs");
    ev->add_option("--overlays", overlays, "Write mask-overlay PNGs for the first N episodes");

    std::string alphas = "1,0.25,0.125", overlap = "both";
    auto* ab = app.add_subcommand("ablate", "Grid-scale and overlap sweep");
    add_common(ab);
    ab->add_option("--alphas", alphas, "Comma-separated grid scales")->capture_default_str();
    ab->add_option("--overlap", overlap, "on, off or both")->capture_default_str();
    ab->add_option("--iterations", iterations, "Training iterations per setting");
    ab->add_option("--seed", common.seed, "Training seed shared by every setting");
    ab->add_option("--checkpoint", checkpoint, "Evaluate this checkpoint under every setting instead of training")
        ->check(CLI::ExistingDirectory);

    std::string report;
    auto* mis = app.add_subcommand("misalign", "Alignment vs segmentation Dice scatter from a report");
    add_common(mis, false);
    mis->add_option("--report", report, "report.csv from eval")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    omp_set_num_threads(common.threads);
    try {
        if (*gen) return cmd_gen_data(common);
        if (*tr) return cmd_train(common, iterations, resume);
        if (*ev) return cmd_eval(common, checkpoint, dataset, episodes, classes, allow_mismatch, overlays, merge);
        if (*ab) return cmd_ablate(common, alphas, overlap, iterations, checkpoint);
        if (*mis) return cmd_misalign(common, report);
    } catch (const ConfigError& e) {
        g_log->error("{}", e.what());
        return 2;
    } catch (const NumericError& e) {
        g_log->error("{}", e.what());
        return 4;
    } catch (const Error& e) {
        g_log->error("{}", e.what());
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        g_log->error("{}", e.what());
        return 3;
    }
    return 1;
}
