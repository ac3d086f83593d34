// weft: verification, training, evaluation and overhead benchmarking.
//
// Exit codes: 0 success, 1 run failure (failed property, I/O, runtime
// error), 2 configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <zlib.h>

#include "run_config.hpp"
#include "weft/sampler.hpp"
#include "weft/trainer.hpp"
#include "weft/verify.hpp"

namespace fs = std::filesystem;
using namespace weft;
using weft::cli::ConfigError;
using weft::cli::RunConfig;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

struct CommonFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

struct TrainFlags {
    std::string loss;
    std::string scheme;
    std::string task;
    std::optional<std::size_t> steps;
    std::optional<double> dream_p;
    std::string resume;
    std::optional<std::size_t> stop_after;
};

struct EvalFlags {
    std::string checkpoint;
    std::string task;
    std::optional<std::size_t> gen_length;
    std::optional<std::size_t> block_length;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> n;
};

std::string hex32(std::uint32_t x) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", x);
    return buf;
}

std::string file_crc(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex32(static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()))));
}

RunConfig base_config(const CommonFlags& common, const std::optional<fs::path>& fallback = std::nullopt) {
    RunConfig cfg;
    if (!common.config.empty()) {
        cfg = cli::load_run_config(common.config);
    } else if (fallback && fs::exists(*fallback)) {
        cfg = cli::load_run_config(*fallback);
    }
    if (const char* env = std::getenv("WEFT_OUTPUT_DIR"); env && *env) {
        cfg.output_dir = env;
    }
    if (!common.out.empty()) {
        cfg.output_dir = common.out;
    }
    if (common.seed) {
        cfg.seed = *common.seed;
    }
    return cfg;
}

template <typename T, typename Parse>
void override_enum(const std::string& flag, T& out, Parse parse) {
    if (flag.empty()) {
        return;
    }
    try {
        out = parse(flag);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    cli::write_text(path, j.dump(2) + "\n");
}

int cmd_verify(const CommonFlags& common, const std::string& profile, const std::string& fault) {
    RunConfig cfg = base_config(common);
    cfg.resolve();
    VerifyOptions opts;
    try {
        opts.profile = parse_profile(profile);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!fault.empty() && fault != "beta_sign_flip") {
        throw ConfigError("unknown fault '" + fault + "' (expected beta_sign_flip)");
    }
    opts.inject_beta_sign_flip = fault == "beta_sign_flip";
    opts.seed = cfg.seed;

    const fs::path out = cfg.output_dir;
    cli::write_text(out / "config.yaml", cfg.to_yaml());
    const VerifyReport rep = run_verification(opts);
    for (const auto& r : rep.results) {
        std::printf("%-4s %-34s %-16s observed=%-12.4g tol=%-8.3g %.2fs\n", r.passed ? "ok" : "FAIL", r.name.c_str(),
                    r.module.c_str(), r.observed, r.tolerance, r.seconds);
    }
    write_json(out / "verify_report.json", rep.to_json());
    std::printf("%s: %s\n", rep.passed() ? "all properties passed" : "verification FAILED",
                (out / "verify_report.json").string().c_str());
    return rep.passed() ? kOk : kFailure;
}

int cmd_train(const CommonFlags& common, const TrainFlags& flags) {
    RunConfig cfg = base_config(common);
    override_enum(flags.loss, cfg.train.loss, parse_loss_kind);
    override_enum(flags.scheme, cfg.train.scheme.kind, parse_scheme);
    override_enum(flags.task, cfg.task.kind, parse_task);
    if (flags.steps) {
        cfg.train.max_steps = *flags.steps;
    }
    if (flags.dream_p) {
        cfg.train.dream_p = *flags.dream_p;
    }
    if (!flags.task.empty()) {
        cfg.decode.gen_length = 0;
        cfg.decode.block_length = 0;
        cfg.decode.n_steps = 0;
    }
    cfg.resolve();

    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    cli::write_text(out / "config.yaml", cfg.to_yaml());

    const auto train_set = generate_dataset(cfg.task, cfg.seed, Split::train, cfg.n_train);
    Denoiser model(cfg.model);
    Trainer trainer(model, cfg.train, train_set);
    std::ios::openmode mode = std::ios::out | std::ios::trunc;

    if (!flags.resume.empty()) {
        Checkpoint ck = checkpoint_load(flags.resume);
        if (!(ck.config == cfg.model)) {
            throw ConfigError("resume: checkpoint model config differs from the run config");
        }
        const auto meta = nlohmann::json::parse(ck.metadata);
        std::copy(ck.params.begin(), ck.params.end(), model.parameters().begin());
        trainer.restore(std::move(ck.optimizer), meta.at("step").get<std::uint64_t>());
        mode = std::ios::out | std::ios::app;
    }

    std::ofstream metrics(out / "metrics.jsonl", mode);
    std::ofstream timing(out / "timing.jsonl", mode);
    if (!metrics || !timing) {
        throw std::runtime_error("cannot open metrics files in " + out.string());
    }
    std::printf("train: loss=%s scheme=%s task=%s steps=%zu params=%zu\n", to_string(cfg.train.loss).c_str(),
                to_string(cfg.train.scheme.kind).c_str(), to_string(cfg.task.kind).c_str(), trainer.total_steps(),
                model.parameter_count());
    auto stopped = [&] { return flags.stop_after && trainer.steps_done() >= *flags.stop_after; };
    while (!trainer.done() && !stopped()) {
        const TrainRecord rec = trainer.step();
        metrics << rec.metrics_json().dump() << "\n";
        timing << nlohmann::json{{"step", rec.step}, {"wall_ms", rec.wall_ms}}.dump() << "\n";
        if (rec.skipped) {
            std::fprintf(stderr, "step %llu skipped: non-finite loss or gradient\n",
                         static_cast<unsigned long long>(rec.step));
        }
        if (cfg.log_every > 0 && (rec.step % cfg.log_every == 0 || trainer.done())) {
            std::printf("step %6llu  loss %.4f  grad_norm %.3f  lr %.2e  beta_mean %.3f\n",
                        static_cast<unsigned long long>(rec.step), rec.loss, rec.grad_norm, rec.lr, rec.beta.mean);
        }
    }
    metrics.close();
    timing.close();

    const fs::path ckpt = out / "checkpoint.bin";
    const nlohmann::json meta{{"step", trainer.steps_done()}, {"seed", cfg.seed}};
    checkpoint_save(ckpt, model, trainer.optimizer(), meta.dump());

    if (cfg.n_eval > 0) {
        const auto eval_set = generate_dataset(cfg.task, cfg.seed, Split::eval, cfg.n_eval);
        const EvalReport rep = evaluate(model, eval_set, cfg.decode, file_crc(ckpt));
        write_json(out / "eval.json", rep.to_json());
        std::printf("eval: %s accuracy %.4f (%zu/%zu)\n", rep.task.c_str(), rep.accuracy, rep.correct, rep.n);
    }
    std::printf("wrote %s\n", out.string().c_str());
    return kOk;
}

int cmd_eval(const CommonFlags& common, const EvalFlags& flags) {
    const fs::path ckpt = flags.checkpoint;
    if (!fs::exists(ckpt)) {
        std::fprintf(stderr, "eval: checkpoint not found: %s\n", ckpt.string().c_str());
        return kFailure;
    }
    RunConfig cfg = base_config(common, ckpt.parent_path() / "config.yaml");
    if (common.out.empty() && !std::getenv("WEFT_OUTPUT_DIR")) {
        cfg.output_dir = ckpt.parent_path().string();
    }
    if (!flags.task.empty()) {
        override_enum(flags.task, cfg.task.kind, parse_task);
        cfg.decode = DecodeConfig{0, 0, 0, 0};
    }
    if (flags.gen_length) {
        cfg.decode.gen_length = *flags.gen_length;
    }
    if (flags.block_length) {
        cfg.decode.block_length = *flags.block_length;
    }
    if (flags.steps) {
        cfg.decode.n_steps = *flags.steps;
    }
    if (flags.n) {
        cfg.n_eval = *flags.n;
    }
    Checkpoint ck = checkpoint_load(ckpt);
    cfg.model = ck.config;
    cfg.seed = common.seed ? *common.seed : ck.config.seed;
    cfg.resolve();
    if (cfg.n_eval == 0) {
        throw ConfigError("eval: task.n_eval must be positive");
    }
    const fs::path out = cfg.output_dir;
    cli::write_text(out / "eval_config.yaml", cfg.to_yaml());

    const Denoiser model(ck.config, std::move(ck.params));
    const auto eval_set = generate_dataset(cfg.task, cfg.seed, Split::eval, cfg.n_eval);
    const EvalReport rep = evaluate(model, eval_set, cfg.decode, file_crc(ckpt));
    write_json(out / "eval.json", rep.to_json());
    std::printf("%s\n", rep.to_json().dump(2).c_str());
    return kOk;
}

int cmd_bench(const CommonFlags& common, std::size_t steps) {
    RunConfig cfg = base_config(common);
    cfg.resolve();
    const fs::path out = cfg.output_dir;
    cli::write_text(out / "config.yaml", cfg.to_yaml());
    std::vector<TaskInstance> data;
    if (steps > 0) {
        data = generate_dataset(cfg.task, cfg.seed, Split::train, cfg.n_train);
    }
    const BenchReport rep = run_bench(cfg.model, data, cfg.train, steps);
    write_json(out / "bench.json", rep.to_json());
    std::printf("%s\n", rep.to_json().dump(2).c_str());
    return rep.forward_ratio_exact ? kOk : kFailure;
}

int cmd_gen_data(const CommonFlags& common, const std::string& task, const std::string& split, std::size_t n,
                 const std::string& file) {
    RunConfig cfg = base_config(common);
    override_enum(task, cfg.task.kind, parse_task);
    cfg.resolve();
    Split s;
    if (split == "train") {
        s = Split::train;
    } else if (split == "eval") {
        s = Split::eval;
    } else {
        throw ConfigError("gen-data: split must be train or eval");
    }
    const auto data = generate_dataset(cfg.task, cfg.seed, s, n);
    const fs::path path = file.empty() ? fs::path(cfg.output_dir) / (to_string(cfg.task.kind) + "_" + split + ".jsonl")
                                       : fs::path(file);
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    save_dataset(path, data);
    std::printf("wrote %zu instances to %s\n", data.size(), path.string().c_str());
    return kOk;
}

void add_common(CLI::App* sub, CommonFlags& common) {
    sub->add_option("--config", common.config, "YAML run configuration");
    sub->add_option("--out", common.out, "Output directory (overrides output.dir and WEFT_OUTPUT_DIR)");
    sub->add_option("--seed", common.seed, "Root seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weft: entropy-weighted fine-tuning for masked diffusion models"};
    app.require_subcommand(1);

    CommonFlags common;
    std::string profile = "fast";
    std::string fault;
    auto* verify = app.add_subcommand("verify", "Run the property suite and write a JSON report");
    add_common(verify, common);
    verify->add_option("--profile", profile, "fast or full")->check(CLI::IsMember({"fast", "full"}));
    verify->add_option("--inject-fault", fault, "Fault injection hook (beta_sign_flip)");

    TrainFlags tflags;
    auto* train = app.add_subcommand("train", "Train one arm and write metrics, checkpoint and config");
    add_common(train, common);
    train->add_option("--loss", tflags.loss, "sft | weft | sw | dream");
    train->add_option("--scheme", tflags.scheme, "sqrt_entropy | raw_entropy | nll | uniform");
    train->add_option("--task", tflags.task, "modadd | sudoku4 | countdown");
    train->add_option("--steps", tflags.steps, "Optimizer steps (overrides epochs)");
    train->add_option("--dream-p", tflags.dream_p, "Geometric sharpness for --loss dream");
    train->add_option("--resume", tflags.resume, "Continue from a checkpoint");
    train->add_option("--stop-after", tflags.stop_after, "Checkpoint and exit after this many steps (schedule unchanged)");

    EvalFlags eflags;
    auto* eval = app.add_subcommand("eval", "Decode an evaluation split and report exact-match accuracy");
    add_common(eval, common);
    eval->add_option("--checkpoint", eflags.checkpoint, "Checkpoint file")->required();
    eval->add_option("--task", eflags.task, "Task (default: from the run's config.yaml)");
    eval->add_option("--gen-length", eflags.gen_length, "Generated answer length");
    eval->add_option("--block-length", eflags.block_length, "Decode block length");
    eval->add_option("--steps", eflags.steps, "Total decode steps (default gen_length/2)");
    eval->add_option("--n", eflags.n, "Number of evaluation instances");

    std::size_t bench_steps = 10;
    auto* bench = app.add_subcommand("bench", "Time SFT and WeFT steps and count forward passes");
    add_common(bench, common);
    bench->add_option("--steps", bench_steps, "Steps per arm");

    std::string gd_task;
    std::string gd_split = "train";
    std::size_t gd_n = 100;
    std::string gd_file;
    auto* gen = app.add_subcommand("gen-data", "Write a dataset split as JSON lines");
    add_common(gen, common);
    gen->add_option("--task", gd_task, "modadd | sudoku4 | countdown");
    gen->add_option("--split", gd_split, "train or eval");
    gen->add_option("--n", gd_n, "Number of instances");
    gen->add_option("--file", gd_file, "Output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*verify) {
            return cmd_verify(common, profile, fault);
        }
        if (*train) {
            return cmd_train(common, tflags);
        }
        if (*eval) {
            return cmd_eval(common, eflags);
        }
        if (*bench) {
            return cmd_bench(common, bench_steps);
        }
        if (*gen) {
            return cmd_gen_data(common, gd_task, gd_split, gd_n, gd_file);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kConfigError;
}
