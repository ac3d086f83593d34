#pragma once

// Resolved configuration for one CLI invocation. Precedence, lowest first:
// built-in defaults, the --config file, WEFT_OUTPUT_DIR (output.dir only),
// command-line flags.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "weft/denoiser.hpp"
#include "weft/sampler.hpp"
#include "weft/tasks.hpp"
#include "weft/trainer.hpp"

namespace weft::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // Root of every random stream: data, masking, init and decode.
    std::uint64_t seed = 42;
    DenoiserConfig model{};
    TrainConfig train{};
    TaskSpec task{};
    std::size_t n_train = 2000;
    std::size_t n_eval = 200;
    // Zero lengths pick the task defaults in resolve().
    DecodeConfig decode{0, 0, 0, 0};
    std::size_t log_every = 50;
    std::string output_dir = "runs/default";

    // Copies the root seed into the model and trainer, fills task-dependent
    // decode defaults and validates everything. Throws ConfigError.
    void resolve();
    std::string to_yaml() const;
};

// Throws ConfigError on unreadable files, malformed YAML or unknown keys.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig load_run_config_text(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace weft::cli
