#pragma once

// Training loop for every arm. A WeFT step runs two forward passes per
// example: pass 1 sees the prompt with the whole answer masked and yields
// constant per-token rates; pass 2 sees the partially masked sequence and
// carries the gradient.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "weft/denoiser.hpp"
#include "weft/losses.hpp"
#include "weft/rng.hpp"
#include "weft/tasks.hpp"

namespace weft {

struct TrainConfig {
    LossKind loss = LossKind::weft;
    WeightScheme scheme{};
    double dream_p = 0.3;
    Normalization normalization = Normalization::masked_count;

    double lr = 3e-4;
    bool linear_decay = true;
    double weight_decay = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;

    int epochs = 1;
    // Overrides the epoch-derived step count when nonzero.
    std::size_t max_steps = 0;
    int batch_size = 8;
    int grad_accum = 4;

    std::uint64_t seed = 42;
    double t_lo = 1e-3;
    double t_min = 1e-3;
    double beta_floor = kBetaFloor;

    void validate() const;
    LossSpec loss_spec() const;
    AdamWConfig adamw() const;
    MaskOptions mask_options() const;
    // True when the arm needs the rate-estimation forward pass.
    bool needs_first_pass() const;
    std::size_t examples_per_step() const { return static_cast<std::size_t>(batch_size * grad_accum); }
};

struct BetaStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    double floored_fraction = 0.0;
};

struct TrainRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    // Global gradient norm before clipping.
    double grad_norm = 0.0;
    double lr = 0.0;
    std::uint64_t forward_passes = 0;
    std::size_t examples = 0;
    double mean_masked = 0.0;
    BetaStats beta{};
    bool skipped = false;
    // Not part of the deterministic metrics stream.
    double wall_ms = 0.0;

    double forward_per_example() const {
        return examples == 0 ? 0.0 : static_cast<double>(forward_passes) / static_cast<double>(examples);
    }
    // Deterministic fields only; timing goes to a separate stream.
    nlohmann::json metrics_json() const;
};

// Loss of one example and its gradient, added into `grad` scaled by `scale`.
struct ExampleOutcome {
    LossBreakdown breakdown;
    RateSpec rates;
    MaskPlan plan;
};

ExampleOutcome example_gradient(const Denoiser& model, const TaskInstance& example, const TrainConfig& cfg,
                                RandomStream rng, double scale, std::span<double> grad);

// One optimizer step over batch_size * grad_accum examples: accumulate the
// mean-loss gradient, clip, and apply AdamW at learning rate `lr`.
TrainRecord train_step_weft(Denoiser& model, OptimizerState& opt, std::span<const TaskInstance> batch,
                            const TrainConfig& cfg, const RandomStream& rng, double lr);
TrainRecord train_step_sft(Denoiser& model, OptimizerState& opt, std::span<const TaskInstance> batch,
                           const TrainConfig& cfg, const RandomStream& rng, double lr);
// Dispatches on cfg.loss (sw and dream share the SFT masking path).
TrainRecord train_step(Denoiser& model, OptimizerState& opt, std::span<const TaskInstance> batch,
                       const TrainConfig& cfg, const RandomStream& rng, double lr);

class Trainer {
public:
    Trainer(Denoiser& model, TrainConfig cfg, std::vector<TaskInstance> train_set);

    TrainRecord step();
    bool done() const { return steps_done_ >= total_steps_; }
    std::size_t total_steps() const { return total_steps_; }
    std::uint64_t steps_done() const { return steps_done_; }
    double lr_at(std::uint64_t step) const;

    OptimizerState& optimizer() { return opt_; }
    const TrainConfig& config() const { return cfg_; }
    // Continue from a checkpointed optimizer state at `steps_done`.
    void restore(OptimizerState state, std::uint64_t steps_done);

    std::vector<TaskInstance> batch_for(std::uint64_t step);

private:
    const std::vector<std::size_t>& epoch_order(std::uint64_t epoch);

    Denoiser& model_;
    TrainConfig cfg_;
    std::vector<TaskInstance> data_;
    OptimizerState opt_;
    RandomStream root_;
    std::size_t total_steps_ = 0;
    std::uint64_t steps_done_ = 0;
    std::uint64_t cached_epoch_ = ~std::uint64_t{0};
    std::vector<std::size_t> order_;
};

struct GradNormSummary {
    double max = 0.0;
    double median = 0.0;
    double mean = 0.0;
    std::vector<double> norms;
};

// Trains a model per scheme from identical init, data and seeds and
// summarizes the pre-clip gradient norms. `init_params` warm-starts every
// arm from the same weights; empty means a fresh model.
std::map<std::string, GradNormSummary> gradnorm_study(const DenoiserConfig& model_cfg,
                                                      std::span<const TaskInstance> data, TrainConfig cfg,
                                                      std::span<const SchemeKind> schemes, std::size_t steps,
                                                      std::span<const double> init_params = {});

struct BenchReport {
    std::size_t steps = 0;
    std::uint64_t sft_forward = 0;
    std::uint64_t weft_forward = 0;
    double sft_seconds = 0.0;
    double weft_seconds = 0.0;
    bool forward_ratio_exact = true;

    double wall_ratio() const { return sft_seconds > 0.0 ? weft_seconds / sft_seconds : 0.0; }
    nlohmann::json to_json() const;
};

// Times `steps` SFT steps and `steps` WeFT steps from the same init and data.
BenchReport run_bench(const DenoiserConfig& model_cfg, std::span<const TaskInstance> data, TrainConfig cfg,
                      std::size_t steps);

}  // namespace weft
