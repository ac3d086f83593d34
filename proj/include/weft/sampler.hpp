#pragma once

// Block-wise low-confidence remasking decoder and exact-match evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "weft/denoiser.hpp"
#include "weft/tasks.hpp"
#include "weft/tensor.hpp"

namespace weft {

struct DecodeConfig {
    std::size_t gen_length = 16;
    std::size_t block_length = 8;
    // 0 selects gen_length / 2.
    std::size_t n_steps = 0;
    // Decoding is greedy; the seed is carried for the report and future
    // stochastic remasking rules.
    std::uint64_t seed = 0;

    std::size_t resolved_steps() const { return n_steps == 0 ? gen_length / 2 : n_steps; }
    std::size_t n_blocks() const { return gen_length / block_length; }
    std::size_t steps_per_block() const { return resolved_steps() / n_blocks(); }
    std::size_t tokens_per_step() const { return block_length / steps_per_block(); }
    // Throws std::invalid_argument unless blocks, steps and tokens divide evenly.
    void validate() const;
    nlohmann::json to_json() const;
};

// Maps a full token sequence (prompt + answer with masks) to T x V logits.
using LogitsFn = std::function<Matrix(std::span<const int>)>;

LogitsFn denoiser_logits(const Denoiser& model);

struct DecodeTrace {
    // Positions (relative to the answer) finalized at each step.
    std::vector<std::vector<std::size_t>> finalized;
    std::size_t forward_calls = 0;
};

std::vector<int> decode(const LogitsFn& model, std::span<const int> prompt, const DecodeConfig& cfg, int mask_id,
                        DecodeTrace* trace = nullptr);
std::vector<int> decode(const Denoiser& model, std::span<const int> prompt, const DecodeConfig& cfg,
                        DecodeTrace* trace = nullptr);

struct EvalReport {
    std::string task;
    double accuracy = 0.0;
    std::size_t n = 0;
    std::size_t correct = 0;
    DecodeConfig decode{};
    std::string checkpoint_id;

    nlohmann::json to_json() const;
};

EvalReport evaluate(const LogitsFn& model, std::span<const TaskInstance> tasks, const DecodeConfig& cfg,
                    int mask_id, std::string checkpoint_id = {});
EvalReport evaluate(const Denoiser& model, std::span<const TaskInstance> tasks, const DecodeConfig& cfg,
                    std::string checkpoint_id = {});

}  // namespace weft
