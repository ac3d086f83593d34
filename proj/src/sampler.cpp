#include "weft/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace weft {

void DecodeConfig::validate() const {
    if (gen_length == 0 || block_length == 0) {
        throw std::invalid_argument("DecodeConfig: gen_length and block_length must be positive");
    }
    if (gen_length % block_length != 0) {
        throw std::invalid_argument("DecodeConfig: block_length must divide gen_length");
    }
    const std::size_t steps = resolved_steps();
    if (steps == 0 || steps > gen_length) {
        throw std::invalid_argument("DecodeConfig: steps must lie in [1, gen_length]");
    }
    if (steps % n_blocks() != 0) {
        throw std::invalid_argument("DecodeConfig: steps must split evenly across blocks");
    }
    if (block_length % steps_per_block() != 0) {
        throw std::invalid_argument("DecodeConfig: steps per block must divide block_length");
    }
}

nlohmann::json DecodeConfig::to_json() const {
    return {{"gen_length", gen_length},
            {"block_length", block_length},
            {"steps", resolved_steps()},
            {"remasking", "low_confidence"},
            {"seed", seed}};
}

LogitsFn denoiser_logits(const Denoiser& model) {
    return [&model](std::span<const int> tokens) { return model.forward(tokens); };
}

std::vector<int> decode(const LogitsFn& model, std::span<const int> prompt, const DecodeConfig& cfg, int mask_id,
                        DecodeTrace* trace) {
    cfg.validate();
    const std::size_t p = prompt.size();
    std::vector<int> seq(prompt.begin(), prompt.end());
    seq.resize(p + cfg.gen_length, mask_id);
    std::vector<bool> done(cfg.gen_length, false);

    const std::size_t k = cfg.tokens_per_step();
    const std::size_t spb = cfg.steps_per_block();

    struct Candidate {
        double confidence;
        std::size_t pos;
        int token;
    };
    std::vector<Candidate> cands;

    for (std::size_t b = 0; b < cfg.n_blocks(); ++b) {
        const std::size_t lo = b * cfg.block_length;
        const std::size_t hi = lo + cfg.block_length;
        for (std::size_t s = 0; s < spb; ++s) {
            const Matrix logits = model(seq);
            if (trace) {
                ++trace->forward_calls;
            }
            if (logits.rows() != seq.size()) {
                throw std::runtime_error("decode: model returned the wrong number of rows");
            }
            cands.clear();
            for (std::size_t i = lo; i < hi; ++i) {
                if (done[i]) {
                    continue;
                }
                const auto row = logits.row(p + i);
                int best = -1;
                for (std::size_t v = 0; v < row.size(); ++v) {
                    if (static_cast<int>(v) == mask_id) {
                        continue;
                    }
                    if (best < 0 || row[v] > row[static_cast<std::size_t>(best)]) {
                        best = static_cast<int>(v);
                    }
                }
                const double lse = log_sum_exp(row);
                cands.push_back({std::exp(row[static_cast<std::size_t>(best)] - lse), i, best});
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
                return a.confidence > b.confidence;
            });
            std::vector<std::size_t> picked;
            for (std::size_t j = 0; j < k && j < cands.size(); ++j) {
                seq[p + cands[j].pos] = cands[j].token;
                done[cands[j].pos] = true;
                picked.push_back(cands[j].pos);
            }
            if (trace) {
                trace->finalized.push_back(std::move(picked));
            }
        }
    }
    return {seq.begin() + static_cast<std::ptrdiff_t>(p), seq.end()};
}

std::vector<int> decode(const Denoiser& model, std::span<const int> prompt, const DecodeConfig& cfg,
                        DecodeTrace* trace) {
    if (prompt.size() + cfg.gen_length > static_cast<std::size_t>(model.config().max_seq_len)) {
        throw std::invalid_argument("decode: prompt + gen_length exceeds max_seq_len");
    }
    return decode(denoiser_logits(model), prompt, cfg, model.config().mask_token_id, trace);
}

nlohmann::json EvalReport::to_json() const {
    return {{"task", task},
            {"accuracy", accuracy},
            {"n", n},
            {"correct", correct},
            {"decode", decode.to_json()},
            {"checkpoint_id", checkpoint_id}};
}

EvalReport evaluate(const LogitsFn& model, std::span<const TaskInstance> tasks, const DecodeConfig& cfg,
                    int mask_id, std::string checkpoint_id) {
    if (tasks.empty()) {
        throw std::invalid_argument("evaluate: empty task set");
    }
    EvalReport rep;
    rep.task = to_string(tasks.front().task);
    rep.decode = cfg;
    rep.checkpoint_id = std::move(checkpoint_id);
    for (const auto& inst : tasks) {
        const auto answer = decode(model, inst.prompt, cfg, mask_id);
        rep.correct += verify(inst, answer) ? 1 : 0;
    }
    rep.n = tasks.size();
    rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.n);
    return rep;
}

EvalReport evaluate(const Denoiser& model, std::span<const TaskInstance> tasks, const DecodeConfig& cfg,
                    std::string checkpoint_id) {
    for (const auto& inst : tasks) {
        if (inst.prompt.size() + cfg.gen_length > static_cast<std::size_t>(model.config().max_seq_len)) {
            throw std::invalid_argument("evaluate: prompt + gen_length exceeds max_seq_len");
        }
    }
    return evaluate(denoiser_logits(model), tasks, cfg, model.config().mask_token_id, std::move(checkpoint_id));
}

}  // namespace weft
