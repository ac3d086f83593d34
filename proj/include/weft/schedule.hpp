#pragma once

// Per-token masking probabilities t_i = 1 - (1 - t)^(beta_i / beta_ref) and
// the mask plans drawn from them.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "weft/diffusion.hpp"
#include "weft/rng.hpp"

namespace weft {

struct MaskOptions {
    // Lower end of the t ~ Uniform(t_lo, 1) draw.
    double t_lo = 1e-3;
    // Clamp on t_i; bounds every loss weight by 1 / t_min.
    double t_min = 1e-3;
    int max_redraws = 8;
};

double t_i_from_t(double t, double beta_i, double beta_ref, double t_min = MaskOptions{}.t_min);

// Probability that token i is masked when t ~ Uniform(0, 1).
double expected_mask_prob(double beta_i, double beta_ref);

double sample_time(RandomStream& rng, double t_lo = MaskOptions{}.t_lo);

struct MaskPlan {
    double t = 0.0;
    std::size_t prompt_len = 0;
    std::size_t seq_len = 0;
    // Indexed by sequence position; prompt entries are t_i = 0, mask = 0,
    // weight = 0.
    std::vector<double> t_i;
    std::vector<std::uint8_t> mask;
    std::vector<double> weights;
    // Redraws used before the plan had a masked token; forced is set when
    // the fallback had to mask the max-t_i token.
    int redraws = 0;
    bool forced = false;

    std::size_t answer_len() const { return seq_len - prompt_len; }
    std::size_t masked_count() const;
};

// rates carries one beta per answer position (seq_len - prompt_len entries).
MaskPlan sample_mask_plan(double t, const RateSpec& rates, std::size_t prompt_len, std::size_t seq_len,
                          RandomStream& rng, const MaskOptions& opts = {});

}  // namespace weft
