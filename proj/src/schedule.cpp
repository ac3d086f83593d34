#include "weft/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace weft {

double t_i_from_t(double t, double beta_i, double beta_ref, double t_min) {
    if (!(t > 0.0 && t < 1.0)) {
        throw std::domain_error("t_i_from_t: t must lie in (0, 1)");
    }
    if (!(beta_i >= 0.0) || !(beta_ref > 0.0)) {
        throw std::domain_error("t_i_from_t: need beta_i >= 0 and beta_ref > 0");
    }
    const double exponent = beta_i / beta_ref;
    // Exponent one returns t itself so equal rates reproduce uniform masking bitwise.
    const double ti = exponent == 1.0 ? t : -std::expm1(exponent * std::log1p(-t));
    return std::clamp(ti, t_min, kMaxTime);
}

double expected_mask_prob(double beta_i, double beta_ref) {
    if (!(beta_i >= 0.0) || !(beta_ref > 0.0)) {
        throw std::domain_error("expected_mask_prob: need beta_i >= 0 and beta_ref > 0");
    }
    return beta_i / (beta_i + beta_ref);
}

double sample_time(RandomStream& rng, double t_lo) {
    return rng.uniform(t_lo, 1.0);
}

std::size_t MaskPlan::masked_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

MaskPlan sample_mask_plan(double t, const RateSpec& rates, std::size_t prompt_len, std::size_t seq_len,
                          RandomStream& rng, const MaskOptions& opts) {
    if (prompt_len >= seq_len) {
        throw std::invalid_argument("sample_mask_plan: the answer must be nonempty");
    }
    if (rates.betas.size() != seq_len - prompt_len) {
        throw std::invalid_argument("sample_mask_plan: one rate per answer position is required");
    }

    MaskPlan plan;
    plan.t = t;
    plan.prompt_len = prompt_len;
    plan.seq_len = seq_len;
    plan.t_i.assign(seq_len, 0.0);
    plan.mask.assign(seq_len, 0);
    plan.weights.assign(seq_len, 0.0);

    std::size_t argmax = prompt_len;
    for (std::size_t i = prompt_len; i < seq_len; ++i) {
        plan.t_i[i] = t_i_from_t(t, rates.betas[i - prompt_len], rates.beta_ref, opts.t_min);
        if (plan.t_i[i] > plan.t_i[argmax]) {
            argmax = i;
        }
    }

    std::size_t masked = 0;
    for (int attempt = 0; attempt <= opts.max_redraws; ++attempt) {
        masked = 0;
        for (std::size_t i = prompt_len; i < seq_len; ++i) {
            plan.mask[i] = rng.bernoulli(plan.t_i[i]) ? 1 : 0;
            masked += plan.mask[i];
        }
        if (masked > 0) {
            break;
        }
        if (attempt < opts.max_redraws) {
            ++plan.redraws;
        }
    }
    if (masked == 0) {
        plan.mask[argmax] = 1;
        plan.forced = true;
    }
    for (std::size_t i = prompt_len; i < seq_len; ++i) {
        if (plan.mask[i]) {
            plan.weights[i] = 1.0 / plan.t_i[i];
        }
    }
    return plan;
}

}  // namespace weft
