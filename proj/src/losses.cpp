#include "weft/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace weft {

std::string to_string(LossKind kind) {
    switch (kind) {
    case LossKind::sft: return "sft";
    case LossKind::weft: return "weft";
    case LossKind::simple_weight: return "sw";
    case LossKind::dream: return "dream";
    }
    return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
    if (name == "sft") return LossKind::sft;
    if (name == "weft") return LossKind::weft;
    if (name == "sw" || name == "simple_weight") return LossKind::simple_weight;
    if (name == "dream") return LossKind::dream;
    throw std::invalid_argument("unknown loss kind: " + std::string(name));
}

std::string to_string(Normalization norm) {
    return norm == Normalization::masked_count ? "masked_count" : "answer_length";
}

Normalization parse_normalization(std::string_view name) {
    if (name == "masked_count") return Normalization::masked_count;
    if (name == "answer_length") return Normalization::answer_length;
    throw std::invalid_argument("unknown normalization: " + std::string(name));
}

std::vector<double> cross_entropy_rows(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows()) {
        throw std::invalid_argument("cross_entropy_rows: one label per row is required");
    }
    std::vector<double> ce(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
            throw std::out_of_range("cross_entropy_rows: label outside vocabulary");
        }
        ce[i] = log_sum_exp(logits.row(i)) - logits(i, static_cast<std::size_t>(y));
    }
    return ce;
}

LossBreakdown weighted_masked_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                                   std::span<const double> weights, Normalization norm) {
    if (logits.rows() != plan.seq_len || labels.size() != plan.seq_len || weights.size() != plan.seq_len) {
        throw std::invalid_argument("weighted_masked_loss: shape mismatch with mask plan");
    }
    LossBreakdown out;
    out.ce.assign(plan.seq_len, 0.0);
    out.weight.assign(plan.seq_len, 0.0);
    out.masked_count = plan.masked_count();
    if (out.masked_count == 0) {
        throw std::invalid_argument("weighted_masked_loss: plan has no masked token");
    }
    out.normalizer = norm == Normalization::masked_count ? static_cast<double>(out.masked_count)
                                                         : static_cast<double>(plan.answer_len());
    double total = 0.0;
    for (std::size_t i = plan.prompt_len; i < plan.seq_len; ++i) {
        if (!plan.mask[i]) {
            continue;
        }
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
            throw std::out_of_range("weighted_masked_loss: label outside vocabulary");
        }
        out.ce[i] = log_sum_exp(logits.row(i)) - logits(i, static_cast<std::size_t>(y));
        out.weight[i] = weights[i];
        total += weights[i] * out.ce[i];
    }
    out.loss = total / out.normalizer;
    return out;
}

LossBreakdown sft_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                       Normalization norm) {
    std::vector<double> w(plan.seq_len, 0.0);
    for (std::size_t i = plan.prompt_len; i < plan.seq_len; ++i) {
        if (plan.t_i[i] != plan.t_i[plan.prompt_len]) {
            throw std::invalid_argument("sft_loss: plan must use one masking probability for every token");
        }
        w[i] = 1.0 / plan.t_i[i];
    }
    return weighted_masked_loss(logits, labels, plan, w, norm);
}

LossBreakdown weft_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                        Normalization norm) {
    std::vector<double> w(plan.seq_len, 0.0);
    for (std::size_t i = plan.prompt_len; i < plan.seq_len; ++i) {
        w[i] = 1.0 / plan.t_i[i];
    }
    return weighted_masked_loss(logits, labels, plan, w, norm);
}

LossBreakdown simple_weighted_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                                   std::span<const double> answer_weights, Normalization norm) {
    if (answer_weights.size() != plan.answer_len()) {
        throw std::invalid_argument("simple_weighted_loss: one weight per answer position is required");
    }
    std::vector<double> w(plan.seq_len, 0.0);
    for (std::size_t i = plan.prompt_len; i < plan.seq_len; ++i) {
        const double wi = answer_weights[i - plan.prompt_len];
        if (!(wi >= 0.0) || !std::isfinite(wi)) {
            throw std::invalid_argument("simple_weighted_loss: weights must be finite and nonnegative");
        }
        w[i] = wi / plan.t;
    }
    return weighted_masked_loss(logits, labels, plan, w, norm);
}

LossBreakdown dream_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan, double p,
                         Normalization norm) {
    std::span<const std::uint8_t> answer_mask(plan.mask.data() + plan.prompt_len, plan.answer_len());
    const auto w = dream_weights(answer_mask, p);
    return simple_weighted_loss(logits, labels, plan, w, norm);
}

Matrix loss_logit_gradient(const Matrix& logits, std::span<const int> labels, const LossBreakdown& breakdown) {
    Matrix grad(logits.rows(), logits.cols(), 0.0);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double scale = breakdown.weight[i] / breakdown.normalizer;
        if (scale == 0.0) {
            continue;
        }
        const auto p = softmax(logits.row(i));
        auto g = grad.row(i);
        for (std::size_t j = 0; j < p.size(); ++j) {
            g[j] = scale * p[j];
        }
        g[static_cast<std::size_t>(labels[i])] -= scale;
    }
    return grad;
}

double bruteforce_expected_loss(const Matrix& logits, std::span<const int> labels, std::size_t prompt_len,
                                const RateSpec& rates, double t, double t_min, Normalization norm) {
    const std::size_t seq_len = logits.rows();
    if (prompt_len >= seq_len) {
        throw std::invalid_argument("bruteforce_expected_loss: empty answer");
    }
    const std::size_t n = seq_len - prompt_len;
    if (n > 12) {
        throw std::invalid_argument("bruteforce_expected_loss: answer longer than 12 tokens");
    }
    if (rates.betas.size() != n) {
        throw std::invalid_argument("bruteforce_expected_loss: one rate per answer position is required");
    }
    const auto ce = cross_entropy_rows(logits, labels);
    std::vector<double> ti(n);
    std::size_t forced = 0;
    for (std::size_t k = 0; k < n; ++k) {
        ti[k] = t_i_from_t(t, rates.betas[k], rates.beta_ref, t_min);
        if (ti[k] > ti[forced]) {
            forced = k;
        }
    }

    auto pattern_loss = [&](std::size_t pattern) {
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if ((pattern >> k) & 1U) {
                total += ce[prompt_len + k] / ti[k];
                ++count;
            }
        }
        const double divisor = norm == Normalization::masked_count ? static_cast<double>(count)
                                                                   : static_cast<double>(n);
        return total / divisor;
    };

    // Independent Bernoulli draws, retried up to 8 times while nothing is
    // masked, after which the max-t_i token is masked alone.
    constexpr int kAttempts = MaskOptions{}.max_redraws + 1;
    double none = 1.0;
    for (double p : ti) {
        none *= 1.0 - p;
    }
    const double none_all = std::pow(none, kAttempts);
    const double retry_scale = none < 1.0 ? (1.0 - none_all) / (1.0 - none) : static_cast<double>(kAttempts);

    double expectation = 0.0;
    for (std::size_t pattern = 1; pattern < (std::size_t{1} << n); ++pattern) {
        double prob = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            prob *= ((pattern >> k) & 1U) ? ti[k] : 1.0 - ti[k];
        }
        expectation += prob * retry_scale * pattern_loss(pattern);
    }
    expectation += none_all * pattern_loss(std::size_t{1} << forced);
    return expectation;
}

}  // namespace weft
