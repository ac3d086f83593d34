#pragma once

// Masked-token cross-entropy objectives. Every kind normalizes by the same
// divisor (masked count by default) so ablation arms are comparable.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weft/rates.hpp"
#include "weft/schedule.hpp"
#include "weft/tensor.hpp"

namespace weft {

enum class LossKind { sft, weft, simple_weight, dream };
enum class Normalization { masked_count, answer_length };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);
std::string to_string(Normalization norm);
Normalization parse_normalization(std::string_view name);

struct LossSpec {
    LossKind kind = LossKind::weft;
    // Rate scheme (weft) or weight scheme (simple_weight).
    WeightScheme scheme{};
    double dream_p = 0.3;
    Normalization normalization = Normalization::masked_count;
};

struct LossBreakdown {
    double loss = 0.0;
    // Per sequence position; zero outside masked answer tokens.
    std::vector<double> ce;
    std::vector<double> weight;
    std::size_t masked_count = 0;
    double normalizer = 1.0;
};

// Cross-entropy of every row against its label.
std::vector<double> cross_entropy_rows(const Matrix& logits, std::span<const int> labels);

// sum over masked tokens of weight_i * CE_i / normalizer, with per-position
// weights supplied by the caller.
LossBreakdown weighted_masked_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                                   std::span<const double> weights, Normalization norm);

// 1/t on masked tokens; the plan must come from uniform rates.
LossBreakdown sft_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                       Normalization norm = Normalization::masked_count);
// 1/t_i on masked tokens.
LossBreakdown weft_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                        Normalization norm = Normalization::masked_count);
// w_i/t on masked tokens. `answer_weights` has one entry per answer position.
LossBreakdown simple_weighted_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan,
                                   std::span<const double> answer_weights,
                                   Normalization norm = Normalization::masked_count);
// Geometric distance-to-unmasked weights over the answer span, times 1/t.
LossBreakdown dream_loss(const Matrix& logits, std::span<const int> labels, const MaskPlan& plan, double p,
                         Normalization norm = Normalization::masked_count);

// d loss / d logits for a breakdown produced from the same logits/labels.
Matrix loss_logit_gradient(const Matrix& logits, std::span<const int> labels, const LossBreakdown& breakdown);

// Exact expectation of the weft loss over all mask patterns of the answer
// under the sampler's redraw policy: the all-unmasked pattern is never
// scored, its mass is redistributed by the retries and, after the last
// retry, lands on the single max-t_i pattern. Logits are held fixed across
// patterns. Answer length <= 12.
double bruteforce_expected_loss(const Matrix& logits, std::span<const int> labels, std::size_t prompt_len,
                                const RateSpec& rates, double t, double t_min = MaskOptions{}.t_min,
                                Normalization norm = Normalization::masked_count);

}  // namespace weft
