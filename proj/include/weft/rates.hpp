#pragma once

// Masking rates and ablation weights computed from first-pass logits.
// Rates are constants with respect to the optimization: callers compute
// them from a separate forward pass and never differentiate through them.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weft/diffusion.hpp"
#include "weft/tensor.hpp"

namespace weft {

enum class SchemeKind { sqrt_entropy, raw_entropy, nll, dream_geo, uniform };

struct WeightScheme {
    SchemeKind kind = SchemeKind::sqrt_entropy;
    // Sharpness of the geometric kernel, dream_geo only.
    double geo_p = 0.3;

    void validate() const;
    // Schemes whose value depends on model logits need the extra forward pass.
    bool needs_logits() const { return kind != SchemeKind::uniform && kind != SchemeKind::dream_geo; }
};

std::string to_string(SchemeKind kind);
SchemeKind parse_scheme(std::string_view name);

// Shannon entropy of softmax(logits) in nats.
double entropy(std::span<const double> logits);

// Rate for one position. `target` is required by the nll scheme only.
double beta_from_logits(std::span<const double> logits, const WeightScheme& scheme,
                        std::optional<int> target = std::nullopt);

// Per-position rates from answer-position logits rows. beta_ref is the mean
// of the raw rates, then rates below `floor` are raised to it.
RateSpec make_rate_spec(const Matrix& answer_logits, const WeightScheme& scheme, std::span<const int> targets,
                        double floor = kBetaFloor);

// Zero-indexed geometric pmf p (1 - p)^k, k >= 0.
double geometric_pmf(double p, int k);

// w_i = 1/2 sum_{j unmasked} Geo(p, |j - i| - 1) for masked i, 0 otherwise.
std::vector<double> dream_weights(std::span<const std::uint8_t> mask, double p);

}  // namespace weft
