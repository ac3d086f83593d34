#include "weft/rates.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace weft {

void WeightScheme::validate() const {
    if (kind == SchemeKind::dream_geo && !(geo_p > 0.0 && geo_p < 1.0)) {
        throw std::invalid_argument("WeightScheme: dream_geo requires 0 < p < 1");
    }
}

std::string to_string(SchemeKind kind) {
    switch (kind) {
    case SchemeKind::sqrt_entropy: return "sqrt_entropy";
    case SchemeKind::raw_entropy: return "raw_entropy";
    case SchemeKind::nll: return "nll";
    case SchemeKind::dream_geo: return "dream_geo";
    case SchemeKind::uniform: return "uniform";
    }
    return "unknown";
}

SchemeKind parse_scheme(std::string_view name) {
    if (name == "sqrt_entropy") return SchemeKind::sqrt_entropy;
    if (name == "raw_entropy") return SchemeKind::raw_entropy;
    if (name == "nll") return SchemeKind::nll;
    if (name == "dream_geo") return SchemeKind::dream_geo;
    if (name == "uniform") return SchemeKind::uniform;
    throw std::invalid_argument("unknown weight scheme: " + std::string(name));
}

double entropy(std::span<const double> logits) {
    if (logits.size() < 2) {
        throw std::invalid_argument("entropy: vocabulary must have at least two entries");
    }
    for (double z : logits) {
        if (!std::isfinite(z)) {
            throw std::invalid_argument("entropy: non-finite logit");
        }
    }
    // H = logsumexp(z) - sum_j p_j z_j, shifted by max(z) for stability.
    const double lse = log_sum_exp(logits);
    double expected = 0.0;
    for (double z : logits) {
        expected += std::exp(z - lse) * (z - lse);
    }
    return std::max(0.0, -expected);
}

double beta_from_logits(std::span<const double> logits, const WeightScheme& scheme, std::optional<int> target) {
    switch (scheme.kind) {
    case SchemeKind::sqrt_entropy:
        return std::sqrt(entropy(logits));
    case SchemeKind::raw_entropy:
        return entropy(logits);
    case SchemeKind::nll: {
        if (!target || *target < 0 || static_cast<std::size_t>(*target) >= logits.size()) {
            throw std::out_of_range("beta_from_logits: nll needs a target inside the vocabulary");
        }
        return -(logits[static_cast<std::size_t>(*target)] - log_sum_exp(logits));
    }
    case SchemeKind::dream_geo:
    case SchemeKind::uniform:
        return 1.0;
    }
    return 1.0;
}

RateSpec make_rate_spec(const Matrix& answer_logits, const WeightScheme& scheme, std::span<const int> targets,
                        double floor) {
    if (answer_logits.rows() == 0) {
        throw std::invalid_argument("make_rate_spec: empty answer");
    }
    if (scheme.kind == SchemeKind::nll && targets.size() != answer_logits.rows()) {
        throw std::invalid_argument("make_rate_spec: nll needs one target per answer position");
    }
    std::vector<double> raw(answer_logits.rows());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        std::optional<int> target;
        if (i < targets.size()) {
            target = targets[i];
        }
        raw[i] = beta_from_logits(answer_logits.row(i), scheme, target);
    }
    return RateSpec::from_raw(raw, floor);
}

double geometric_pmf(double p, int k) {
    if (k < 0) {
        return 0.0;
    }
    return p * std::pow(1.0 - p, k);
}

std::vector<double> dream_weights(std::span<const std::uint8_t> mask, double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("dream_weights: p must lie in (0, 1)");
    }
    const auto n = static_cast<std::ptrdiff_t>(mask.size());
    std::vector<double> w(mask.size(), 0.0);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) {
            continue;
        }
        double s = 0.0;
        for (std::ptrdiff_t j = 0; j < n; ++j) {
            if (!mask[static_cast<std::size_t>(j)]) {
                s += geometric_pmf(p, static_cast<int>(std::abs(j - i) - 1));
            }
        }
        w[static_cast<std::size_t>(i)] = 0.5 * s;
    }
    return w;
}

}  // namespace weft
