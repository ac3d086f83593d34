#pragma once

// Property suite over the diffusion process, the masking schedule, the rate
// estimators and the losses. Each property reports the quantity it measured
// next to the tolerance it was held to.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace weft {

enum class VerifyProfile { fast, full };

VerifyProfile parse_profile(const std::string& name);
std::string to_string(VerifyProfile profile);

struct VerifyOptions {
    VerifyProfile profile = VerifyProfile::fast;
    std::uint64_t seed = 20240601;
    // Test hook: negate beta on the closed-form side of the score-ratio check.
    bool inject_beta_sign_flip = false;
};

struct PropertyResult {
    std::string name;
    std::string module;
    // "max_abs_error", "max_sigma" or "bool".
    std::string metric;
    double tolerance = 0.0;
    double observed = 0.0;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct VerifyReport {
    std::string profile;
    std::uint64_t seed = 0;
    std::vector<PropertyResult> results;

    bool passed() const;
    const PropertyResult* find(const std::string& name) const;
    nlohmann::json to_json() const;
};

VerifyReport run_verification(const VerifyOptions& opts);

// Individual properties, also used by the acceptance runner.
PropertyResult check_ctmc_grid(std::uint64_t trials, std::uint64_t seed);
PropertyResult check_matrix_exp(std::uint64_t seed);
PropertyResult check_transition_rows(std::uint64_t seed);
PropertyResult check_lemma2(int instances, std::uint64_t seed);
PropertyResult check_lemma1(int instances, std::uint64_t seed, bool flip_beta_sign = false);
PropertyResult check_schedule_composition();
PropertyResult check_marginal_mask_frequency(std::uint64_t trials, std::uint64_t seed);
PropertyResult check_schedule_monotone(std::uint64_t seed);
PropertyResult check_plan_frequencies(std::uint64_t trials, std::uint64_t seed);
PropertyResult check_entropy_properties(std::uint64_t seed);
PropertyResult check_geometric_mass();
PropertyResult check_uniform_reduction(std::uint64_t seed);
PropertyResult check_unbiasedness(int fixtures, std::uint64_t samples, std::uint64_t seed);
PropertyResult check_loss_nonnegative(std::uint64_t seed);

}  // namespace weft
