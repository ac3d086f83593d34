#include <doctest.h>

#include "weft/verify.hpp"

using namespace weft;

TEST_CASE("fast verification passes and reports every property") {
    VerifyOptions opts;
    const VerifyReport rep = run_verification(opts);
    CHECK(rep.passed());
    CHECK(rep.results.size() == 14);
    const auto j = rep.to_json();
    CHECK(j["passed"] == true);
    CHECK(j["failed"].empty());
    for (const auto& p : j["properties"]) {
        CHECK(p.contains("tolerance"));
        CHECK(p.contains("observed"));
    }
}

TEST_CASE("beta sign flip is caught by the score-ratio check only") {
    PropertyResult clean = check_lemma1(20, 1, false);
    PropertyResult flipped = check_lemma1(20, 1, true);
    CHECK(clean.passed);
    CHECK_FALSE(flipped.passed);
    CHECK(flipped.name == "score_ratio_closed_form");

    VerifyOptions opts;
    opts.inject_beta_sign_flip = true;
    const VerifyReport rep = run_verification(opts);
    CHECK_FALSE(rep.passed());
    const auto j = rep.to_json();
    CHECK(j["failed"] == nlohmann::json::array({"score_ratio_closed_form"}));
}

TEST_CASE("profile names") {
    CHECK(parse_profile("full") == VerifyProfile::full);
    CHECK_THROWS(parse_profile("slow"));
}
