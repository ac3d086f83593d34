#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "weft/diffusion.hpp"

using namespace weft;

namespace {

// Joint p_t built by walking the forward chain one token at a time, written
// independently of the library's enumeration.
std::map<std::vector<int>, double> forward_joint(const TinyDistribution& p0, const std::vector<double>& survive) {
    std::map<std::vector<int>, double> out;
    const int d = p0.length;
    const int v = p0.vocab;
    std::vector<int> x0(static_cast<std::size_t>(d), 0);
    for (std::size_t c = 0; c < p0.probs.size(); ++c) {
        std::size_t rest = c;
        for (int i = d - 1; i >= 0; --i) {
            x0[static_cast<std::size_t>(i)] = static_cast<int>(rest % static_cast<std::size_t>(v));
            rest /= static_cast<std::size_t>(v);
        }
        std::vector<std::pair<std::vector<int>, double>> partial{{{}, p0.probs[c]}};
        for (int i = 0; i < d; ++i) {
            std::vector<std::pair<std::vector<int>, double>> next;
            for (const auto& [seq, p] : partial) {
                auto keep = seq;
                keep.push_back(x0[static_cast<std::size_t>(i)]);
                next.emplace_back(keep, p * survive[static_cast<std::size_t>(i)]);
                auto gone = seq;
                gone.push_back(v);
                next.emplace_back(gone, p * (1.0 - survive[static_cast<std::size_t>(i)]));
            }
            partial = std::move(next);
        }
        for (const auto& [seq, p] : partial) {
            out[seq] += p;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("reference schedule masks the reference token with probability t") {
    const auto sched = NoiseSchedule::reference(1.0);
    CHECK(sched.accumulated(0.0) == 0.0);
    auto k = transition_closed(1.0, sched, 0.5);
    CHECK(k.survive == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(k.mask == doctest::Approx(0.5).epsilon(1e-15));
    k = transition_closed(2.0, sched, 0.5);
    CHECK(k.survive == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(k.mask == doctest::Approx(0.75).epsilon(1e-15));
    k = transition_closed(0.0, sched, 0.9);
    CHECK(k.survive == 1.0);
    CHECK(k.mask == 0.0);

    double prev = 0.0;
    for (int i = 1; i < 100; ++i) {
        const double f = sched.accumulated(i / 100.0);
        CHECK(f >= prev);
        prev = f;
        CHECK(1.0 - std::exp(-sched.accumulated(i / 100.0)) == doctest::Approx(i / 100.0).epsilon(1e-13));
    }
}

TEST_CASE("transition_closed rejects bad inputs") {
    const auto sched = NoiseSchedule::reference(1.0);
    CHECK_THROWS(transition_closed(-0.1, sched, 0.5));
    CHECK_THROWS(transition_closed(1.0, sched, 1.0));
    CHECK_THROWS(transition_closed(1.0, sched, -0.1));
    CHECK_THROWS(NoiseSchedule::reference(0.0));
}

TEST_CASE("matrix exponential of absorbing chains") {
    const std::vector<double> one{1.7};
    const auto p = matrix_exp_oracle(absorbing_rate_matrix(one), 0.8);
    CHECK(p(0, 0) == doctest::Approx(std::exp(-1.7 * 0.8)).epsilon(1e-13));
    CHECK(p(0, 1) == doctest::Approx(1.0 - std::exp(-1.7 * 0.8)).epsilon(1e-13));
    CHECK(p(1, 0) == 0.0);
    CHECK(p(1, 1) == doctest::Approx(1.0));

    const auto id = matrix_exp_oracle(absorbing_rate_matrix(std::vector<double>{1.0}), 0.0);
    CHECK(id(0, 0) == 1.0);
    CHECK(id(0, 1) == 0.0);

    const std::vector<double> two{1.0, 2.0};
    const auto q = matrix_exp_oracle(absorbing_rate_matrix(two), std::log(2.0));
    CHECK(std::abs(q(0, 0) - 0.5) <= 1e-12);
    CHECK(std::abs(q(1, 1) - 0.25) <= 1e-12);
    CHECK(std::abs(q(0, 2) - 0.5) <= 1e-12);
    CHECK(std::abs(q(1, 2) - 0.75) <= 1e-12);
    CHECK(std::abs(q(0, 1)) <= 1e-15);
}

TEST_CASE("matrix exponential rejects non-conservative or oversized matrices") {
    SquareMatrix q(2);
    q(0, 0) = -1.0;
    q(0, 1) = 0.5;
    CHECK_THROWS(matrix_exp_oracle(q, 1.0));
    SquareMatrix neg(2);
    neg(0, 0) = 1.0;
    neg(0, 1) = -1.0;
    CHECK_THROWS(matrix_exp_oracle(neg, 1.0));
    CHECK_THROWS(matrix_exp_oracle(SquareMatrix(9), 1.0));
}

TEST_CASE("ctmc simulation") {
    const auto sched = NoiseSchedule::reference(1.0);
    RandomStream rng(11);
    const CtmcSimulator never(0.0, sched, 0.9, 100);
    CHECK(never.mask_fraction(1000, rng) == 0.0);
    CHECK_THROWS(CtmcSimulator(1.0, sched, 0.5, 99));

    const std::uint64_t n = 200000;
    for (auto [beta, expect] : {std::pair{1.0, 0.5}, std::pair{2.0, 0.75}}) {
        const CtmcSimulator sim(beta, sched, 0.5, 100);
        const double frac = sim.mask_fraction(n, rng);
        CHECK(std::abs(frac - expect) <= 4.0 * std::sqrt(expect * (1 - expect) / n));
    }
}

TEST_CASE("p_t enumeration") {
    RandomStream rng(5);
    const auto p0 = TinyDistribution::random(2, 2, rng);
    const auto rates = RateSpec::from_raw(std::vector<double>{0.7, 1.9});
    const auto sched = NoiseSchedule::reference(rates.beta_ref);

    SUBCASE("t = 0 leaves p_0 in place") {
        const auto pt = pt_marginal_exact(p0, rates, sched, 0.0);
        for (std::size_t x = 0; x < pt.size(); ++x) {
            const auto xt = p0.decode_noisy(x);
            const bool any_mask = xt[0] == 2 || xt[1] == 2;
            if (!any_mask) {
                CHECK(pt[x] == doctest::Approx(p0.probs[static_cast<std::size_t>(xt[0] * 2 + xt[1])]));
            } else {
                CHECK(pt[x] == 0.0);
            }
        }
    }
    SUBCASE("fully masked sequence is a product of mask probabilities") {
        const double t = 0.4;
        const auto pt = pt_marginal_exact(p0, rates, sched, t);
        const double expect = transition_closed(0.7, sched, t).mask * transition_closed(1.9, sched, t).mask;
        CHECK(std::abs(pt[p0.encode_noisy(std::vector<int>{2, 2})] - expect) <= 1e-15);
    }
    SUBCASE("matches an independent forward walk and the product form") {
        for (double t : {0.1, 0.5, 0.83}) {
            const auto pt = pt_marginal_exact(p0, rates, sched, t);
            const std::vector<double> survive{transition_closed(0.7, sched, t).survive,
                                              transition_closed(1.9, sched, t).survive};
            const auto walk = forward_joint(p0, survive);
            double total = 0.0;
            for (const auto& [seq, p] : walk) {
                CHECK(std::abs(pt[p0.encode_noisy(seq)] - p) <= 1e-15);
                CHECK(std::abs(pt_product_formula(p0, rates, sched, t, seq) - p) <= 1e-12);
                total += p;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("score ratio closed form") {
    RandomStream rng(9);
    const auto p0 = TinyDistribution::random(3, 3, rng);
    const auto rates = RateSpec::from_raw(std::vector<double>{0.4, 1.0, 2.2});
    const auto sched = NoiseSchedule::reference(rates.beta_ref);
    const double t = 0.6;
    const std::vector<double> survive{transition_closed(0.4, sched, t).survive,
                                      transition_closed(1.0, sched, t).survive,
                                      transition_closed(2.2, sched, t).survive};
    const auto walk = forward_joint(p0, survive);

    SUBCASE("unmasked position gives zero") {
        CHECK(score_ratio_closed(p0, rates, sched, t, std::vector<int>{1, 3, 0}, 0, 2) == 0.0);
    }
    SUBCASE("clean replacement is required") {
        CHECK_THROWS(score_ratio_closed(p0, rates, sched, t, std::vector<int>{3, 3, 0}, 0, 3));
    }
    SUBCASE("ratio of forward-walk probabilities") {
        double worst = 0.0;
        for (const auto& [seq, p] : walk) {
            for (int i = 0; i < 3; ++i) {
                if (seq[static_cast<std::size_t>(i)] != 3) {
                    continue;
                }
                for (int v = 0; v < 3; ++v) {
                    auto swapped = seq;
                    swapped[static_cast<std::size_t>(i)] = v;
                    const double brute = walk.at(swapped) / p;
                    worst = std::max(worst, std::abs(brute - score_ratio_closed(p0, rates, sched, t, seq, i, v)));
                }
            }
        }
        CHECK(worst <= 1e-10);
    }
    SUBCASE("unit prefactor at beta * fbar = ln 2") {
        const auto s = NoiseSchedule::reference(1.0);
        const auto r = RateSpec::from_raw(std::vector<double>{1.0, 1.0, 1.0});
        const std::vector<int> xt{3, 1, 2};
        const double cond = p0.marginal(std::vector<int>{0, 1, 2}) / p0.marginal(xt);
        CHECK(score_ratio_closed(p0, r, s, 0.5, xt, 0, 0) == doctest::Approx(cond).epsilon(1e-14));
    }
}

TEST_CASE("tiny distributions validate their tables") {
    TinyDistribution d;
    d.length = 1;
    d.vocab = 2;
    d.probs = {0.5, 0.6};
    CHECK_THROWS(d.validate());
    d.probs = {0.25, 0.75};
    CHECK_NOTHROW(d.validate());
    d.length = 5;
    CHECK_THROWS(d.validate());
}

TEST_CASE("rate spec construction") {
    const auto spec = RateSpec::from_raw(std::vector<double>{1.0, 3.0});
    CHECK(spec.beta_ref == 2.0);
    const auto floored = RateSpec::from_raw(std::vector<double>{0.0, 2.0});
    CHECK(floored.beta_ref == 1.0);
    CHECK(floored.betas[0] == kBetaFloor);
    CHECK(floored.floored == 1);
    CHECK_THROWS(RateSpec::from_raw(std::vector<double>{}));
    CHECK_THROWS(RateSpec::from_raw(std::vector<double>{-1.0}));
}
