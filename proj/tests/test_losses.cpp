#include <doctest.h>

#include <cmath>
#include <vector>

#include "weft/losses.hpp"

using namespace weft;

namespace {

MaskPlan manual_plan(std::size_t prompt, std::vector<double> answer_t, std::vector<std::uint8_t> answer_mask,
                     double t) {
    MaskPlan p;
    p.t = t;
    p.prompt_len = prompt;
    p.seq_len = prompt + answer_t.size();
    p.t_i.assign(prompt, 0.0);
    p.t_i.insert(p.t_i.end(), answer_t.begin(), answer_t.end());
    p.mask.assign(prompt, 0);
    p.mask.insert(p.mask.end(), answer_mask.begin(), answer_mask.end());
    p.weights.assign(p.seq_len, 0.0);
    for (std::size_t i = prompt; i < p.seq_len; ++i) {
        p.weights[i] = p.mask[i] ? 1.0 / p.t_i[i] : 0.0;
    }
    return p;
}

double ce_of(const Matrix& logits, std::size_t row, int label) {
    double z = 0.0;
    for (double x : logits.row(row)) {
        z += std::exp(x);
    }
    return std::log(z) - logits(row, static_cast<std::size_t>(label));
}

Matrix fixture_logits(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    RandomStream rng(seed);
    Matrix m(rows, cols);
    for (double& x : m.flat()) {
        x = rng.normal();
    }
    return m;
}

}  // namespace

TEST_CASE("sft loss examples") {
    const Matrix logits = fixture_logits(4, 5, 1);
    const std::vector<int> labels{0, 1, 2, 3};
    const double c2 = ce_of(logits, 2, 2);
    const double c3 = ce_of(logits, 3, 3);

    auto one = manual_plan(2, {0.5, 0.5}, {1, 0}, 0.5);
    CHECK(sft_loss(logits, labels, one).loss == doctest::Approx(2.0 * c2).epsilon(1e-14));
    auto two = manual_plan(2, {0.25, 0.25}, {1, 1}, 0.25);
    CHECK(sft_loss(logits, labels, two).loss == doctest::Approx(4.0 * (c2 + c3) / 2.0).epsilon(1e-14));
    CHECK(sft_loss(logits, labels, two, Normalization::answer_length).loss ==
          doctest::Approx(4.0 * (c2 + c3) / 2.0).epsilon(1e-14));
    CHECK(sft_loss(logits, labels, one, Normalization::answer_length).loss ==
          doctest::Approx(2.0 * c2 / 2.0).epsilon(1e-14));

    Matrix perfect(4, 5, -200.0);
    for (std::size_t i = 0; i < 4; ++i) {
        perfect(i, static_cast<std::size_t>(labels[i])) = 200.0;
    }
    CHECK(sft_loss(perfect, labels, two).loss <= 1e-100);

    CHECK_THROWS(sft_loss(logits, labels, manual_plan(2, {0.5, 0.25}, {1, 1}, 0.5)));
    CHECK_THROWS(sft_loss(logits, labels, manual_plan(2, {0.5, 0.5}, {0, 0}, 0.5)));
}

TEST_CASE("weft loss examples") {
    const Matrix logits = fixture_logits(4, 5, 2);
    const std::vector<int> labels{0, 1, 2, 3};
    const double c2 = ce_of(logits, 2, 2);
    const double c3 = ce_of(logits, 3, 3);
    const auto plan = manual_plan(2, {0.5, 0.25}, {1, 1}, 0.4);
    const auto lb = weft_loss(logits, labels, plan);
    CHECK(lb.loss == doctest::Approx((2.0 * c2 + 4.0 * c3) / 2.0).epsilon(1e-14));
    CHECK(lb.masked_count == 2);
    CHECK(lb.weight[2] == 2.0);
    CHECK(lb.weight[3] == 4.0);
    CHECK(lb.ce[0] == 0.0);
    CHECK(lb.ce[2] == doctest::Approx(c2).epsilon(1e-14));

    // A uniform plan makes weft and sft the same computation.
    const auto uplan = manual_plan(2, {0.3, 0.3}, {0, 1}, 0.3);
    CHECK(weft_loss(logits, labels, uplan).loss == sft_loss(logits, labels, uplan).loss);
}

TEST_CASE("simple weighted and dream losses") {
    const Matrix logits = fixture_logits(6, 4, 3);
    const std::vector<int> labels{0, 1, 2, 3, 0, 1};
    const auto both = manual_plan(4, {0.5, 0.5}, {1, 1}, 0.5);
    const double c4 = ce_of(logits, 4, 0);
    CHECK(simple_weighted_loss(logits, labels, both, std::vector<double>{2.0, 0.0}).loss ==
          doctest::Approx(4.0 * c4 / 2.0).epsilon(1e-14));
    CHECK(simple_weighted_loss(logits, labels, both, std::vector<double>{1.0, 1.0}).loss ==
          sft_loss(logits, labels, both).loss);
    CHECK_THROWS(simple_weighted_loss(logits, labels, both, std::vector<double>{-1.0, 1.0}));
    CHECK_THROWS(simple_weighted_loss(logits, labels, both, std::vector<double>{1.0}));

    // Fully masked answer: no clean neighbour, so every weight vanishes.
    CHECK(dream_loss(logits, labels, both, 0.3).loss == 0.0);

    // Answer of 5 with only its first token clean.
    const Matrix l7 = fixture_logits(7, 4, 4);
    const std::vector<int> y7{0, 1, 2, 3, 0, 1, 2};
    const auto plan = manual_plan(2, {0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 1, 1, 1}, 0.5);
    const auto lb = dream_loss(l7, y7, plan, 0.3);
    CHECK(lb.weight[4] == doctest::Approx(0.105 / 0.5).epsilon(1e-14));
    double expect = 0.0;
    for (std::size_t i = 3; i < 7; ++i) {
        const double w = 0.5 * 0.3 * std::pow(0.7, static_cast<double>(i - 2) - 1.0);
        expect += w / 0.5 * ce_of(l7, i, y7[i]);
    }
    CHECK(lb.loss == doctest::Approx(expect / 4.0).epsilon(1e-13));
}

TEST_CASE("sqrt-entropy simple weights compose by hand") {
    // First-pass rows with probabilities (0.5, 0.25, 0.25) and uniform over 4.
    Matrix first(2, 4, 0.0);
    first(0, 0) = std::log(0.5);
    first(0, 1) = std::log(0.25);
    first(0, 2) = std::log(0.25);
    first(0, 3) = -1e300;
    const double w0 = std::sqrt(1.5 * std::log(2.0));
    const double w1 = std::sqrt(std::log(4.0));
    const std::vector<double> w{beta_from_logits(first.row(0), {SchemeKind::sqrt_entropy}),
                                beta_from_logits(first.row(1), {SchemeKind::sqrt_entropy})};
    CHECK(w[0] == doctest::Approx(w0).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(w1).epsilon(1e-14));

    const Matrix logits = fixture_logits(3, 4, 5);
    const std::vector<int> labels{0, 2, 3};
    const auto plan = manual_plan(1, {0.4, 0.4}, {1, 1}, 0.4);
    const double expect = (w0 / 0.4 * ce_of(logits, 1, 2) + w1 / 0.4 * ce_of(logits, 2, 3)) / 2.0;
    CHECK(simple_weighted_loss(logits, labels, plan, w).loss == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("logit gradient matches finite differences") {
    const Matrix logits = fixture_logits(5, 6, 6);
    const std::vector<int> labels{0, 1, 2, 3, 4};
    const auto plan = manual_plan(2, {0.5, 0.2, 0.9}, {1, 1, 0}, 0.5);
    const auto lb = weft_loss(logits, labels, plan);
    const Matrix g = loss_logit_gradient(logits, labels, lb);
    const double eps = 1e-6;
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            Matrix up = logits;
            Matrix dn = logits;
            up(r, c) += eps;
            dn(r, c) -= eps;
            const double fd = (weft_loss(up, labels, plan).loss - weft_loss(dn, labels, plan).loss) / (2 * eps);
            CHECK(std::abs(fd - g(r, c)) <= 1e-8);
        }
    }
}

TEST_CASE("brute-force expectation") {
    const Matrix logits = fixture_logits(4, 5, 7);
    const std::vector<int> labels{0, 1, 2, 3};

    SUBCASE("single answer token") {
        const Matrix l3 = fixture_logits(3, 5, 8);
        const auto rates = RateSpec::from_raw(std::vector<double>{0.7});
        const double t = 0.35;
        const double ti = t_i_from_t(t, 0.7, 0.7);
        CHECK(bruteforce_expected_loss(l3, std::vector<int>{0, 1, 2}, 2, rates, t) ==
              doctest::Approx(ce_of(l3, 2, 2) / ti).epsilon(1e-14));
    }
    SUBCASE("two symmetric tokens by hand") {
        const auto rates = RateSpec::uniform(2);
        const double t = 0.3;
        const double c2 = ce_of(logits, 2, 2);
        const double c3 = ce_of(logits, 3, 3);
        const double q = (1 - t) * (1 - t);
        double retry = 0.0;
        for (int k = 0; k < 9; ++k) {
            retry += std::pow(q, k);
        }
        // Ties on t_i force the first answer token.
        const double expect = retry * (t * (1 - t) * (c2 / t) + (1 - t) * t * (c3 / t) + t * t * (c2 + c3) / (2 * t)) +
                              std::pow(q, 9) * (c2 / t);
        CHECK(std::abs(bruteforce_expected_loss(logits, labels, 2, rates, t) - expect) <= 1e-12);
    }
    SUBCASE("length guard") {
        const Matrix big = fixture_logits(14, 3, 9);
        CHECK_THROWS(bruteforce_expected_loss(big, std::vector<int>(14, 0), 1, RateSpec::uniform(13), 0.5));
    }
    SUBCASE("three tokens against Monte Carlo") {
        const auto rates = RateSpec::from_raw(std::vector<double>{0.3, 1.0, 2.5});
        const Matrix l5 = fixture_logits(5, 5, 10);
        const std::vector<int> y5{0, 1, 2, 3, 4};
        const double t = 0.45;
        const double exact = bruteforce_expected_loss(l5, y5, 2, rates, t);
        RandomStream rng(77);
        double mean = 0.0;
        double m2 = 0.0;
        const int n = 100000;
        for (int k = 1; k <= n; ++k) {
            const double x = weft_loss(l5, y5, sample_mask_plan(t, rates, 2, 5, rng)).loss;
            const double d = x - mean;
            mean += d / k;
            m2 += d * (x - mean);
        }
        const double se = std::sqrt(m2 / (n - 1) / n);
        CHECK(std::abs(mean - exact) <= 3.0 * se);
    }
}

TEST_CASE("loss names round-trip") {
    for (auto k : {LossKind::sft, LossKind::weft, LossKind::simple_weight, LossKind::dream}) {
        CHECK(parse_loss_kind(to_string(k)) == k);
    }
    CHECK_THROWS(parse_loss_kind("ppo"));
    CHECK(parse_normalization("answer_length") == Normalization::answer_length);
}
