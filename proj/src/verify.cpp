#include "weft/verify.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "weft/diffusion.hpp"
#include "weft/losses.hpp"
#include "weft/rates.hpp"
#include "weft/schedule.hpp"

namespace weft {

namespace {

PropertyResult timed(const std::function<PropertyResult()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    PropertyResult r = fn();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

PropertyResult make(std::string name, std::string module, std::string metric, double tol) {
    PropertyResult r;
    r.name = std::move(name);
    r.module = std::move(module);
    r.metric = std::move(metric);
    r.tolerance = tol;
    return r;
}

// |observed - p| in units of the binomial standard deviation.
double sigma_distance(double observed, double p, std::uint64_t n) {
    const double sd = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    if (sd == 0.0) {
        return observed == p ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return std::abs(observed - p) / sd;
}

Matrix random_logits(std::size_t rows, std::size_t cols, double scale, RandomStream& rng) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) {
        v = scale * rng.normal();
    }
    return m;
}

std::vector<int> random_labels(std::size_t n, int vocab, RandomStream& rng) {
    std::vector<int> out(n);
    for (int& x : out) {
        x = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    }
    return out;
}

struct TinyCase {
    TinyDistribution p0;
    RateSpec rates;
    double t = 0.5;
};

TinyCase tiny_case(RandomStream rng) {
    TinyCase c;
    const int d = 1 + static_cast<int>(rng.below(3));
    const int v = 2 + static_cast<int>(rng.below(2));
    c.p0 = TinyDistribution::random(d, v, rng);
    std::vector<double> raw(static_cast<std::size_t>(d));
    for (double& b : raw) {
        b = rng.uniform(0.2, 3.0);
    }
    c.rates = RateSpec::from_raw(raw);
    c.t = rng.uniform(0.1, 0.9);
    return c;
}

}  // namespace

VerifyProfile parse_profile(const std::string& name) {
    if (name == "fast") {
        return VerifyProfile::fast;
    }
    if (name == "full") {
        return VerifyProfile::full;
    }
    throw std::invalid_argument("unknown verify profile '" + name + "' (expected fast or full)");
}

std::string to_string(VerifyProfile profile) {
    return profile == VerifyProfile::fast ? "fast" : "full";
}

bool VerifyReport::passed() const {
    return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

const PropertyResult* VerifyReport::find(const std::string& name) const {
    for (const auto& r : results) {
        if (r.name == name) {
            return &r;
        }
    }
    return nullptr;
}

nlohmann::json VerifyReport::to_json() const {
    nlohmann::json props = nlohmann::json::array();
    std::vector<std::string> failed;
    for (const auto& r : results) {
        props.push_back({{"name", r.name},
                         {"module", r.module},
                         {"metric", r.metric},
                         {"tolerance", r.tolerance},
                         {"observed", std::isfinite(r.observed) ? nlohmann::json(r.observed) : nlohmann::json()},
                         {"passed", r.passed},
                         {"detail", r.detail},
                         {"seconds", r.seconds}});
        if (!r.passed) {
            failed.push_back(r.name);
        }
    }
    return {{"schema_version", 1},
            {"profile", profile},
            {"seed", seed},
            {"passed", passed()},
            {"failed", failed},
            {"properties", props}};
}

PropertyResult check_ctmc_grid(std::uint64_t trials, std::uint64_t seed) {
    PropertyResult r = make("ctmc_vs_closed_form", "diffusion-core", "max_sigma", 4.0);
    const auto sched = NoiseSchedule::reference(1.0);
    const RandomStream root = root_stream(seed).substream("ctmc");
    std::ostringstream detail;
    std::uint64_t idx = 0;
    for (double beta : {0.25, 1.0, 4.0}) {
        for (double t : {0.1, 0.5, 0.9}) {
            RandomStream rng = root.substream(idx++);
            const CtmcSimulator sim(beta, sched, t, 100);
            const double frac = sim.mask_fraction(trials, rng);
            const double p = transition_closed(beta, sched, t).mask;
            const double z = sigma_distance(frac, p, trials);
            r.observed = std::max(r.observed, z);
            detail << "beta=" << beta << " t=" << t << " sim=" << frac << " closed=" << p << "; ";
        }
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = "trials=" + std::to_string(trials) + " " + detail.str();
    return r;
}

PropertyResult check_matrix_exp(std::uint64_t seed) {
    PropertyResult r = make("matrix_exp_vs_closed_form", "diffusion-core", "max_abs_error", 1e-9);
    RandomStream rng = root_stream(seed).substream("matexp");
    for (int k = 0; k < 20; ++k) {
        const std::vector<double> betas{rng.uniform(0.05, 4.0), rng.uniform(0.05, 4.0)};
        const double t = rng.uniform(0.01, 0.95);
        const auto sched = NoiseSchedule::reference(1.0);
        const SquareMatrix p = matrix_exp_oracle(absorbing_rate_matrix(betas), sched.accumulated(t));
        for (std::size_t i = 0; i < betas.size(); ++i) {
            const TransitionKernel kern = transition_closed(betas[i], sched, t);
            r.observed = std::max(r.observed, std::abs(p(i, i) - kern.survive));
            r.observed = std::max(r.observed, std::abs(p(i, betas.size()) - kern.mask));
        }
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = "20 random (beta, t) pairs on a 3-state absorbing rate matrix";
    return r;
}

PropertyResult check_transition_rows(std::uint64_t seed) {
    PropertyResult r = make("transition_rows_sum_to_one", "diffusion-core", "max_abs_error", 1e-10);
    RandomStream rng = root_stream(seed).substream("rows");
    for (int k = 0; k < 20; ++k) {
        std::vector<double> betas(1 + rng.below(7));
        for (double& b : betas) {
            b = rng.uniform(0.0, 5.0);
        }
        const SquareMatrix p = matrix_exp_oracle(absorbing_rate_matrix(betas), rng.uniform(0.0, 10.0));
        for (std::size_t i = 0; i < p.n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < p.n; ++j) {
                s += p(i, j);
            }
            r.observed = std::max(r.observed, std::abs(s - 1.0));
        }
        const TransitionKernel kern = transition_closed(betas[0], NoiseSchedule::reference(1.0), 0.5);
        r.observed = std::max(r.observed, std::abs(kern.survive + kern.mask - 1.0));
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = "20 random absorbing chains up to 8 states";
    return r;
}

PropertyResult check_lemma2(int instances, std::uint64_t seed) {
    PropertyResult r = make("pt_product_formula", "diffusion-core", "max_abs_error", 1e-12);
    const RandomStream root = root_stream(seed).substream("lemma");
    for (int k = 0; k < instances; ++k) {
        const TinyCase c = tiny_case(root.substream(static_cast<std::uint64_t>(k)));
        const auto sched = NoiseSchedule::reference(c.rates.beta_ref);
        const auto pt = pt_marginal_exact(c.p0, c.rates, sched, c.t);
        for (std::size_t x = 0; x < pt.size(); ++x) {
            const auto xt = c.p0.decode_noisy(x);
            r.observed = std::max(r.observed, std::abs(pt[x] - pt_product_formula(c.p0, c.rates, sched, c.t, xt)));
        }
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = std::to_string(instances) + " random distributions, d<=3, V<=3";
    return r;
}

PropertyResult check_lemma1(int instances, std::uint64_t seed, bool flip_beta_sign) {
    PropertyResult r = make("score_ratio_closed_form", "diffusion-core", "max_abs_error", 1e-10);
    const RandomStream root = root_stream(seed).substream("lemma");
    for (int k = 0; k < instances; ++k) {
        const TinyCase c = tiny_case(root.substream(static_cast<std::uint64_t>(k)));
        const auto sched = NoiseSchedule::reference(c.rates.beta_ref);
        const auto pt = pt_marginal_exact(c.p0, c.rates, sched, c.t);
        RateSpec closed_rates = c.rates;
        if (flip_beta_sign) {
            for (double& b : closed_rates.betas) {
                b = -b;
            }
        }
        for (std::size_t x = 0; x < pt.size(); ++x) {
            const auto xt = c.p0.decode_noisy(x);
            for (int i = 0; i < c.p0.length; ++i) {
                for (int v = 0; v < c.p0.vocab; ++v) {
                    const double closed = score_ratio_closed(c.p0, closed_rates, sched, c.t, xt, i, v);
                    double brute = 0.0;
                    if (xt[static_cast<std::size_t>(i)] == c.p0.mask_value()) {
                        auto swapped = xt;
                        swapped[static_cast<std::size_t>(i)] = v;
                        brute = pt[c.p0.encode_noisy(swapped)] / pt[x];
                    }
                    const double err = std::abs(closed - brute);
                    r.observed = std::max(r.observed, std::isfinite(err) ? err : 1e300);
                }
            }
        }
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = std::to_string(instances) + " random distributions, every (x_t, i, v)";
    if (flip_beta_sign) {
        r.detail += " [beta sign flipped on the closed-form side]";
    }
    return r;
}

PropertyResult check_schedule_composition() {
    PropertyResult r = make("t_i_matches_forward_kernel", "masking-schedule", "max_abs_error", 1e-12);
    for (double beta_ref : {0.5, 1.0, 2.0}) {
        const auto sched = NoiseSchedule::reference(beta_ref);
        for (double ratio : {0.25, 0.5, 1.0, 2.0, 4.0}) {
            for (int k = 1; k <= 9; ++k) {
                const double t = 0.1 * k;
                const double ti = t_i_from_t(t, ratio * beta_ref, beta_ref, 1e-300);
                const double mask = transition_closed(ratio * beta_ref, sched, t).mask;
                r.observed = std::max(r.observed, std::abs(ti - mask));
            }
        }
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = "beta_ref in {0.5,1,2}, beta/beta_ref in {0.25..4}, t in {0.1..0.9}";
    return r;
}

PropertyResult check_marginal_mask_frequency(std::uint64_t trials, std::uint64_t seed) {
    PropertyResult r = make("marginal_mask_frequency", "masking-schedule", "max_sigma", 4.0);
    const RandomStream root = root_stream(seed).substream("marginal");
    std::ostringstream detail;
    std::uint64_t idx = 0;
    for (double ratio : {0.5, 1.0, 2.0}) {
        RandomStream rng = root.substream(idx++);
        std::uint64_t masked = 0;
        for (std::uint64_t n = 0; n < trials; ++n) {
            double t = rng.uniform();
            while (t == 0.0) {
                t = rng.uniform();
            }
            masked += rng.bernoulli(t_i_from_t(t, ratio, 1.0)) ? 1 : 0;
        }
        const double freq = static_cast<double>(masked) / static_cast<double>(trials);
        const double expect = expected_mask_prob(ratio, 1.0);
        r.observed = std::max(r.observed, sigma_distance(freq, expect, trials));
        detail << "ratio=" << ratio << " freq=" << freq << " expected=" << expect << "; ";
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = "trials=" + std::to_string(trials) + " " + detail.str();
    return r;
}

PropertyResult check_schedule_monotone(std::uint64_t seed) {
    PropertyResult r = make("t_i_monotone_in_beta", "masking-schedule", "bool", 0.0);
    RandomStream rng = root_stream(seed).substream("monotone");
    std::size_t violations = 0;
    for (int k = 0; k < 10000; ++k) {
        const double a = rng.uniform(0.0, 5.0);
        const double b = rng.uniform(0.0, 5.0);
        const double ref = rng.uniform(0.1, 3.0);
        const double t = rng.uniform(1e-3, 1.0 - 1e-3);
        const double ta = t_i_from_t(t, a, ref);
        const double tb = t_i_from_t(t, b, ref);
        if ((a >= b && ta < tb) || (b >= a && tb < ta)) {
            ++violations;
        }
    }
    r.observed = static_cast<double>(violations);
    r.passed = violations == 0;
    r.detail = "10000 random (beta_a, beta_b, beta_ref, t)";
    return r;
}

PropertyResult check_plan_frequencies(std::uint64_t trials, std::uint64_t seed) {
    PropertyResult r = make("mask_plan_frequencies", "masking-schedule", "max_sigma", 4.0);
    RateSpec rates;
    rates.betas = {1.0, 2.0};
    rates.beta_ref = 1.0;
    const double t = 0.5;
    const MaskOptions opts;
    RandomStream rng = root_stream(seed).substream("plan");
    std::array<std::uint64_t, 2> counts{};
    for (std::uint64_t n = 0; n < trials; ++n) {
        const MaskPlan plan = sample_mask_plan(t, rates, 1, 3, rng, opts);
        counts[0] += plan.mask[1];
        counts[1] += plan.mask[2];
    }
    // Independent draws give (0.5, 0.75); the redraw policy conditions on at
    // least one mask, with the leftover mass forced onto the second token.
    const std::array<double, 2> ti{0.5, 0.75};
    const double none = (1.0 - ti[0]) * (1.0 - ti[1]);
    const double none_all = std::pow(none, opts.max_redraws + 1);
    const double scale = (1.0 - none_all) / (1.0 - none);
    const std::array<double, 2> expect{ti[0] * scale, ti[1] * scale + none_all};
    std::ostringstream detail;
    for (int i = 0; i < 2; ++i) {
        const double freq = static_cast<double>(counts[static_cast<std::size_t>(i)]) / static_cast<double>(trials);
        r.observed = std::max(r.observed, sigma_distance(freq, expect[static_cast<std::size_t>(i)], trials));
        detail << "token" << i << " freq=" << freq << " expected=" << expect[static_cast<std::size_t>(i)] << "; ";
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = detail.str();
    return r;
}

PropertyResult check_entropy_properties(std::uint64_t seed) {
    PropertyResult r = make("entropy_bounds_and_shift", "rate-estimators", "max_abs_error", 1e-10);
    RandomStream rng = root_stream(seed).substream("entropy");
    std::size_t out_of_range = 0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t v = 2 + rng.below(30);
        std::vector<double> row(v);
        for (double& z : row) {
            z = 4.0 * rng.normal();
        }
        const double h = entropy(row);
        if (h < 0.0 || h > std::log(static_cast<double>(v)) + 1e-12) {
            ++out_of_range;
        }
        const double c = rng.uniform(-50.0, 50.0);
        for (double& z : row) {
            z += c;
        }
        r.observed = std::max(r.observed, std::abs(entropy(row) - h));
    }
    r.passed = r.observed <= r.tolerance && out_of_range == 0;
    r.detail = "100 random rows; " + std::to_string(out_of_range) + " outside [0, ln V]";
    return r;
}

PropertyResult check_geometric_mass() {
    PropertyResult r = make("geometric_pmf_mass", "rate-estimators", "max_abs_error", 1e-15);
    double s = 0.0;
    for (int k = 0; k <= 200; ++k) {
        s += geometric_pmf(0.3, k);
    }
    r.observed = std::abs(s - 1.0);
    r.passed = r.observed <= r.tolerance;
    r.detail = "sum_{k=0}^{200} Geo(0.3, k)";
    return r;
}

PropertyResult check_uniform_reduction(std::uint64_t seed) {
    PropertyResult r = make("uniform_rates_reduce_to_sft", "losses", "bool", 0.0);
    const RandomStream root = root_stream(seed).substream("reduction");
    std::size_t mismatches = 0;
    for (std::uint64_t k = 0; k < 200; ++k) {
        RandomStream fixture = root.substream(k);
        const std::size_t prompt = 1 + fixture.below(4);
        const std::size_t answer = 1 + fixture.below(8);
        const Matrix logits = random_logits(prompt + answer, 7, 2.0, fixture);
        const auto labels = random_labels(prompt + answer, 7, fixture);
        const double t = sample_time(fixture);
        const double shared = fixture.uniform(0.1, 3.0);
        const std::vector<double> raw(answer, shared);

        RandomStream a = root.substream(k).substream("plan");
        RandomStream b = a;
        const MaskPlan plan_sft = sample_mask_plan(t, RateSpec::uniform(answer), prompt, prompt + answer, a);
        const MaskPlan plan_weft = sample_mask_plan(t, RateSpec::from_raw(raw), prompt, prompt + answer, b);
        const LossBreakdown ls = sft_loss(logits, labels, plan_sft);
        const LossBreakdown lw = weft_loss(logits, labels, plan_weft);
        const bool same = plan_sft.mask == plan_weft.mask && ls.loss == lw.loss && ls.weight == lw.weight &&
                          loss_logit_gradient(logits, labels, ls) == loss_logit_gradient(logits, labels, lw);
        mismatches += same ? 0 : 1;
    }
    r.observed = static_cast<double>(mismatches);
    r.passed = mismatches == 0;
    r.detail = "200 fixtures compared bit for bit (plan, loss, weights, logit gradient)";
    return r;
}

PropertyResult check_unbiasedness(int fixtures, std::uint64_t samples, std::uint64_t seed) {
    PropertyResult r = make("weft_loss_unbiased", "losses", "max_sigma", 3.0);
    const RandomStream root = root_stream(seed).substream("unbiased");
    std::ostringstream detail;
    for (int f = 0; f < fixtures; ++f) {
        RandomStream fixture = root.substream(static_cast<std::uint64_t>(f));
        const std::size_t prompt = 2;
        const std::size_t answer = 1 + fixture.below(4);
        const Matrix logits = random_logits(prompt + answer, 5, 1.5, fixture);
        const auto labels = random_labels(prompt + answer, 5, fixture);
        std::vector<double> raw(answer);
        for (double& b : raw) {
            b = fixture.uniform(0.05, 2.0);
        }
        const RateSpec rates = RateSpec::from_raw(raw);
        const double t = fixture.uniform(0.05, 0.95);
        const double oracle = bruteforce_expected_loss(logits, labels, prompt, rates, t);

        RandomStream rng = root.substream(static_cast<std::uint64_t>(f)).substream("mc");
        double mean = 0.0;
        double m2 = 0.0;
        for (std::uint64_t n = 1; n <= samples; ++n) {
            const MaskPlan plan = sample_mask_plan(t, rates, prompt, prompt + answer, rng);
            const double x = weft_loss(logits, labels, plan).loss;
            const double delta = x - mean;
            mean += delta / static_cast<double>(n);
            m2 += delta * (x - mean);
        }
        const double se = std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples));
        const double diff = std::abs(mean - oracle);
        const double z = se > 0.0 ? diff / se : (diff <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity());
        r.observed = std::max(r.observed, z);
        detail << "L=" << answer << " mc=" << mean << " exact=" << oracle << "; ";
    }
    r.passed = r.observed <= r.tolerance;
    r.detail = "samples=" + std::to_string(samples) + " " + detail.str();
    return r;
}

PropertyResult check_loss_nonnegative(std::uint64_t seed) {
    PropertyResult r = make("loss_nonnegative_weights_bounded", "losses", "bool", 0.0);
    const RandomStream root = root_stream(seed).substream("nonneg");
    const MaskOptions opts;
    std::size_t bad = 0;
    for (std::uint64_t k = 0; k < 500; ++k) {
        RandomStream rng = root.substream(k);
        const std::size_t prompt = 1 + rng.below(3);
        const std::size_t answer = 1 + rng.below(10);
        const Matrix logits = random_logits(prompt + answer, 6, 3.0, rng);
        const auto labels = random_labels(prompt + answer, 6, rng);
        std::vector<double> raw(answer);
        for (double& b : raw) {
            b = rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.0, 3.0);
        }
        const double t = sample_time(rng);
        const MaskPlan weft_plan = sample_mask_plan(t, RateSpec::from_raw(raw), prompt, prompt + answer, rng);
        const MaskPlan sft_plan = sample_mask_plan(t, RateSpec::uniform(answer), prompt, prompt + answer, rng);
        std::vector<double> w(answer);
        for (double& x : w) {
            x = rng.uniform(0.0, 2.0);
        }
        const std::array<LossBreakdown, 4> all{weft_loss(logits, labels, weft_plan),
                                               sft_loss(logits, labels, sft_plan),
                                               simple_weighted_loss(logits, labels, sft_plan, w),
                                               dream_loss(logits, labels, sft_plan, 0.3)};
        for (const auto& lb : all) {
            bad += (lb.loss >= 0.0 && std::isfinite(lb.loss)) ? 0 : 1;
        }
        for (double x : weft_plan.weights) {
            bad += (std::isfinite(x) && x <= 1.0 / opts.t_min * (1.0 + 1e-12)) ? 0 : 1;
        }
    }
    r.observed = static_cast<double>(bad);
    r.passed = bad == 0;
    r.detail = "500 random fixtures over all four loss kinds";
    return r;
}

VerifyReport run_verification(const VerifyOptions& opts) {
    const bool full = opts.profile == VerifyProfile::full;
    const std::uint64_t seed = opts.seed;
    VerifyReport rep;
    rep.profile = to_string(opts.profile);
    rep.seed = seed;
    const std::uint64_t mc = full ? 1000000 : 200000;

    rep.results.push_back(timed([&] { return check_ctmc_grid(mc, seed); }));
    rep.results.push_back(timed([&] { return check_matrix_exp(seed); }));
    rep.results.push_back(timed([&] { return check_transition_rows(seed); }));
    rep.results.push_back(timed([&] { return check_lemma2(50, seed); }));
    rep.results.push_back(timed([&] { return check_lemma1(50, seed, opts.inject_beta_sign_flip); }));
    rep.results.push_back(timed([&] { return check_schedule_composition(); }));
    rep.results.push_back(timed([&] { return check_marginal_mask_frequency(mc, seed); }));
    rep.results.push_back(timed([&] { return check_schedule_monotone(seed); }));
    rep.results.push_back(timed([&] { return check_plan_frequencies(mc, seed); }));
    rep.results.push_back(timed([&] { return check_entropy_properties(seed); }));
    rep.results.push_back(timed([] { return check_geometric_mass(); }));
    rep.results.push_back(timed([&] { return check_uniform_reduction(seed); }));
    rep.results.push_back(timed([&] { return check_unbiasedness(10, full ? 100000 : 20000, seed); }));
    rep.results.push_back(timed([&] { return check_loss_nonnegative(seed); }));
    return rep;
}

}  // namespace weft
