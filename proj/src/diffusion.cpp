#include "weft/diffusion.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace weft {

namespace {

void check_time(double t, const char* who) {
    if (!(t >= 0.0) || t > kMaxTime) {
        throw std::domain_error(std::string(who) + ": t must lie in [0, 1 - 1e-9], got " + std::to_string(t));
    }
}

SquareMatrix multiply(const SquareMatrix& x, const SquareMatrix& y) {
    SquareMatrix z(x.n);
    for (std::size_t i = 0; i < x.n; ++i) {
        for (std::size_t k = 0; k < x.n; ++k) {
            const double xik = x(i, k);
            for (std::size_t j = 0; j < x.n; ++j) {
                z(i, j) += xik * y(k, j);
            }
        }
    }
    return z;
}

}  // namespace

NoiseSchedule NoiseSchedule::reference(double beta_ref) {
    if (!(beta_ref > 0.0)) {
        throw std::invalid_argument("NoiseSchedule: beta_ref must be positive");
    }
    return {ScheduleKind::reference_log, beta_ref};
}

NoiseSchedule NoiseSchedule::linear(double scale) {
    if (!(scale >= 0.0)) {
        throw std::invalid_argument("NoiseSchedule: scale must be nonnegative");
    }
    return {ScheduleKind::linear, scale};
}

double NoiseSchedule::accumulated(double t) const {
    check_time(t, "NoiseSchedule::accumulated");
    switch (kind_) {
    case ScheduleKind::reference_log:
        return -std::log1p(-t) / param_;
    case ScheduleKind::linear:
        return param_ * t;
    }
    return 0.0;
}

double NoiseSchedule::speed(double t) const {
    check_time(t, "NoiseSchedule::speed");
    switch (kind_) {
    case ScheduleKind::reference_log:
        return 1.0 / ((1.0 - t) * param_);
    case ScheduleKind::linear:
        return param_;
    }
    return 0.0;
}

RateSpec RateSpec::from_raw(std::span<const double> raw, double floor) {
    if (raw.empty()) {
        throw std::invalid_argument("RateSpec: at least one rate is required");
    }
    RateSpec spec;
    spec.betas.assign(raw.begin(), raw.end());
    bool all_equal = true;
    for (double b : raw) {
        if (!std::isfinite(b) || b < 0.0) {
            throw std::invalid_argument("RateSpec: rates must be finite and nonnegative");
        }
        all_equal = all_equal && b == raw.front();
    }
    // Equal rates keep beta_ref bit-identical to them so t_i == t exactly.
    spec.beta_ref = all_equal ? raw.front()
                              : std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(raw.size());
    if (spec.beta_ref < floor) {
        spec.beta_ref = floor;
    }
    for (double& b : spec.betas) {
        if (b < floor) {
            b = floor;
            ++spec.floored;
        }
    }
    return spec;
}

RateSpec RateSpec::uniform(std::size_t n) {
    RateSpec spec;
    spec.betas.assign(n, 1.0);
    spec.beta_ref = 1.0;
    return spec;
}

TransitionKernel transition_closed(double beta, const NoiseSchedule& sched, double t) {
    if (!(beta >= 0.0)) {
        throw std::domain_error("transition_closed: beta must be nonnegative");
    }
    const double survive = std::exp(-beta * sched.accumulated(t));
    return {survive, 1.0 - survive};
}

SquareMatrix SquareMatrix::identity(std::size_t dim) {
    SquareMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

SquareMatrix absorbing_rate_matrix(std::span<const double> betas) {
    const std::size_t n = betas.size() + 1;
    SquareMatrix q(n);
    for (std::size_t k = 0; k < betas.size(); ++k) {
        q(k, k) = -betas[k];
        q(k, n - 1) = betas[k];
    }
    return q;
}

SquareMatrix matrix_exp_oracle(const SquareMatrix& q, double s) {
    if (q.n == 0 || q.n > 8) {
        throw std::invalid_argument("matrix_exp_oracle: dimension must be in [1, 8]");
    }
    if (!(s >= 0.0)) {
        throw std::invalid_argument("matrix_exp_oracle: s must be nonnegative");
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < q.n; ++i) {
        double row_sum = 0.0;
        double abs_sum = 0.0;
        for (std::size_t j = 0; j < q.n; ++j) {
            if (i != j && q(i, j) < 0.0) {
                throw std::invalid_argument("matrix_exp_oracle: negative off-diagonal rate");
            }
            row_sum += q(i, j);
            abs_sum += std::abs(q(i, j));
        }
        if (std::abs(row_sum) > 1e-12) {
            throw std::invalid_argument("matrix_exp_oracle: rows of Q must sum to zero");
        }
        norm = std::max(norm, abs_sum * s);
    }

    // Scale so ||Q s / 2^k|| <= 1/2, then square k times.
    int squarings = 0;
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    }
    const double scale = s / std::ldexp(1.0, squarings);

    SquareMatrix a(q.n);
    for (std::size_t i = 0; i < q.a.size(); ++i) {
        a.a[i] = q.a[i] * scale;
    }
    // 20 terms of the series: remainder below (1/2)^21 / 21!.
    SquareMatrix result = SquareMatrix::identity(q.n);
    SquareMatrix term = SquareMatrix::identity(q.n);
    for (int k = 1; k <= 20; ++k) {
        term = multiply(term, a);
        for (double& v : term.a) {
            v /= k;
        }
        for (std::size_t i = 0; i < result.a.size(); ++i) {
            result.a[i] += term.a[i];
        }
    }
    for (int k = 0; k < squarings; ++k) {
        result = multiply(result, result);
    }
    return result;
}

CtmcSimulator::CtmcSimulator(double beta, const NoiseSchedule& sched, double t, int n_steps) {
    if (n_steps < 100) {
        throw std::invalid_argument("CtmcSimulator: n_steps must be at least 100");
    }
    if (!(beta >= 0.0)) {
        throw std::domain_error("CtmcSimulator: beta must be nonnegative");
    }
    check_time(t, "CtmcSimulator");
    step_absorb_.resize(static_cast<std::size_t>(n_steps));
    double prev = sched.accumulated(0.0);
    for (int k = 0; k < n_steps; ++k) {
        const double next = sched.accumulated(t * static_cast<double>(k + 1) / n_steps);
        // Hazard is constant on the sub-interval, so the step is exact.
        step_absorb_[static_cast<std::size_t>(k)] = -std::expm1(-beta * (next - prev));
        prev = next;
    }
}

bool CtmcSimulator::run(RandomStream& rng) const {
    for (double p : step_absorb_) {
        if (rng.uniform() < p) {
            return true;
        }
    }
    return false;
}

double CtmcSimulator::mask_fraction(std::uint64_t trials, RandomStream& rng) const {
    std::uint64_t masked = 0;
    for (std::uint64_t i = 0; i < trials; ++i) {
        masked += run(rng) ? 1 : 0;
    }
    return trials == 0 ? 0.0 : static_cast<double>(masked) / static_cast<double>(trials);
}

bool ctmc_simulate(double beta, const NoiseSchedule& sched, double t, int n_steps, RandomStream& rng) {
    return CtmcSimulator(beta, sched, t, n_steps).run(rng);
}

TinyDistribution TinyDistribution::random(int length, int vocab, RandomStream& rng) {
    TinyDistribution d;
    d.length = length;
    d.vocab = vocab;
    std::size_t n = 1;
    for (int i = 0; i < length; ++i) {
        n *= static_cast<std::size_t>(vocab);
    }
    d.probs.resize(n);
    double total = 0.0;
    for (double& p : d.probs) {
        // Bounded away from zero so every conditional is defined.
        p = 0.05 + rng.uniform();
        total += p;
    }
    for (double& p : d.probs) {
        p /= total;
    }
    d.validate();
    return d;
}

void TinyDistribution::validate() const {
    if (length < 1 || length > 4 || vocab < 2 || vocab > 4) {
        throw std::invalid_argument("TinyDistribution: need 1 <= d <= 4 and 2 <= V <= 4");
    }
    std::size_t expect = 1;
    for (int i = 0; i < length; ++i) {
        expect *= static_cast<std::size_t>(vocab);
    }
    if (probs.size() != expect) {
        throw std::invalid_argument("TinyDistribution: probability table has wrong size");
    }
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) {
            throw std::invalid_argument("TinyDistribution: negative probability");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw std::invalid_argument("TinyDistribution: probabilities must sum to 1");
    }
}

std::size_t TinyDistribution::num_noisy() const {
    std::size_t n = 1;
    for (int i = 0; i < length; ++i) {
        n *= static_cast<std::size_t>(vocab + 1);
    }
    return n;
}

std::vector<int> TinyDistribution::decode_noisy(std::size_t index) const {
    std::vector<int> x(static_cast<std::size_t>(length));
    for (int i = length - 1; i >= 0; --i) {
        x[static_cast<std::size_t>(i)] = static_cast<int>(index % static_cast<std::size_t>(vocab + 1));
        index /= static_cast<std::size_t>(vocab + 1);
    }
    return x;
}

std::size_t TinyDistribution::encode_noisy(std::span<const int> x) const {
    std::size_t index = 0;
    for (int v : x) {
        index = index * static_cast<std::size_t>(vocab + 1) + static_cast<std::size_t>(v);
    }
    return index;
}

double TinyDistribution::marginal(std::span<const int> x) const {
    double total = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        std::size_t rest = c;
        bool match = true;
        for (int i = length - 1; i >= 0 && match; --i) {
            const int v = static_cast<int>(rest % static_cast<std::size_t>(vocab));
            rest /= static_cast<std::size_t>(vocab);
            const int want = x[static_cast<std::size_t>(i)];
            match = want == mask_value() || want == v;
        }
        if (match) {
            total += probs[c];
        }
    }
    return total;
}

std::vector<double> pt_marginal_exact(const TinyDistribution& p0, const RateSpec& rates,
                                      const NoiseSchedule& sched, double t) {
    p0.validate();
    const auto d = static_cast<std::size_t>(p0.length);
    if (rates.betas.size() != d) {
        throw std::invalid_argument("pt_marginal_exact: one rate per position is required");
    }
    std::vector<TransitionKernel> kernels;
    kernels.reserve(d);
    for (double b : rates.betas) {
        kernels.push_back(transition_closed(b, sched, t));
    }

    std::vector<double> pt(p0.num_noisy(), 0.0);
    std::vector<int> x0(d);
    for (std::size_t c = 0; c < p0.num_clean(); ++c) {
        std::size_t rest = c;
        for (std::size_t i = d; i-- > 0;) {
            x0[i] = static_cast<int>(rest % static_cast<std::size_t>(p0.vocab));
            rest /= static_cast<std::size_t>(p0.vocab);
        }
        // Each position independently keeps its value or becomes the mask.
        for (std::size_t pattern = 0; pattern < (std::size_t{1} << d); ++pattern) {
            double prob = p0.probs[c];
            std::size_t index = 0;
            for (std::size_t i = 0; i < d; ++i) {
                const bool masked = (pattern >> i) & 1U;
                prob *= masked ? kernels[i].mask : kernels[i].survive;
                index = index * static_cast<std::size_t>(p0.vocab + 1) +
                        static_cast<std::size_t>(masked ? p0.mask_value() : x0[i]);
            }
            pt[index] += prob;
        }
    }
    return pt;
}

double pt_product_formula(const TinyDistribution& p0, const RateSpec& rates, const NoiseSchedule& sched,
                          double t, std::span<const int> xt) {
    if (xt.size() != static_cast<std::size_t>(p0.length) || rates.betas.size() != xt.size()) {
        throw std::invalid_argument("pt_product_formula: length mismatch");
    }
    const double fbar = sched.accumulated(t);
    double prob = 1.0;
    for (std::size_t i = 0; i < xt.size(); ++i) {
        const double survive = std::exp(-rates.betas[i] * fbar);
        prob *= xt[i] == p0.mask_value() ? 1.0 - survive : survive;
    }
    return prob * p0.marginal(xt);
}

double score_ratio_closed(const TinyDistribution& p0, const RateSpec& rates, const NoiseSchedule& sched,
                          double t, std::span<const int> xt, int position, int value) {
    if (position < 0 || position >= p0.length || xt.size() != static_cast<std::size_t>(p0.length)) {
        throw std::out_of_range("score_ratio_closed: position out of range");
    }
    if (value < 0 || value >= p0.vocab) {
        throw std::invalid_argument("score_ratio_closed: replacement must be a clean token");
    }
    const auto i = static_cast<std::size_t>(position);
    if (xt[i] != p0.mask_value()) {
        return 0.0;
    }
    const double survive = std::exp(-rates.betas[i] * sched.accumulated(t));
    std::vector<int> with_value(xt.begin(), xt.end());
    with_value[i] = value;
    const double cond = p0.marginal(with_value) / p0.marginal(xt);
    return survive / (1.0 - survive) * cond;
}

}  // namespace weft
