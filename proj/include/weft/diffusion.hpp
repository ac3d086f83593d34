#pragma once

// Absorbing-state continuous-time diffusion with per-position masking rates,
// plus exact enumeration oracles over tiny joint distributions.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "weft/rng.hpp"

namespace weft {

// Largest admissible diffusion time. t = 1 is the fully absorbed limit where
// the default schedule diverges.
inline constexpr double kMaxTime = 1.0 - 1e-9;
inline constexpr double kBetaFloor = 1e-6;

enum class ScheduleKind {
    // fbar(t) = -ln(1 - t) / beta_ref: a token at the reference rate is
    // masked with probability exactly t.
    reference_log,
    // fbar(t) = scale * t.
    linear,
};

class NoiseSchedule {
public:
    static NoiseSchedule reference(double beta_ref);
    static NoiseSchedule linear(double scale);

    ScheduleKind kind() const noexcept { return kind_; }
    double parameter() const noexcept { return param_; }

    // Accumulated noise fbar(t) = integral of f over [0, t].
    double accumulated(double t) const;
    // Instantaneous speed f(t).
    double speed(double t) const;

private:
    NoiseSchedule(ScheduleKind kind, double param) : kind_(kind), param_(param) {}
    ScheduleKind kind_;
    double param_;
};

struct RateSpec {
    std::vector<double> betas;
    double beta_ref = 1.0;
    // Number of raw rates that were raised to the floor.
    std::size_t floored = 0;

    // beta_ref is the mean of the raw rates; the floor is applied afterwards.
    static RateSpec from_raw(std::span<const double> raw, double floor = kBetaFloor);
    static RateSpec uniform(std::size_t n);
};

struct TransitionKernel {
    double survive = 1.0;
    double mask = 0.0;
};

// Closed form of p_{t|0} for one token with rate beta.
TransitionKernel transition_closed(double beta, const NoiseSchedule& sched, double t);

// Small dense square matrix used by the rate-matrix oracle.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> a;

    explicit SquareMatrix(std::size_t dim = 0) : n(dim), a(dim * dim, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
    static SquareMatrix identity(std::size_t dim);
};

// Rate matrix with one transient state per entry of `betas` and a final
// absorbing state: Q(k,k) = -beta_k, Q(k,last) = beta_k, last row zero.
SquareMatrix absorbing_rate_matrix(std::span<const double> betas);

// exp(Q s) by scaling-and-squaring of a truncated Taylor series.
// Q must be conservative (rows sum to zero within 1e-12) and at most 8x8.
SquareMatrix matrix_exp_oracle(const SquareMatrix& q, double s);

// Simulates one token on a uniform grid of n_steps sub-intervals of [0, t].
class CtmcSimulator {
public:
    CtmcSimulator(double beta, const NoiseSchedule& sched, double t, int n_steps);
    // True when the token ended in the absorbing mask state.
    bool run(RandomStream& rng) const;
    // Fraction of `trials` independent runs that ended masked.
    double mask_fraction(std::uint64_t trials, RandomStream& rng) const;

private:
    std::vector<double> step_absorb_;
};

bool ctmc_simulate(double beta, const NoiseSchedule& sched, double t, int n_steps, RandomStream& rng);

// Explicit joint distribution over length-d sequences of a V-token
// vocabulary. Sequences are indexed in base V, position 0 most significant.
struct TinyDistribution {
    int length = 0;
    int vocab = 0;
    std::vector<double> probs;

    static TinyDistribution random(int length, int vocab, RandomStream& rng);
    void validate() const;
    std::size_t num_clean() const { return probs.size(); }
    // Number of noisy sequences: each position holds a token or the mask.
    std::size_t num_noisy() const;
    int mask_value() const { return vocab; }

    std::vector<int> decode_noisy(std::size_t index) const;
    std::size_t encode_noisy(std::span<const int> x) const;
    // Probability that the positions not equal to the mask take the given
    // values under p_0.
    double marginal(std::span<const int> x) const;
};

// p_t over all noisy sequences by summing p_{t|0}(x_t|x_0) p_0(x_0).
std::vector<double> pt_marginal_exact(const TinyDistribution& p0, const RateSpec& rates,
                                      const NoiseSchedule& sched, double t);

// Product form: prod_masked (1 - e^{-beta fbar}) prod_unmasked e^{-beta fbar} p_0(unmasked).
double pt_product_formula(const TinyDistribution& p0, const RateSpec& rates, const NoiseSchedule& sched,
                          double t, std::span<const int> xt);

// Ratio p_t(x_t with position i set to v) / p_t(x_t) from the closed form.
// Zero when position i is not masked.
double score_ratio_closed(const TinyDistribution& p0, const RateSpec& rates, const NoiseSchedule& sched,
                          double t, std::span<const int> xt, int position, int value);

}  // namespace weft
