#pragma once

// Helpers shared by the unit and acceptance binaries.

#include <algorithm>
#include <cmath>
#include <vector>

#include "weft/denoiser.hpp"
#include "weft/losses.hpp"
#include "weft/rng.hpp"

namespace weft::testing {

// A fixed masked-denoising problem: tokens fed to the model, labels, a mask
// plan and the loss kind applied to the model's logits. Rates and weights
// are frozen, so the loss is a function of the parameters only.
struct LossProblem {
    std::vector<int> input;
    std::vector<int> labels;
    MaskPlan plan;
    LossKind kind = LossKind::weft;
    std::vector<double> answer_weights;
    double dream_p = 0.3;
};

inline LossBreakdown problem_loss(const LossProblem& pb, const Matrix& logits) {
    switch (pb.kind) {
    case LossKind::sft: return sft_loss(logits, pb.labels, pb.plan);
    case LossKind::weft: return weft_loss(logits, pb.labels, pb.plan);
    case LossKind::simple_weight: return simple_weighted_loss(logits, pb.labels, pb.plan, pb.answer_weights);
    case LossKind::dream: return dream_loss(logits, pb.labels, pb.plan, pb.dream_p);
    }
    return {};
}

inline double problem_value(const Denoiser& model, const LossProblem& pb) {
    return problem_loss(pb, model.forward(pb.input)).loss;
}

inline std::vector<double> problem_gradient(const Denoiser& model, const LossProblem& pb) {
    Denoiser::Activations tape;
    const Matrix logits = model.forward(pb.input, tape);
    const LossBreakdown lb = problem_loss(pb, logits);
    std::vector<double> grad(model.parameter_count(), 0.0);
    model.backward(tape, loss_logit_gradient(logits, pb.labels, lb), grad);
    return grad;
}

// Random problem of the given kind over a vocabulary with mask id vocab-1.
inline LossProblem random_problem(const DenoiserConfig& cfg, LossKind kind, RandomStream rng,
                                  std::size_t prompt_len = 5, std::size_t answer_len = 6) {
    LossProblem pb;
    pb.kind = kind;
    const std::size_t n = prompt_len + answer_len;
    pb.labels.resize(n);
    for (int& y : pb.labels) {
        y = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size - 1)));
    }
    std::vector<double> raw(answer_len);
    for (double& b : raw) {
        b = rng.uniform(0.2, 2.0);
    }
    const RateSpec rates = kind == LossKind::weft ? RateSpec::from_raw(raw) : RateSpec::uniform(answer_len);
    const double t = rng.uniform(0.3, 0.9);
    pb.plan = sample_mask_plan(t, rates, prompt_len, n, rng);
    pb.input = pb.labels;
    for (std::size_t i = 0; i < n; ++i) {
        if (pb.plan.mask[i]) {
            pb.input[i] = cfg.mask_token_id;
        }
    }
    pb.answer_weights.resize(answer_len);
    for (double& w : pb.answer_weights) {
        w = rng.uniform(0.1, 2.0);
    }
    return pb;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t comparisons = 0;
};

// Central differences against the analytic gradient along random
// directions and along sampled single coordinates. The relative error of a
// comparison is |fd - an| / max(|fd|, |an|, floor); the floor keeps
// coordinates whose true derivative is ~0 from dividing roundoff by zero.
inline GradCheck gradient_check(const Denoiser& model, const LossProblem& pb, RandomStream rng, int directions = 4,
                                int coordinates = 24, double eps = 1e-5, double floor = 1e-5) {
    GradCheck out;
    const std::vector<double> an = problem_gradient(model, pb);
    const auto base = model.parameters();
    const std::vector<double> theta(base.begin(), base.end());
    Denoiser probe(model.config(), theta);

    auto eval_at = [&](const std::vector<double>& dir, double step) {
        auto p = probe.parameters();
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = theta[i] + step * dir[i];
        }
        return problem_value(probe, pb);
    };
    auto record = [&](double fd, double analytic) {
        const double denom = std::max({std::abs(fd), std::abs(analytic), floor});
        out.max_rel_error = std::max(out.max_rel_error, std::abs(fd - analytic) / denom);
        ++out.comparisons;
    };

    std::vector<double> dir(theta.size(), 0.0);
    for (int d = 0; d < directions; ++d) {
        double norm = 0.0;
        for (double& x : dir) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        double analytic = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i) {
            dir[i] /= norm;
            analytic += dir[i] * an[i];
        }
        record((eval_at(dir, eps) - eval_at(dir, -eps)) / (2 * eps), analytic);
    }
    // One coordinate from each tensor first, then uniform picks.
    std::vector<std::size_t> coords;
    for (const auto& info : model.tensors()) {
        coords.push_back(info.offset + rng.below(info.size));
    }
    while (coords.size() < model.tensors().size() + static_cast<std::size_t>(coordinates)) {
        coords.push_back(rng.below(theta.size()));
    }
    std::fill(dir.begin(), dir.end(), 0.0);
    for (std::size_t c : coords) {
        dir[c] = 1.0;
        record((eval_at(dir, eps) - eval_at(dir, -eps)) / (2 * eps), an[c]);
        dir[c] = 0.0;
    }
    return out;
}

}  // namespace weft::testing
