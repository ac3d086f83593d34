#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "weft/trainer.hpp"

using namespace weft;

namespace {

DenoiserConfig tiny_model() {
    DenoiserConfig c;
    c.d_model = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_seq_len = 32;
    c.seed = 5;
    return c;
}

TrainConfig tiny_train(LossKind loss, SchemeKind scheme) {
    TrainConfig t;
    t.loss = loss;
    t.scheme.kind = scheme;
    t.batch_size = 2;
    t.grad_accum = 2;
    t.max_steps = 6;
    t.seed = 13;
    return t;
}

std::vector<TaskInstance> modadd_data(std::size_t n) {
    TaskSpec spec;
    return generate_dataset(spec, 13, Split::train, n);
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.clip_norm = 0.0;
    CHECK_THROWS(t.validate());
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS(t.validate());
    t = TrainConfig{};
    t.scheme.kind = SchemeKind::dream_geo;
    CHECK_THROWS(t.validate());
    t.loss = LossKind::dream;
    CHECK_NOTHROW(t.validate());
    CHECK(TrainConfig{}.examples_per_step() == 32);
}

TEST_CASE("forward passes per example") {
    const auto data = modadd_data(16);
    struct Arm {
        LossKind loss;
        SchemeKind scheme;
        double per_example;
    };
    for (const Arm arm : {Arm{LossKind::weft, SchemeKind::sqrt_entropy, 2.0}, Arm{LossKind::weft, SchemeKind::nll, 2.0},
                          Arm{LossKind::weft, SchemeKind::uniform, 1.0}, Arm{LossKind::sft, SchemeKind::uniform, 1.0},
                          Arm{LossKind::simple_weight, SchemeKind::sqrt_entropy, 2.0},
                          Arm{LossKind::simple_weight, SchemeKind::uniform, 1.0},
                          Arm{LossKind::dream, SchemeKind::uniform, 1.0}}) {
        Denoiser model(tiny_model());
        Trainer tr(model, tiny_train(arm.loss, arm.scheme), data);
        while (!tr.done()) {
            const TrainRecord rec = tr.step();
            CHECK(rec.forward_per_example() == arm.per_example);
            CHECK(rec.examples == 4);
            CHECK_FALSE(rec.skipped);
        }
    }
}

TEST_CASE("uniform-rate weft reproduces sft bit for bit") {
    const auto data = modadd_data(24);
    Denoiser a(tiny_model());
    Denoiser b(tiny_model());
    Trainer ta(a, tiny_train(LossKind::weft, SchemeKind::uniform), data);
    Trainer tb(b, tiny_train(LossKind::sft, SchemeKind::uniform), data);
    while (!ta.done()) {
        const auto ra = ta.step();
        const auto rb = tb.step();
        CHECK(ra.loss == rb.loss);
        CHECK(ra.grad_norm == rb.grad_norm);
        CHECK(ra.metrics_json() == rb.metrics_json());
    }
    CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
    CHECK(ta.optimizer().v == tb.optimizer().v);
}

TEST_CASE("explicit step functions agree with the dispatcher") {
    const auto data = modadd_data(4);
    const RandomStream rng = root_stream(3).substream("masking").substream(0);
    Denoiser m1(tiny_model()), m2(tiny_model());
    auto o1 = OptimizerState::for_model(m1, {});
    auto o2 = OptimizerState::for_model(m2, {});
    TrainConfig cfg = tiny_train(LossKind::weft, SchemeKind::uniform);
    const auto r1 = train_step_weft(m1, o1, data, cfg, rng, 1e-3);
    const auto r2 = train_step_sft(m2, o2, data, cfg, rng, 1e-3);
    CHECK(r1.loss == r2.loss);
    CHECK(r1.forward_passes == 4);
    CHECK(std::equal(m1.parameters().begin(), m1.parameters().end(), m2.parameters().begin()));
}

TEST_CASE("rates carry no gradient") {
    // The update with rates from pass 1 equals the update computed with the
    // same rates supplied as constants to a single-pass loss.
    const auto data = modadd_data(1);
    const Denoiser model(tiny_model());
    TrainConfig cfg = tiny_train(LossKind::weft, SchemeKind::sqrt_entropy);
    const RandomStream rng(77);
    std::vector<double> g1(model.parameter_count(), 0.0);
    const ExampleOutcome out = example_gradient(model, data[0], cfg, rng, 1.0, g1);

    RandomStream replay = rng;
    sample_time(replay, cfg.t_lo);
    const MaskPlan plan = sample_mask_plan(out.plan.t, out.rates, data[0].prompt.size(), data[0].length(), replay,
                                           cfg.mask_options());
    CHECK(plan.mask == out.plan.mask);
    auto seq = data[0].sequence();
    auto noisy = seq;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (plan.mask[i]) {
            noisy[i] = model.config().mask_token_id;
        }
    }
    Denoiser::Activations tape;
    const Matrix logits = model.forward(noisy, tape);
    const auto lb = weft_loss(logits, seq, plan);
    std::vector<double> g2(model.parameter_count(), 0.0);
    model.backward(tape, loss_logit_gradient(logits, seq, lb), g2);
    CHECK(lb.loss == out.breakdown.loss);
    CHECK(g1 == g2);
}

TEST_CASE("training is deterministic and resumable") {
    const auto data = modadd_data(40);
    TrainConfig cfg = tiny_train(LossKind::weft, SchemeKind::sqrt_entropy);
    cfg.max_steps = 10;

    Denoiser a(tiny_model());
    Trainer ta(a, cfg, data);
    std::vector<double> losses;
    while (!ta.done()) {
        losses.push_back(ta.step().loss);
    }

    Denoiser b(tiny_model());
    Trainer tb(b, cfg, data);
    for (int s = 0; s < 5; ++s) {
        CHECK(tb.step().loss == losses[static_cast<std::size_t>(s)]);
    }
    const auto path = std::filesystem::temp_directory_path() / "weft_test_resume.bin";
    checkpoint_save(path, b, tb.optimizer(), R"({"step":5})");

    Checkpoint ck = checkpoint_load(path);
    Denoiser c(ck.config, ck.params);
    Trainer tc(c, cfg, data);
    tc.restore(ck.optimizer, 5);
    for (int s = 5; s < 10; ++s) {
        CHECK(tc.step().loss == losses[static_cast<std::size_t>(s)]);
    }
    CHECK(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
    std::filesystem::remove(path);
}

TEST_CASE("schedule and batching") {
    const auto data = modadd_data(10);
    TrainConfig cfg = tiny_train(LossKind::sft, SchemeKind::uniform);
    cfg.max_steps = 0;
    cfg.epochs = 3;
    Denoiser model(tiny_model());
    Trainer tr(model, cfg, data);
    CHECK(tr.total_steps() == 8);  // ceil(30 / 4)
    CHECK(tr.lr_at(0) == cfg.lr);
    CHECK(tr.lr_at(4) == doctest::Approx(cfg.lr * 0.5));

    // Each epoch visits every example once.
    std::multiset<std::string> seen;
    for (std::uint64_t s = 0; s < 5; ++s) {
        for (const auto& inst : tr.batch_for(s)) {
            seen.insert(Vocab::standard().decode(inst.prompt));
        }
    }
    std::multiset<std::string> first_two_epochs;
    for (int e = 0; e < 2; ++e) {
        for (const auto& inst : data) {
            first_two_epochs.insert(Vocab::standard().decode(inst.prompt));
        }
    }
    CHECK(seen == first_two_epochs);
}

TEST_CASE("gradnorm study and bench") {
    const auto data = modadd_data(32);
    TrainConfig cfg = tiny_train(LossKind::weft, SchemeKind::sqrt_entropy);
    const std::vector<SchemeKind> schemes{SchemeKind::uniform, SchemeKind::sqrt_entropy};
    const auto table = gradnorm_study(tiny_model(), data, cfg, schemes, 4);
    CHECK(table.size() == 2);
    CHECK(table.at("uniform").norms.size() == 4);
    CHECK(table.at("sqrt_entropy").max >= table.at("sqrt_entropy").median);

    const BenchReport rep = run_bench(tiny_model(), data, cfg, 3);
    CHECK(rep.forward_ratio_exact);
    CHECK(rep.weft_forward == 2 * rep.sft_forward);
    CHECK(rep.sft_forward == 3 * cfg.examples_per_step());

    const BenchReport empty = run_bench(tiny_model(), {}, cfg, 0);
    CHECK(empty.steps == 0);
    CHECK(empty.sft_forward == 0);
    CHECK(empty.forward_ratio_exact);
}
