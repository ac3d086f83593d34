#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "weft/denoiser.hpp"
#include "weft/diffusion.hpp"
#include "weft/rates.hpp"
#include "weft/sampler.hpp"
#include "weft/schedule.hpp"
#include "weft/tasks.hpp"
#include "weft/trainer.hpp"
#include "weft/verify.hpp"

namespace py = pybind11;
using namespace weft;

namespace {

// JSON crosses the boundary as text; the Python side parses it.
std::string verify_json(const std::string& profile, std::uint64_t seed, bool inject) {
    VerifyOptions opts;
    opts.profile = parse_profile(profile);
    opts.seed = seed;
    opts.inject_beta_sign_flip = inject;
    return run_verification(opts).to_json().dump();
}

std::vector<std::vector<double>> to_rows(const Matrix& m) {
    std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out[i][j] = m(i, j);
        }
    }
    return out;
}

std::string dataset_json(const std::string& task, std::uint64_t seed, const std::string& split, std::size_t n,
                         int modulus) {
    TaskSpec spec;
    spec.kind = parse_task(task);
    spec.modulus = modulus;
    const auto data = generate_dataset(spec, seed, split == "eval" ? Split::eval : Split::train, n);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& inst : data) {
        j.push_back(to_json(inst));
    }
    return j.dump();
}

struct Model {
    Denoiser net;

    explicit Model(const DenoiserConfig& cfg) : net(cfg) {}

    std::vector<std::vector<double>> logits(const std::vector<int>& tokens) const { return to_rows(net.forward(tokens)); }

    std::vector<int> generate(const std::vector<int>& prompt, std::size_t gen_length, std::size_t block_length,
                              std::size_t steps) const {
        return decode(net, prompt, DecodeConfig{gen_length, block_length, steps, 0});
    }

    // Trains on a generated task and returns the per-step metrics as JSON lines.
    std::vector<std::string> train(const std::string& task, const std::string& loss, const std::string& scheme,
                                   std::size_t steps, int batch_size, std::uint64_t seed) {
        TaskSpec spec;
        spec.kind = parse_task(task);
        TrainConfig cfg;
        cfg.loss = parse_loss_kind(loss);
        cfg.scheme.kind = parse_scheme(scheme);
        cfg.max_steps = steps;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        Trainer trainer(net, cfg, generate_dataset(spec, seed, Split::train, 256));
        std::vector<std::string> lines;
        while (!trainer.done()) {
            lines.push_back(trainer.step().metrics_json().dump());
        }
        return lines;
    }
};

}  // namespace

PYBIND11_MODULE(_weft, m) {
    m.doc() = "Entropy-weighted fine-tuning for masked diffusion language models";

    m.def("verify_json", &verify_json, py::arg("profile") = "fast", py::arg("seed") = 20240601,
          py::arg("inject_beta_sign_flip") = false);

    m.def("t_i_from_t", &t_i_from_t, py::arg("t"), py::arg("beta_i"), py::arg("beta_ref"),
          py::arg("t_min") = MaskOptions{}.t_min);
    m.def("expected_mask_prob", &expected_mask_prob, py::arg("beta_i"), py::arg("beta_ref"));
    m.def(
        "entropy", [](const std::vector<double>& logits) { return entropy(logits); }, py::arg("logits"));
    m.def(
        "rate",
        [](const std::vector<double>& logits, const std::string& scheme, std::optional<int> target) {
            WeightScheme s;
            s.kind = parse_scheme(scheme);
            return beta_from_logits(logits, s, target);
        },
        py::arg("logits"), py::arg("scheme") = "sqrt_entropy", py::arg("target") = std::nullopt);
    m.def(
        "transition",
        [](double beta, double t, double beta_ref) {
            const auto k = transition_closed(beta, NoiseSchedule::reference(beta_ref), t);
            return std::make_pair(k.survive, k.mask);
        },
        py::arg("beta"), py::arg("t"), py::arg("beta_ref") = 1.0);
    m.def(
        "mask_plan",
        [](double t, const std::vector<double>& raw_rates, std::size_t prompt_len, std::uint64_t seed) {
            RandomStream rng(seed);
            const auto plan =
                sample_mask_plan(t, RateSpec::from_raw(raw_rates), prompt_len, prompt_len + raw_rates.size(), rng);
            py::dict d;
            d["t_i"] = plan.t_i;
            d["mask"] = std::vector<int>(plan.mask.begin(), plan.mask.end());
            d["weights"] = plan.weights;
            d["redraws"] = plan.redraws;
            d["forced"] = plan.forced;
            return d;
        },
        py::arg("t"), py::arg("raw_rates"), py::arg("prompt_len"), py::arg("seed") = 0);

    m.def("dataset_json", &dataset_json, py::arg("task"), py::arg("seed"), py::arg("split") = "train",
          py::arg("n") = 8, py::arg("modulus") = 10);
    m.def(
        "check_answer",
        [](const std::string& instance_json, const std::vector<int>& answer) {
            return verify(instance_from_json(nlohmann::json::parse(instance_json)), answer);
        },
        py::arg("instance_json"), py::arg("answer"));
    m.def(
        "encode", [](const std::string& text) { return Vocab::standard().encode(text); }, py::arg("text"));
    m.def(
        "decode_tokens", [](const std::vector<int>& ids) { return Vocab::standard().decode(ids); }, py::arg("ids"));

    py::class_<DenoiserConfig>(m, "DenoiserConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &DenoiserConfig::vocab_size)
        .def_readwrite("d_model", &DenoiserConfig::d_model)
        .def_readwrite("n_layers", &DenoiserConfig::n_layers)
        .def_readwrite("n_heads", &DenoiserConfig::n_heads)
        .def_readwrite("d_ff", &DenoiserConfig::d_ff)
        .def_readwrite("max_seq_len", &DenoiserConfig::max_seq_len)
        .def_readwrite("init_std", &DenoiserConfig::init_std)
        .def_readwrite("seed", &DenoiserConfig::seed);

    py::class_<Model>(m, "Model")
        .def(py::init<const DenoiserConfig&>(), py::arg("config") = DenoiserConfig{})
        .def_property_readonly("parameter_count", [](const Model& self) { return self.net.parameter_count(); })
        .def_property_readonly("forward_passes", [](const Model& self) { return self.net.forward_passes(); })
        .def("logits", &Model::logits, py::arg("tokens"))
        .def("generate", &Model::generate, py::arg("prompt"), py::arg("gen_length"), py::arg("block_length"),
             py::arg("steps") = 0)
        .def("train", &Model::train, py::arg("task") = "modadd", py::arg("loss") = "weft",
             py::arg("scheme") = "sqrt_entropy", py::arg("steps") = 4, py::arg("batch_size") = 2,
             py::arg("seed") = 0)
        .def("save", [](const Model& self, const std::string& path) {
            checkpoint_save(path, self.net, OptimizerState::for_model(self.net, AdamWConfig{}));
        });
}
