#pragma once

// Tiny bidirectional mask-predicting transformer with exact gradients,
// decoupled-weight-decay Adam, and a checksummed binary checkpoint.
//
// Architecture: token embedding, n_layers pre-norm blocks of
// (RMSNorm -> full self-attention with rotary positions -> residual,
//  RMSNorm -> GELU MLP -> residual), final RMSNorm, untied output projection.
// All arithmetic is double precision.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "weft/tensor.hpp"

namespace weft {

struct DenoiserConfig {
    int vocab_size = 19;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int max_seq_len = 128;
    double rms_norm_eps = 1e-5;
    double rope_theta = 10000.0;
    double init_std = 0.1;
    int mask_token_id = 18;
    int pad_token_id = 17;
    std::uint64_t seed = 42;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    // V*D + L*(2D + 4D^2 + 2DF) + D + D*V.
    std::size_t parameter_count() const;

    bool operator==(const DenoiserConfig&) const = default;
};

struct TensorInfo {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    // Norm gains are excluded from weight decay.
    bool decay = true;
};

class Denoiser {
public:
    explicit Denoiser(const DenoiserConfig& cfg);
    Denoiser(const DenoiserConfig& cfg, std::vector<double> params);

    const DenoiserConfig& config() const noexcept { return cfg_; }
    const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
    const TensorInfo& tensor(const std::string& name) const;
    std::span<const double> parameters() const noexcept { return params_; }
    std::span<double> parameters() noexcept { return params_; }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    struct LayerCache {
        Matrix x_in;
        std::vector<double> inv_rms1;
        Matrix h1;
        Matrix q, k, v;  // q and k after the rotary map
        std::vector<double> probs;  // heads x T x T
        Matrix attn;                // concatenated head outputs
        Matrix x_mid;
        std::vector<double> inv_rms2;
        Matrix h2;
        Matrix u;  // pre-activation
        Matrix a;  // GELU(u)
    };

    // Intermediate values kept for the backward pass.
    struct Activations {
        std::vector<int> tokens;
        std::vector<LayerCache> layers;
        Matrix x_final;
        std::vector<double> inv_rms_f;
        Matrix h_final;
    };

    // Logits (T x vocab) for one sequence. Deterministic in (params, tokens).
    Matrix forward(std::span<const int> tokens) const;
    Matrix forward(std::span<const int> tokens, Activations& tape) const;

    // Adds d loss / d params into `grad` (same layout as parameters()).
    void backward(const Activations& tape, const Matrix& dlogits, std::span<double> grad) const;

    // Instrumented count of forward() calls since construction or reset.
    std::uint64_t forward_passes() const noexcept { return forward_passes_; }
    void reset_forward_passes() noexcept { forward_passes_ = 0; }

private:
    void build_layout();
    void check_tokens(std::span<const int> tokens) const;
    const double* ptr(std::size_t index) const { return params_.data() + tensors_[index].offset; }

    DenoiserConfig cfg_;
    std::vector<TensorInfo> tensors_;
    std::vector<double> params_;
    std::vector<double> rope_cos_;
    std::vector<double> rope_sin_;
    mutable std::uint64_t forward_passes_ = 0;
};

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

struct OptimizerState {
    AdamWConfig hyper{};
    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    static OptimizerState for_model(const Denoiser& model, const AdamWConfig& hyper);
};

double global_norm(std::span<const double> grad);

struct StepReport {
    double grad_norm = 0.0;  // before clipping
    double applied_norm = 0.0;
    double lr = 0.0;
};

// Clips `grad` in place to global norm `clip_norm`, then applies one
// decoupled weight-decay Adam update with learning rate `lr`.
StepReport opt_step(Denoiser& model, std::span<double> grad, OptimizerState& state, double clip_norm, double lr);

// Checkpoint: little-endian binary. Header {magic "WEFTCKPT", version,
// config}, named tensor table, optimizer state, metadata string, trailing
// CRC-32 over everything before it.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    DenoiserConfig config;
    std::vector<double> params;
    OptimizerState optimizer;
    // Free-form JSON text (training step, run id).
    std::string metadata;
};

void checkpoint_save(const std::filesystem::path& path, const Denoiser& model, const OptimizerState& state,
                     const std::string& metadata = "{}");
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace weft
