#include "weft/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>

#include <zlib.h>

#include "weft/rng.hpp"

namespace weft {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// Per-layer tensor slots, in layout order.
enum LayerSlot : std::size_t { kAttnNorm, kWq, kWk, kWv, kWo, kMlpNorm, kW1, kW2, kSlotsPerLayer };

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
    const double th = std::tanh(kGeluC * (u + kGeluA * u * u * u));
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

// y = x W with W stored row-major (K x N).
Matrix matmul(const Matrix& x, const double* w, std::size_t n) {
    const std::size_t k_dim = x.cols();
    Matrix y(x.rows(), n, 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        double* yr = y.row(t).data();
        const double* xr = x.row(t).data();
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double xv = xr[k];
            const double* wr = w + k * n;
            for (std::size_t j = 0; j < n; ++j) {
                yr[j] += xv * wr[j];
            }
        }
    }
    return y;
}

// Given dy for y = x W: dx += dy W^T, dW += x^T dy.
void matmul_backward(const Matrix& x, const double* w, const Matrix& dy, Matrix& dx, double* dw) {
    const std::size_t k_dim = x.cols();
    const std::size_t n = dy.cols();
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const double* dyr = dy.row(t).data();
        const double* xr = x.row(t).data();
        double* dxr = dx.row(t).data();
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double* wr = w + k * n;
            double* dwr = dw + k * n;
            const double xv = xr[k];
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                acc += dyr[j] * wr[j];
                dwr[j] += xv * dyr[j];
            }
            dxr[k] += acc;
        }
    }
}

void rmsnorm(const Matrix& x, const double* gain, double eps, Matrix& h, std::vector<double>& inv_rms) {
    const std::size_t d = x.cols();
    h = Matrix(x.rows(), d);
    inv_rms.assign(x.rows(), 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto xr = x.row(t);
        double ms = 0.0;
        for (double v : xr) {
            ms += v * v;
        }
        const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
        inv_rms[t] = inv;
        auto hr = h.row(t);
        for (std::size_t j = 0; j < d; ++j) {
            hr[j] = xr[j] * inv * gain[j];
        }
    }
}

// Adds the input gradient of h = g * x / rms(x) into dx and the gain gradient into dgain.
void rmsnorm_backward(const Matrix& x, const double* gain, const std::vector<double>& inv_rms, const Matrix& dh,
                      Matrix& dx, double* dgain) {
    const std::size_t d = x.cols();
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto xr = x.row(t);
        const auto dhr = dh.row(t);
        auto dxr = dx.row(t);
        const double inv = inv_rms[t];
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += dhr[j] * gain[j] * xr[j];
            dgain[j] += dhr[j] * xr[j] * inv;
        }
        const double coef = inv * inv * inv * dot / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            dxr[j] += inv * gain[j] * dhr[j] - xr[j] * coef;
        }
    }
}

}  // namespace

void DenoiserConfig::validate() const {
    if (vocab_size < 2 || d_model < 2 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1) {
        throw std::invalid_argument("DenoiserConfig: sizes must be positive");
    }
    if (d_model % n_heads != 0 || head_dim() % 2 != 0) {
        throw std::invalid_argument("DenoiserConfig: d_model must split into even-width heads");
    }
    if (mask_token_id < 0 || mask_token_id >= vocab_size || pad_token_id < 0 || pad_token_id >= vocab_size) {
        throw std::invalid_argument("DenoiserConfig: special token ids must be inside the vocabulary");
    }
    if (!(rms_norm_eps > 0.0) || !(rope_theta > 0.0) || !(init_std > 0.0)) {
        throw std::invalid_argument("DenoiserConfig: eps, rope_theta and init_std must be positive");
    }
}

std::size_t DenoiserConfig::parameter_count() const {
    const auto v = static_cast<std::size_t>(vocab_size);
    const auto d = static_cast<std::size_t>(d_model);
    const auto f = static_cast<std::size_t>(d_ff);
    const auto l = static_cast<std::size_t>(n_layers);
    return v * d + l * (2 * d + 4 * d * d + 2 * d * f) + d + d * v;
}

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
    const RandomStream init = root_stream(cfg_.seed).substream("init");
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const TensorInfo& info = tensors_[i];
        double* p = params_.data() + info.offset;
        if (info.shape.size() == 1) {
            std::fill(p, p + info.size, 1.0);
            continue;
        }
        RandomStream rng = init.substream(i);
        for (std::size_t j = 0; j < info.size; ++j) {
            p[j] = cfg_.init_std * rng.normal();
        }
    }
}

Denoiser::Denoiser(const DenoiserConfig& cfg, std::vector<double> params) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
    if (params.size() != params_.size()) {
        throw std::invalid_argument("Denoiser: parameter vector does not match the configuration");
    }
    params_ = std::move(params);
}

void Denoiser::build_layout() {
    const auto v = static_cast<std::size_t>(cfg_.vocab_size);
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto f = static_cast<std::size_t>(cfg_.d_ff);
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        std::size_t size = 1;
        for (auto s : shape) {
            size *= s;
        }
        const bool decay = shape.size() > 1;
        tensors_.push_back({std::move(name), std::move(shape), offset, size, decay});
        offset += size;
    };
    add("tok_emb", {v, d});
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add(p + "attn_norm", {d});
        add(p + "wq", {d, d});
        add(p + "wk", {d, d});
        add(p + "wv", {d, d});
        add(p + "wo", {d, d});
        add(p + "mlp_norm", {d});
        add(p + "w1", {d, f});
        add(p + "w2", {f, d});
    }
    add("final_norm", {d});
    add("w_out", {d, v});
    params_.assign(offset, 0.0);

    const auto half = static_cast<std::size_t>(cfg_.head_dim() / 2);
    const auto max_len = static_cast<std::size_t>(cfg_.max_seq_len);
    rope_cos_.resize(max_len * half);
    rope_sin_.resize(max_len * half);
    for (std::size_t pos = 0; pos < max_len; ++pos) {
        for (std::size_t m = 0; m < half; ++m) {
            const double freq =
                std::pow(cfg_.rope_theta, -2.0 * static_cast<double>(m) / static_cast<double>(cfg_.head_dim()));
            const double angle = static_cast<double>(pos) * freq;
            rope_cos_[pos * half + m] = std::cos(angle);
            rope_sin_[pos * half + m] = std::sin(angle);
        }
    }
}

const TensorInfo& Denoiser::tensor(const std::string& name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) {
            return t;
        }
    }
    throw std::out_of_range("Denoiser: no tensor named " + name);
}

void Denoiser::check_tokens(std::span<const int> tokens) const {
    if (tokens.empty() || tokens.size() > static_cast<std::size_t>(cfg_.max_seq_len)) {
        throw std::invalid_argument("Denoiser: sequence length must be in [1, max_seq_len]");
    }
    for (int id : tokens) {
        if (id < 0 || id >= cfg_.vocab_size) {
            throw std::out_of_range("Denoiser: token id outside the vocabulary");
        }
    }
}

Matrix Denoiser::forward(std::span<const int> tokens) const {
    Activations tape;
    return forward(tokens, tape);
}

Matrix Denoiser::forward(std::span<const int> tokens, Activations& tape) const {
    check_tokens(tokens);
    ++forward_passes_;

    const std::size_t T = tokens.size();
    const auto D = static_cast<std::size_t>(cfg_.d_model);
    const auto H = static_cast<std::size_t>(cfg_.n_heads);
    const auto hd = static_cast<std::size_t>(cfg_.head_dim());
    const auto F = static_cast<std::size_t>(cfg_.d_ff);
    const auto V = static_cast<std::size_t>(cfg_.vocab_size);
    const std::size_t half = hd / 2;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    tape.tokens.assign(tokens.begin(), tokens.end());
    tape.layers.resize(static_cast<std::size_t>(cfg_.n_layers));

    Matrix x(T, D);
    const double* emb = ptr(0);
    for (std::size_t t = 0; t < T; ++t) {
        const double* e = emb + static_cast<std::size_t>(tokens[t]) * D;
        std::copy(e, e + D, x.row(t).begin());
    }

    auto rotate = [&](Matrix& m) {
        for (std::size_t t = 0; t < T; ++t) {
            double* r = m.row(t).data();
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t i = 0; i < half; ++i) {
                    const double c = rope_cos_[t * half + i];
                    const double s = rope_sin_[t * half + i];
                    double& a = r[h * hd + 2 * i];
                    double& b = r[h * hd + 2 * i + 1];
                    const double a0 = a;
                    a = a0 * c - b * s;
                    b = a0 * s + b * c;
                }
            }
        }
    };

    for (std::size_t l = 0; l < tape.layers.size(); ++l) {
        LayerCache& c = tape.layers[l];
        const std::size_t base = 1 + l * kSlotsPerLayer;
        c.x_in = x;
        rmsnorm(x, ptr(base + kAttnNorm), cfg_.rms_norm_eps, c.h1, c.inv_rms1);
        c.q = matmul(c.h1, ptr(base + kWq), D);
        c.k = matmul(c.h1, ptr(base + kWk), D);
        c.v = matmul(c.h1, ptr(base + kWv), D);
        rotate(c.q);
        rotate(c.k);

        c.probs.assign(H * T * T, 0.0);
        c.attn = Matrix(T, D);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                double* p = c.probs.data() + (h * T + i) * T;
                const double* qi = c.q.row(i).data() + h * hd;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < T; ++j) {
                    const double* kj = c.k.row(j).data() + h * hd;
                    double s = 0.0;
                    for (std::size_t e = 0; e < hd; ++e) {
                        s += qi[e] * kj[e];
                    }
                    p[j] = s * scale;
                    mx = std::max(mx, p[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < T; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    z += p[j];
                }
                double* oi = c.attn.row(i).data() + h * hd;
                for (std::size_t j = 0; j < T; ++j) {
                    p[j] /= z;
                    const double* vj = c.v.row(j).data() + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) {
                        oi[e] += p[j] * vj[e];
                    }
                }
            }
        }
        const Matrix proj = matmul(c.attn, ptr(base + kWo), D);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data()[i] += proj.data()[i];
        }
        c.x_mid = x;
        rmsnorm(x, ptr(base + kMlpNorm), cfg_.rms_norm_eps, c.h2, c.inv_rms2);
        c.u = matmul(c.h2, ptr(base + kW1), F);
        c.a = Matrix(T, F);
        for (std::size_t i = 0; i < c.u.size(); ++i) {
            c.a.data()[i] = gelu(c.u.data()[i]);
        }
        const Matrix mlp = matmul(c.a, ptr(base + kW2), D);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data()[i] += mlp.data()[i];
        }
    }

    const std::size_t final_norm = tensors_.size() - 2;
    tape.x_final = x;
    rmsnorm(x, ptr(final_norm), cfg_.rms_norm_eps, tape.h_final, tape.inv_rms_f);
    return matmul(tape.h_final, ptr(final_norm + 1), V);
}

void Denoiser::backward(const Activations& tape, const Matrix& dlogits, std::span<double> grad) const {
    if (grad.size() != params_.size()) {
        throw std::invalid_argument("Denoiser::backward: gradient buffer has the wrong size");
    }
    const std::size_t T = tape.tokens.size();
    if (dlogits.rows() != T || dlogits.cols() != static_cast<std::size_t>(cfg_.vocab_size)) {
        throw std::invalid_argument("Denoiser::backward: dlogits shape mismatch");
    }
    const auto D = static_cast<std::size_t>(cfg_.d_model);
    const auto H = static_cast<std::size_t>(cfg_.n_heads);
    const auto hd = static_cast<std::size_t>(cfg_.head_dim());
    const auto F = static_cast<std::size_t>(cfg_.d_ff);
    const std::size_t half = hd / 2;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    auto gptr = [&](std::size_t index) { return grad.data() + tensors_[index].offset; };

    const std::size_t final_norm = tensors_.size() - 2;
    Matrix dh(T, D);
    matmul_backward(tape.h_final, ptr(final_norm + 1), dlogits, dh, gptr(final_norm + 1));
    Matrix dx(T, D);
    rmsnorm_backward(tape.x_final, ptr(final_norm), tape.inv_rms_f, dh, dx, gptr(final_norm));

    auto unrotate = [&](Matrix& m) {
        for (std::size_t t = 0; t < T; ++t) {
            double* r = m.row(t).data();
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t i = 0; i < half; ++i) {
                    const double c = rope_cos_[t * half + i];
                    const double s = rope_sin_[t * half + i];
                    double& a = r[h * hd + 2 * i];
                    double& b = r[h * hd + 2 * i + 1];
                    const double a0 = a;
                    a = a0 * c + b * s;
                    b = -a0 * s + b * c;
                }
            }
        }
    };

    for (std::size_t l = tape.layers.size(); l-- > 0;) {
        const LayerCache& c = tape.layers[l];
        const std::size_t base = 1 + l * kSlotsPerLayer;

        // MLP branch.
        Matrix da(T, F);
        matmul_backward(c.a, ptr(base + kW2), dx, da, gptr(base + kW2));
        for (std::size_t i = 0; i < da.size(); ++i) {
            da.data()[i] *= gelu_grad(c.u.data()[i]);
        }
        Matrix dh2(T, D);
        matmul_backward(c.h2, ptr(base + kW1), da, dh2, gptr(base + kW1));
        Matrix dx_mid = dx;
        rmsnorm_backward(c.x_mid, ptr(base + kMlpNorm), c.inv_rms2, dh2, dx_mid, gptr(base + kMlpNorm));

        // Attention branch.
        Matrix dattn(T, D);
        matmul_backward(c.attn, ptr(base + kWo), dx_mid, dattn, gptr(base + kWo));
        Matrix dq(T, D);
        Matrix dk(T, D);
        Matrix dv(T, D);
        std::vector<double> dp(T);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                const double* p = c.probs.data() + (h * T + i) * T;
                const double* doi = dattn.row(i).data() + h * hd;
                double dot = 0.0;
                for (std::size_t j = 0; j < T; ++j) {
                    const double* vj = c.v.row(j).data() + h * hd;
                    double* dvj = dv.row(j).data() + h * hd;
                    double s = 0.0;
                    for (std::size_t e = 0; e < hd; ++e) {
                        s += doi[e] * vj[e];
                        dvj[e] += p[j] * doi[e];
                    }
                    dp[j] = s;
                    dot += p[j] * s;
                }
                const double* qi = c.q.row(i).data() + h * hd;
                double* dqi = dq.row(i).data() + h * hd;
                for (std::size_t j = 0; j < T; ++j) {
                    const double ds = p[j] * (dp[j] - dot) * scale;
                    const double* kj = c.k.row(j).data() + h * hd;
                    double* dkj = dk.row(j).data() + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) {
                        dqi[e] += ds * kj[e];
                        dkj[e] += ds * qi[e];
                    }
                }
            }
        }
        unrotate(dq);
        unrotate(dk);
        Matrix dh1(T, D);
        matmul_backward(c.h1, ptr(base + kWq), dq, dh1, gptr(base + kWq));
        matmul_backward(c.h1, ptr(base + kWk), dk, dh1, gptr(base + kWk));
        matmul_backward(c.h1, ptr(base + kWv), dv, dh1, gptr(base + kWv));
        dx = dx_mid;
        rmsnorm_backward(c.x_in, ptr(base + kAttnNorm), c.inv_rms1, dh1, dx, gptr(base + kAttnNorm));
    }

    double* demb = gptr(0);
    for (std::size_t t = 0; t < T; ++t) {
        double* e = demb + static_cast<std::size_t>(tape.tokens[t]) * D;
        const auto r = dx.row(t);
        for (std::size_t j = 0; j < D; ++j) {
            e[j] += r[j];
        }
    }
}

OptimizerState OptimizerState::for_model(const Denoiser& model, const AdamWConfig& hyper) {
    OptimizerState s;
    s.hyper = hyper;
    s.m.assign(model.parameter_count(), 0.0);
    s.v.assign(model.parameter_count(), 0.0);
    return s;
}

double global_norm(std::span<const double> grad) {
    double s = 0.0;
    for (double g : grad) {
        s += g * g;
    }
    return std::sqrt(s);
}

StepReport opt_step(Denoiser& model, std::span<double> grad, OptimizerState& state, double clip_norm, double lr) {
    auto params = model.parameters();
    if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("opt_step: gradient/moment shapes do not match the parameters");
    }
    StepReport report;
    report.grad_norm = global_norm(grad);
    report.lr = lr;
    if (clip_norm > 0.0 && report.grad_norm > clip_norm) {
        const double s = clip_norm / report.grad_norm;
        for (double& g : grad) {
            g *= s;
        }
    }
    report.applied_norm = global_norm(grad);

    const AdamWConfig& h = state.hyper;
    ++state.step;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (const TensorInfo& info : model.tensors()) {
        const double wd = info.decay ? h.weight_decay : 0.0;
        for (std::size_t i = info.offset; i < info.offset + info.size; ++i) {
            state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grad[i];
            state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
            const double mhat = state.m[i] / bc1;
            const double vhat = state.v[i] / bc2;
            params[i] -= lr * wd * params[i];
            params[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
        }
    }
    return report;
}

// ----------------------------- checkpoint I/O -----------------------------

namespace {

constexpr char kMagic[8] = {'W', 'E', 'F', 'T', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* b = reinterpret_cast<const char*>(&v);
        buf_.append(b, sizeof(T));
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    void put_doubles(std::span<const double> v) {
        put<std::uint64_t>(v.size());
        buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    void put_raw(const char* p, std::size_t n) { buf_.append(p, n); }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<double> get_doubles() {
        const auto n = get<std::uint64_t>();
        if (n > (end_ - pos_) / sizeof(double)) {
            throw std::runtime_error("checkpoint: truncated tensor data");
        }
        std::vector<double> v(n);
        std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    void expect_raw(const char* p, std::size_t n) {
        need(n);
        if (std::memcmp(buf_.data() + pos_, p, n) != 0) {
            throw std::runtime_error("checkpoint: bad magic");
        }
        pos_ += n;
    }
    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) {
            throw std::runtime_error("checkpoint: truncated file");
        }
    }
    const std::string& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& buf, std::size_t n) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n)));
}

}  // namespace

void checkpoint_save(const std::filesystem::path& path, const Denoiser& model, const OptimizerState& state,
                     const std::string& metadata) {
    const DenoiserConfig& c = model.config();
    Writer w;
    w.put_raw(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kCheckpointVersion);
    for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len, c.mask_token_id,
                  c.pad_token_id}) {
        w.put<std::int32_t>(v);
    }
    w.put<double>(c.rms_norm_eps);
    w.put<double>(c.rope_theta);
    w.put<double>(c.init_std);
    w.put<std::uint64_t>(c.seed);

    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.tensors().size()));
    for (const TensorInfo& t : model.tensors()) {
        w.put_string(t.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
        for (auto s : t.shape) {
            w.put<std::uint64_t>(s);
        }
        w.put<std::uint64_t>(t.offset);
    }
    w.put_doubles(model.parameters());

    const AdamWConfig& h = state.hyper;
    for (double v : {h.lr, h.beta1, h.beta2, h.eps, h.weight_decay}) {
        w.put<double>(v);
    }
    w.put<std::uint64_t>(state.step);
    w.put_doubles(state.m);
    w.put_doubles(state.v);
    w.put_string(metadata);
    w.put<std::uint32_t>(crc_of(w.buffer(), w.buffer().size()));

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    }
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) {
        throw std::runtime_error("checkpoint: write failed for " + path.string());
    }
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + path.string());
    }
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 8) {
        throw std::runtime_error("checkpoint: truncated file");
    }
    const std::size_t body = buf.size() - sizeof(std::uint32_t);
    std::uint32_t stored = 0;
    std::memcpy(&stored, buf.data() + body, sizeof(stored));
    if (stored != crc_of(buf, body)) {
        throw std::runtime_error("checkpoint: checksum mismatch (file corrupt or truncated)");
    }

    Reader r(buf, body);
    r.expect_raw(kMagic, sizeof(kMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    DenoiserConfig& c = ck.config;
    for (int* v : {&c.vocab_size, &c.d_model, &c.n_layers, &c.n_heads, &c.d_ff, &c.max_seq_len, &c.mask_token_id,
                   &c.pad_token_id}) {
        *v = r.get<std::int32_t>();
    }
    c.rms_norm_eps = r.get<double>();
    c.rope_theta = r.get<double>();
    c.init_std = r.get<double>();
    c.seed = r.get<std::uint64_t>();
    c.validate();

    const Denoiser layout(c);
    const auto n_tensors = r.get<std::uint32_t>();
    if (n_tensors != layout.tensors().size()) {
        throw std::runtime_error("checkpoint: tensor table does not match the configuration");
    }
    for (const TensorInfo& expect : layout.tensors()) {
        const std::string name = r.get_string();
        const auto ndim = r.get<std::uint32_t>();
        std::vector<std::size_t> shape(ndim);
        for (auto& s : shape) {
            s = r.get<std::uint64_t>();
        }
        const auto offset = r.get<std::uint64_t>();
        if (name != expect.name || shape != expect.shape || offset != expect.offset) {
            throw std::runtime_error("checkpoint: tensor table entry mismatch at " + name);
        }
    }
    ck.params = r.get_doubles();
    if (ck.params.size() != layout.parameter_count()) {
        throw std::runtime_error("checkpoint: parameter count mismatch");
    }
    AdamWConfig& h = ck.optimizer.hyper;
    for (double* v : {&h.lr, &h.beta1, &h.beta2, &h.eps, &h.weight_decay}) {
        *v = r.get<double>();
    }
    ck.optimizer.step = r.get<std::uint64_t>();
    ck.optimizer.m = r.get_doubles();
    ck.optimizer.v = r.get_doubles();
    if (ck.optimizer.m.size() != ck.params.size() || ck.optimizer.v.size() != ck.params.size()) {
        throw std::runtime_error("checkpoint: optimizer state does not match the parameters");
    }
    ck.metadata = r.get_string();
    if (!r.done()) {
        throw std::runtime_error("checkpoint: trailing bytes before checksum");
    }
    return ck;
}

}  // namespace weft
