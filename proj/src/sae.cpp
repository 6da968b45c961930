#include "initfeat/sae.hpp"

#include "initfeat/kernels.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>

namespace initfeat {

namespace fs = std::filesystem;

namespace {

void require_size(std::string_view what, std::size_t got, std::size_t want) {
    if (got != want)
        throw DataError(fmt::format("dimension mismatch: {} has length {}, expected {}", what, got, want));
}

void require_finite(std::string_view what, const std::vector<float>& v) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i])) throw DataError(fmt::format("SAE {}[{}] is not finite", what, i));
}

template <class T>
std::vector<double> pre_activations_impl(const SaeParams& p, std::span<const T> h) {
    require_size("hidden state", h.size(), p.d_model);
    std::vector<double> z(p.d_sae, 0.0);
    for (std::size_t i = 0; i < p.d_model; ++i)
        kernels::axpy(static_cast<double>(h[i]), p.enc_row(i), z);
    kernels::axpy(1.0, std::span<const float>(p.b_enc), z);
    return z;
}

template <class T>
Reconstruction reconstruct_impl(const SaeParams& p, std::span<const T> h) {
    Reconstruction r;
    r.h_hat = decode(p, std::span<const double>(encode(p, h)));
    double ss = 0.0;
    for (std::size_t i = 0; i < p.d_model; ++i) {
        const double d = static_cast<double>(h[i]) - r.h_hat[i];
        ss += d * d;
    }
    r.error = std::sqrt(ss);
    return r;
}

}  // namespace

void SaeParams::validate() const {
    if (d_model == 0 || d_sae == 0) throw DataError("SAE dimensions must be positive");
    if (d_sae < d_model)
        throw DataError(fmt::format("SAE layer {}: d_sae {} < d_model {} (dictionary must be overcomplete)",
                                    layer, d_sae, d_model));
    require_size("w_enc", w_enc.size(), d_model * d_sae);
    require_size("b_enc", b_enc.size(), d_sae);
    require_size("theta", theta.size(), d_sae);
    require_size("w_dec", w_dec.size(), d_sae * d_model);
    require_size("b_dec", b_dec.size(), d_model);
    require_finite("w_enc", w_enc);
    require_finite("b_enc", b_enc);
    require_finite("theta", theta);
    require_finite("w_dec", w_dec);
    require_finite("b_dec", b_dec);
    for (std::size_t j = 0; j < d_sae; ++j)
        if (theta[j] < 0.0f) throw DataError(fmt::format("SAE theta[{}] is negative", j));
}

fs::path sae_file(const fs::path& dir, int layer) {
    return dir / fmt::format("sae_layer_{}.bin", layer);
}

SaeParams load_sae(const fs::path& path, int layer, ReadOptions opts) {
    if (!fs::exists(path)) throw DataError(fmt::format("missing SAE weights '{}'", path.string()));
    Container c = read_container(path, opts);
    auto take = [&](const char* name) -> Tensor {
        auto it = c.tensors.find(name);
        if (it == c.tensors.end())
            throw DataError(fmt::format("{}: missing tensor '{}'", path.string(), name));
        return std::move(it->second);
    };

    SaeParams p;
    p.layer = layer;
    Tensor w_enc = take("w_enc");
    if (w_enc.rank() != 2) throw DataError(fmt::format("{}: w_enc must be rank 2", path.string()));
    p.d_model = w_enc.shape[0];
    p.d_sae = w_enc.shape[1];
    p.w_enc = std::move(w_enc.data);

    Tensor b_enc = take("b_enc");
    Tensor w_dec = take("w_dec");
    Tensor b_dec = take("b_dec");
    if (b_enc.shape != std::vector<std::size_t>{p.d_sae} ||
        w_dec.shape != std::vector<std::size_t>{p.d_sae, p.d_model} ||
        b_dec.shape != std::vector<std::size_t>{p.d_model})
        throw DataError(fmt::format("{}: SAE tensor shapes disagree with w_enc [{}, {}]",
                                    path.string(), p.d_model, p.d_sae));
    p.b_enc = std::move(b_enc.data);
    p.w_dec = std::move(w_dec.data);
    p.b_dec = std::move(b_dec.data);

    if (auto it = c.tensors.find("theta"); it != c.tensors.end()) {
        if (it->second.shape != std::vector<std::size_t>{p.d_sae})
            throw DataError(fmt::format("{}: theta shape disagrees with d_sae", path.string()));
        p.theta = std::move(it->second.data);
    } else {
        spdlog::warn("{}: no 'theta' tensor; using zero thresholds (plain ReLU)", path.string());
        p.theta.assign(p.d_sae, 0.0f);
    }
    p.validate();
    return p;
}

void save_sae(const SaeParams& p, const fs::path& path) {
    p.validate();
    std::vector<NamedTensor> t;
    t.push_back({"w_enc", Tensor({p.d_model, p.d_sae}, p.w_enc)});
    t.push_back({"b_enc", Tensor({p.d_sae}, p.b_enc)});
    t.push_back({"theta", Tensor({p.d_sae}, p.theta)});
    t.push_back({"w_dec", Tensor({p.d_sae, p.d_model}, p.w_dec)});
    t.push_back({"b_dec", Tensor({p.d_model}, p.b_dec)});
    write_container(t, {{"layer", std::to_string(p.layer)}}, path);
}

SparseActivations to_sparse(std::span<const double> dense) {
    SparseActivations s;
    s.dim = dense.size();
    for (std::size_t j = 0; j < dense.size(); ++j)
        if (dense[j] > 0.0) {
            s.index.push_back(static_cast<std::uint32_t>(j));
            s.value.push_back(dense[j]);
        }
    return s;
}

std::vector<double> to_dense(const SparseActivations& s) {
    std::vector<double> d(s.dim, 0.0);
    for (std::size_t k = 0; k < s.index.size(); ++k) d[s.index[k]] = s.value[k];
    return d;
}

std::vector<double> pre_activations(const SaeParams& p, std::span<const float> h) {
    return pre_activations_impl(p, h);
}
std::vector<double> pre_activations(const SaeParams& p, std::span<const double> h) {
    return pre_activations_impl(p, h);
}

std::vector<double> encode(const SaeParams& p, std::span<const float> h) {
    std::vector<double> z = pre_activations_impl(p, h);
    kernels::jumprelu_gate(z, p.theta);
    return z;
}

std::vector<double> encode(const SaeParams& p, std::span<const double> h) {
    std::vector<double> z = pre_activations_impl(p, h);
    kernels::jumprelu_gate(z, p.theta);
    return z;
}

std::vector<double> decode(const SaeParams& p, std::span<const double> a) {
    require_size("activations", a.size(), p.d_sae);
    std::vector<double> y(p.d_model, 0.0);
    for (std::size_t j = 0; j < p.d_sae; ++j)
        if (a[j] != 0.0) kernels::axpy(a[j], p.dec_row(j), y);
    kernels::axpy(1.0, std::span<const float>(p.b_dec), y);
    return y;
}

std::vector<double> decode(const SaeParams& p, const SparseActivations& a) {
    require_size("activations", a.dim, p.d_sae);
    if (a.index.size() != a.value.size()) throw DataError("sparse activations: index/value length differ");
    std::vector<double> y(p.d_model, 0.0);
    for (std::size_t k = 0; k < a.index.size(); ++k) {
        if (a.index[k] >= p.d_sae || (k > 0 && a.index[k] <= a.index[k - 1]))
            throw DataError("sparse activations: indices must be strictly increasing and in range");
        if (a.value[k] != 0.0) kernels::axpy(a.value[k], p.dec_row(a.index[k]), y);
    }
    kernels::axpy(1.0, std::span<const float>(p.b_dec), y);
    return y;
}

Reconstruction reconstruct(const SaeParams& p, std::span<const float> h) {
    return reconstruct_impl(p, h);
}
Reconstruction reconstruct(const SaeParams& p, std::span<const double> h) {
    return reconstruct_impl(p, h);
}

SubsetEncoder::SubsetEncoder(const SaeParams& p, std::vector<std::uint32_t> features)
    : d_model_(p.d_model), features_(std::move(features)) {
    const std::size_t k = features_.size();
    columns_.resize(d_model_ * k);
    for (std::size_t c = 0; c < k; ++c) {
        const std::uint32_t j = features_[c];
        if (j >= p.d_sae) throw DataError(fmt::format("feature index {} out of range for d_sae {}", j, p.d_sae));
        for (std::size_t i = 0; i < d_model_; ++i) columns_[i * k + c] = p.w_enc[i * p.d_sae + j];
        bias_.push_back(p.b_enc[j]);
        theta_.push_back(p.theta[j]);
    }
}

std::vector<double> SubsetEncoder::encode(std::span<const float> h) const {
    require_size("hidden state", h.size(), d_model_);
    const std::size_t k = features_.size();
    std::vector<double> z(k, 0.0);
    if (k == 0) return z;
    for (std::size_t i = 0; i < d_model_; ++i)
        kernels::axpy(static_cast<double>(h[i]), std::span<const float>(columns_).subspan(i * k, k), z);
    kernels::axpy(1.0, std::span<const float>(bias_), z);
    kernels::jumprelu_gate(z, theta_);
    return z;
}

}  // namespace initfeat
