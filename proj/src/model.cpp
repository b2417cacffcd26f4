#include "pitlab/model.hpp"

#include <cmath>
#include <map>
#include <random>

namespace pitlab {

using ad::Tensor;

void SeparatorConfig::validate() const {
    if (frame_size == 0 || hop == 0 || hop > frame_size) {
        throw ConfigError("model: need 1 <= hop <= frame_size");
    }
    if (hidden_dim == 0) throw ConfigError("model: hidden_dim must be >= 1");
    if (n_blocks == 0) throw ConfigError("model: n_blocks must be >= 1");
    if (n_sources < 2) throw ConfigError("model: n_sources must be >= 2");
}

std::size_t frame_count(std::size_t length, std::size_t frame_size, std::size_t hop) {
    if (length <= frame_size) return 1;
    return 1 + (length - frame_size + hop - 1) / hop;
}

SeparatorModel::SeparatorModel(SeparatorConfig config) : config_(config) {
    config_.validate();
    const std::size_t h = config_.hidden_dim;
    const std::size_t k = config_.n_sources;
    encoder_ = Tensor::zeros({config_.frame_size, h}, true);
    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
        blocks_.push_back({Tensor::zeros({h, h}, true), Tensor::zeros({1, h}, true),
                           Tensor::zeros({h, h}, true), Tensor::zeros({1, h}, true)});
    }
    mask_weight_ = Tensor::zeros({h, k * h}, true);
    mask_bias_ = Tensor::zeros({1, k * h}, true);
    decoder_ = Tensor::zeros({h, config_.frame_size}, true);
}

void SeparatorModel::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill_uniform = [&rng](Tensor& t) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : t.mutable_values()) v = dist(rng);
    };
    auto fill_zero = [](Tensor& t) {
        for (double& v : t.mutable_values()) v = 0.0;
    };
    fill_uniform(encoder_);
    for (auto& b : blocks_) {
        fill_uniform(b.tanh_weight);
        fill_zero(b.tanh_bias);
        fill_uniform(b.gate_weight);
        fill_zero(b.gate_bias);
    }
    if (config_.symmetric_mask_init) {
        fill_zero(mask_weight_);
    } else {
        fill_uniform(mask_weight_);
    }
    fill_zero(mask_bias_);
    fill_uniform(decoder_);
}

TensorLayers SeparatorModel::forward_tensors(std::span<const double> mixture,
                                             std::span<const std::size_t> layers) const {
    const std::span<const double> one[] = {mixture};
    return std::move(forward_batch(one, layers).front());
}

std::vector<TensorLayers> SeparatorModel::forward_batch(std::span<const std::span<const double>> mixtures,
                                                        std::span<const std::size_t> layers) const {
    const std::size_t fs = config_.frame_size;
    const std::size_t hop = config_.hop;
    const std::size_t h = config_.hidden_dim;
    if (mixtures.empty()) throw Error("forward: empty batch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i] >= config_.n_blocks || (i > 0 && layers[i] <= layers[i - 1])) {
            throw Error("forward: layer indices must be ascending and < n_blocks");
        }
    }

    std::vector<std::size_t> first_row{0};
    for (const auto& mixture : mixtures) {
        if (mixture.size() < fs) {
            throw Error("forward: input of " + std::to_string(mixture.size()) +
                        " samples is shorter than a frame");
        }
        first_row.push_back(first_row.back() + frame_count(mixture.size(), fs, hop));
    }
    const std::size_t total_frames = first_row.back();
    std::vector<double> framed(total_frames * fs, 0.0);
    for (std::size_t s = 0; s < mixtures.size(); ++s) {
        const auto& mixture = mixtures[s];
        const std::size_t n_frames = first_row[s + 1] - first_row[s];
        double* dst = framed.data() + first_row[s] * fs;
        for (std::size_t f = 0; f < n_frames; ++f)
            for (std::size_t j = 0; j < fs && f * hop + j < mixture.size(); ++j) dst[f * fs + j] = mixture[f * hop + j];
    }
    const Tensor frames = Tensor::from({total_frames, fs}, std::move(framed));
    const Tensor encoded = ad::relu(ad::matmul(frames, encoder_));

    std::vector<TensorLayers> out(mixtures.size());
    Tensor hidden = encoded;
    std::size_t next = 0;
    for (std::size_t b = 0; b < config_.n_blocks && next < layers.size(); ++b) {
        const Block& blk = blocks_[b];
        const Tensor candidate = ad::tanh(ad::affine(hidden, blk.tanh_weight, blk.tanh_bias));
        const Tensor gate = ad::sigmoid(ad::affine(hidden, blk.gate_weight, blk.gate_bias));
        hidden = hidden + candidate * gate;
        if (layers[next] != b) continue;
        ++next;

        const Tensor masks = ad::sigmoid(ad::affine(hidden, mask_weight_, mask_bias_));
        for (auto& o : out) o.emplace_back();
        for (std::size_t k = 0; k < config_.n_sources; ++k) {
            const Tensor mask = ad::slice(masks, 1, k * h, (k + 1) * h);
            const Tensor decoded = ad::matmul(encoded * mask, decoder_);
            for (std::size_t s = 0; s < mixtures.size(); ++s) {
                const Tensor rows = mixtures.size() == 1 ? decoded : ad::slice(decoded, 0, first_row[s], first_row[s + 1]);
                out[s].back().push_back(ad::overlap_add(rows, hop, mixtures[s].size()));
            }
        }
    }
    return out;
}

TensorLayers SeparatorModel::forward_tensors(std::span<const double> mixture) const {
    std::vector<std::size_t> all(config_.n_blocks);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return forward_tensors(mixture, all);
}

LayerOutputs SeparatorModel::forward(const Waveform& mixture) const {
    ad::NoGradGuard no_grad;
    TensorLayers layers = forward_tensors(mixture.samples());
    LayerOutputs out;
    out.per_layer.reserve(layers.size());
    for (const auto& layer : layers) {
        std::vector<Waveform> sources;
        for (const auto& t : layer) sources.emplace_back(std::vector<double>(t.values().begin(), t.values().end()));
        out.per_layer.push_back(std::move(sources));
    }
    return out;
}

std::vector<Tensor> SeparatorModel::parameters() const {
    std::vector<Tensor> params;
    for (const auto& nt : named_parameters()) params.push_back(nt.tensor);
    return params;
}

std::vector<ad::NamedTensor> SeparatorModel::named_parameters() const {
    std::vector<ad::NamedTensor> out{{"encoder", encoder_}};
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        out.push_back({p + "tanh_weight", blocks_[b].tanh_weight});
        out.push_back({p + "tanh_bias", blocks_[b].tanh_bias});
        out.push_back({p + "gate_weight", blocks_[b].gate_weight});
        out.push_back({p + "gate_bias", blocks_[b].gate_bias});
    }
    out.push_back({"mask.weight", mask_weight_});
    out.push_back({"mask.bias", mask_bias_});
    out.push_back({"decoder", decoder_});
    return out;
}

std::size_t SeparatorModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

void SeparatorModel::load(std::span<const ad::NamedTensor> tensors) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
    for (auto& [name, param] : named_parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("SeparatorModel::load: missing tensor " + name);
        if (it->second->shape() != param.shape()) throw Error("SeparatorModel::load: shape mismatch for " + name);
        auto dst = Tensor(param).mutable_values();
        auto src = it->second->values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

std::size_t SeparatorModel::expected_parameter_count(const SeparatorConfig& c) {
    const std::size_t h = c.hidden_dim;
    return c.frame_size * h                      // encoder
           + c.n_blocks * (2 * h * h + 2 * h)    // gated blocks
           + h * c.n_sources * h + c.n_sources * h  // mask head
           + h * c.frame_size;                   // decoder
}

Tensor si_sdr_tensor(const Tensor& estimate, std::span<const double> target) {
    if (estimate.numel() != target.size()) throw Error("si_sdr_tensor: length mismatch");
    double tt = 0.0;
    for (double v : target) tt += v * v;
    if (tt == 0.0) throw Error("si_sdr_tensor: target is identically zero");

    const Tensor t = Tensor::from({target.size()}, std::vector<double>(target.begin(), target.end()));
    const Tensor ee = ad::dot(estimate, estimate);
    if (ee.item() == 0.0) return Tensor::scalar(0.0);
    const Tensor alpha = ad::scale(ad::dot(estimate, t), 1.0 / tt);
    const Tensor projection = alpha * t;
    const Tensor residual = estimate - projection;
    const Tensor guard = ad::scale(ee, kMetricGuard);
    const Tensor num = ad::dot(projection, projection) + guard;
    const Tensor den = ad::dot(residual, residual) + guard;
    return ad::scale(ad::log10(num) - ad::log10(den), 10.0);
}

PairwiseLoss pairwise_loss_tensors(std::span<const Tensor> estimates,
                                   std::span<const Waveform> targets) {
    if (estimates.empty() || estimates.size() != targets.size()) {
        throw Error("pairwise_loss_tensors: need equal, non-zero estimate/target counts");
    }
    const std::size_t n = estimates.size();
    PairwiseLoss out;
    std::vector<double> values(n * n);
    out.entries.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            out.entries.push_back(ad::scale(si_sdr_tensor(estimates[i], targets[j].samples()), -1.0));
            values[i * n + j] = out.entries.back().item();
        }
    out.values = LossMatrix(n, std::move(values));
    return out;
}

Tensor weighted_pair_loss(const PairwiseLoss& pairs, const LossMatrix& coefficients) {
    const std::size_t n = pairs.values.size();
    if (coefficients.size() != n) throw Error("weighted_pair_loss: coefficient size mismatch");
    Tensor total;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double c = coefficients(i, j);
            if (c == 0.0) continue;
            Tensor term = ad::scale(pairs.entries[i * n + j], c);
            total = total.defined() ? total + term : term;
        }
    return total;
}

}  // namespace pitlab
