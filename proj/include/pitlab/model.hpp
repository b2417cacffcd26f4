#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pitlab/autodiff.hpp"
#include "pitlab/lo.hpp"

namespace pitlab {

struct SeparatorConfig {
    std::size_t frame_size = 16;
    std::size_t hop = 8;
    std::size_t hidden_dim = 32;
    std::size_t n_blocks = 6;
    std::size_t n_sources = 2;
    /// Start the shared mask head at zero so every mask is 0.5.
    bool symmetric_mask_init = true;

    void validate() const;
};

/// Per-layer source estimates as graph tensors: layers[l][k] has shape {length}.
using TensorLayers = std::vector<std::vector<ad::Tensor>>;

/// Masking separator: framewise encoder, gated residual blocks, and a mask
/// head plus decoder shared by every block's reconstruction path.
class SeparatorModel {
public:
    explicit SeparatorModel(SeparatorConfig config);

    /// Deterministic uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; biases zero.
    void init(std::uint64_t seed);

    const SeparatorConfig& config() const noexcept { return config_; }

    /// Estimates from the requested blocks (0-based, ascending). Records a
    /// graph unless grad mode is off.
    TensorLayers forward_tensors(std::span<const double> mixture,
                                 std::span<const std::size_t> layers) const;
    TensorLayers forward_tensors(std::span<const double> mixture) const;

    /// Same as forward_tensors for each mixture, computed as one stacked frame
    /// matrix. Result is indexed [mixture][layer][source].
    std::vector<TensorLayers> forward_batch(std::span<const std::span<const double>> mixtures,
                                            std::span<const std::size_t> layers) const;

    /// Every block's reconstruction without recording a graph.
    LayerOutputs forward(const Waveform& mixture) const;

    std::vector<ad::Tensor> parameters() const;
    std::vector<ad::NamedTensor> named_parameters() const;
    std::size_t parameter_count() const;

    void load(std::span<const ad::NamedTensor> tensors);

    /// Closed-form parameter count for a configuration.
    static std::size_t expected_parameter_count(const SeparatorConfig& config);

    struct Block {
        ad::Tensor tanh_weight, tanh_bias, gate_weight, gate_bias;
    };

    const ad::Tensor& mask_weight() const noexcept { return mask_weight_; }
    ad::Tensor& mask_weight() noexcept { return mask_weight_; }
    const ad::Tensor& mask_bias() const noexcept { return mask_bias_; }

private:
    SeparatorConfig config_;
    ad::Tensor encoder_;
    std::vector<Block> blocks_;
    ad::Tensor mask_weight_;
    ad::Tensor mask_bias_;
    ad::Tensor decoder_;
};

/// Number of frames used to cover `length` samples (tail zero-padded).
std::size_t frame_count(std::size_t length, std::size_t frame_size, std::size_t hop);

/// Differentiable SI-SDR of a {length} estimate against a constant target,
/// numerically identical to si_sdr().
ad::Tensor si_sdr_tensor(const ad::Tensor& estimate, std::span<const double> target);

/// Pairwise -SI-SDR between K estimates and K targets: the numeric matrix and
/// the graph tensor behind every entry (row-major).
struct PairwiseLoss {
    LossMatrix values;
    std::vector<ad::Tensor> entries;
};

PairwiseLoss pairwise_loss_tensors(std::span<const ad::Tensor> estimates,
                                   std::span<const Waveform> targets);

/// sum_ij coefficients(i,j) * entries(i,j), skipping zero coefficients.
/// Returns an undefined tensor when every coefficient is zero.
ad::Tensor weighted_pair_loss(const PairwiseLoss& pairs, const LossMatrix& coefficients);

}  // namespace pitlab
