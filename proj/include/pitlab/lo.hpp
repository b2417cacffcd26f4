#pragma once

#include <vector>

#include "pitlab/assignment.hpp"
#include "pitlab/dsd.hpp"

namespace pitlab {

/// One non-negative weight per sequential block; the last must be positive.
class LayerWeights {
public:
    explicit LayerWeights(std::vector<double> weights);

    std::size_t size() const noexcept { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }
    const std::vector<double>& values() const noexcept { return weights_; }

    /// Weight vector (0, ..., 0, 1): trains the final layer only.
    static LayerWeights final_only(std::size_t n_blocks);

private:
    std::vector<double> weights_;
};

/// w_i = i / n_blocks for i = 1..n_blocks.
LayerWeights default_weights(std::size_t n_blocks);

/// per_layer[l][k] is source estimate k reconstructed from block l's output.
struct LayerOutputs {
    std::vector<std::vector<Waveform>> per_layer;

    std::size_t layers() const noexcept { return per_layer.size(); }
};

enum class LayerAssignment {
    independent,     // each layer runs its own selector
    tied_to_final,   // every layer reuses the final layer's permutation
};

struct LayerwiseResult {
    double loss = 0.0;
    std::vector<AssignmentResult> per_layer;
    std::vector<Permutation> per_layer_assignments;
    std::vector<double> per_layer_losses;
};

/// loss = (1/N) * sum_i w_i * selector(layer_i).total_loss
LayerwiseResult layerwise_loss(std::span<const LossMatrix> layer_matrices,
                               const LayerWeights& weights, const Selector& selector = pit_select,
                               LayerAssignment assignment = LayerAssignment::independent);

LayerwiseResult layerwise_loss(const LayerOutputs& outputs, std::span<const Waveform> targets,
                               const LayerWeights& weights, const Selector& selector = pit_select,
                               LayerAssignment assignment = LayerAssignment::independent);

/// Per-layer coefficient matrices C_l with result.loss == sum_l sum_ij C_l(i,j) * M_l(i,j).
std::vector<LossMatrix> layerwise_coefficients(const LayerwiseResult& result,
                                               const LayerWeights& weights);

struct LoDsdResult {
    double loss = 0.0;  // 0 when dropped
    Decision decision;
    LayerwiseResult layers;
    double final_metric = 0.0;  // mean SI-SDR of the final layer under its PIT choice
};

/// DSD driven by the final layer's PIT choice; reorder applies the stored
/// permutation to every layer, dropout removes the whole sample.
LoDsdResult lo_with_dsd(std::span<const LossMatrix> layer_matrices, const LayerWeights& weights,
                        SampleId sample, int epoch, MemoryBank& bank, const DsdConfig& config,
                        DsdEpochStats* stats = nullptr);

}  // namespace pitlab
