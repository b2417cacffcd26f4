#include "pitlab/lo.hpp"

#include <cmath>

namespace pitlab {

LayerWeights::LayerWeights(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw Error("LayerWeights: need at least one weight");
    for (double w : weights_) {
        if (!std::isfinite(w) || w < 0.0) throw Error("LayerWeights: weights must be finite and >= 0");
    }
    if (!(weights_.back() > 0.0)) throw Error("LayerWeights: last weight must be > 0");
}

LayerWeights LayerWeights::final_only(std::size_t n_blocks) {
    if (n_blocks == 0) throw Error("LayerWeights: n_blocks must be >= 1");
    std::vector<double> w(n_blocks, 0.0);
    w.back() = 1.0;
    return LayerWeights(std::move(w));
}

LayerWeights default_weights(std::size_t n_blocks) {
    if (n_blocks == 0) throw Error("default_weights: n_blocks must be >= 1");
    std::vector<double> w(n_blocks);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        w[i] = static_cast<double>(i + 1) / static_cast<double>(n_blocks);
    }
    return LayerWeights(std::move(w));
}

LayerwiseResult layerwise_loss(std::span<const LossMatrix> layer_matrices,
                               const LayerWeights& weights, const Selector& selector,
                               LayerAssignment assignment) {
    if (layer_matrices.size() != weights.size()) {
        throw Error("layerwise_loss: " + std::to_string(weights.size()) + " weights for " +
                    std::to_string(layer_matrices.size()) + " layers");
    }
    const std::size_t n_layers = layer_matrices.size();
    LayerwiseResult out;
    out.per_layer.resize(n_layers);

    if (assignment == LayerAssignment::tied_to_final) {
        out.per_layer.back() = selector(layer_matrices.back());
        const Permutation& tied = out.per_layer.back().permutation;
        for (std::size_t l = 0; l + 1 < n_layers; ++l) {
            out.per_layer[l] = fixed_assignment_loss(layer_matrices[l], tied);
        }
    } else {
        for (std::size_t l = 0; l < n_layers; ++l) out.per_layer[l] = selector(layer_matrices[l]);
    }

    double acc = 0.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        out.per_layer_assignments.push_back(out.per_layer[l].permutation);
        out.per_layer_losses.push_back(out.per_layer[l].total_loss);
        acc += weights[l] * out.per_layer[l].total_loss;
    }
    out.loss = acc / static_cast<double>(n_layers);
    return out;
}

LayerwiseResult layerwise_loss(const LayerOutputs& outputs, std::span<const Waveform> targets,
                               const LayerWeights& weights, const Selector& selector,
                               LayerAssignment assignment) {
    std::vector<LossMatrix> matrices;
    matrices.reserve(outputs.layers());
    for (const auto& layer : outputs.per_layer) {
        if (layer.size() != targets.size()) {
            throw Error("layerwise_loss: layer source count does not match target count");
        }
        matrices.push_back(pairwise_loss_matrix(layer, targets));
    }
    return layerwise_loss(matrices, weights, selector, assignment);
}

std::vector<LossMatrix> layerwise_coefficients(const LayerwiseResult& result,
                                               const LayerWeights& weights) {
    const std::size_t n_layers = result.per_layer.size();
    if (n_layers != weights.size()) throw Error("layerwise_coefficients: weight count mismatch");
    std::vector<LossMatrix> coefficients;
    coefficients.reserve(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        LossMatrix c = result.per_layer[l].pair_weights();
        const double scale = weights[l] / static_cast<double>(n_layers);
        for (std::size_t i = 0; i < c.size(); ++i)
            for (std::size_t j = 0; j < c.size(); ++j) c(i, j) *= scale;
        coefficients.push_back(std::move(c));
    }
    return coefficients;
}

LoDsdResult lo_with_dsd(std::span<const LossMatrix> layer_matrices, const LayerWeights& weights,
                        SampleId sample, int epoch, MemoryBank& bank, const DsdConfig& config,
                        DsdEpochStats* stats) {
    LoDsdResult out;
    out.layers = layerwise_loss(layer_matrices, weights);
    const AssignmentResult& final_choice = out.layers.per_layer.back();
    out.final_metric = -final_choice.total_loss;
    out.decision = dsd_decide(sample, epoch, final_choice.permutation, out.final_metric, bank, config);
    if (stats) stats->add(sample, out.decision.kind);

    switch (out.decision.kind) {
        case DecisionKind::dropout:
            out.loss = 0.0;
            break;
        case DecisionKind::reorder:
            out.layers = layerwise_loss(layer_matrices, weights, [&](const LossMatrix& m) {
                return fixed_assignment_loss(m, *out.decision.assignment_to_use);
            });
            out.loss = out.layers.loss;
            break;
        default:
            out.loss = out.layers.loss;
            break;
    }
    return out;
}

}  // namespace pitlab
