#pragma once

#include <functional>

#include "pitlab/core.hpp"

namespace pitlab {

/// Doubly stochastic soft assignment produced by Sinkhorn normalization.
struct SinkhornPlan {
    LossMatrix gamma;  // reused as a dense N x N container of weights
    double beta = 1.0;
    int iterations = 0;
};

struct AssignmentResult {
    Permutation permutation;
    double total_loss = 0.0;  // mean of the selected pairwise losses
    bool soft = false;
    SinkhornPlan plan;        // populated only when soft

    /// Per-pair coefficients c with total_loss == sum_ij c(i,j) * entries(i,j).
    LossMatrix pair_weights() const;
};

using Selector = std::function<AssignmentResult(const LossMatrix&)>;

/// Largest N for which pit_select enumerates every permutation.
inline constexpr std::size_t kExhaustiveLimit = 4;

/// Mean of entries(i, mapping[i]), summed in estimate order.
double assignment_loss(const LossMatrix& matrix, const Permutation& permutation);

/// Enumerates all N! permutations; ties go to the lexicographically smallest.
AssignmentResult exhaustive_select(const LossMatrix& matrix);

/// O(N^3) Kuhn-Munkres with potentials.
AssignmentResult hungarian_select(const LossMatrix& matrix);

/// Exhaustive for N <= kExhaustiveLimit, Hungarian above.
AssignmentResult pit_select(const LossMatrix& matrix);

/// Loss under a caller-supplied permutation (the PIT-fix step).
AssignmentResult fixed_assignment_loss(const LossMatrix& matrix, const Permutation& fixed);

struct SinkPitResult {
    double soft_loss = 0.0;
    SinkhornPlan plan;
};

inline constexpr int kDefaultSinkhornIterations = 50;

/// Sinkhorn-relaxed PIT: gamma normalizes exp(-beta * entries) alternately by
/// rows and columns (in the log domain); soft_loss = sum(gamma .* entries) / N.
SinkPitResult sinkpit_loss(const LossMatrix& matrix, double beta,
                           int iterations = kDefaultSinkhornIterations);

/// SinkPIT as a selector; the reported permutation is the row-wise argmax of gamma.
AssignmentResult sinkpit_select(const LossMatrix& matrix, double beta,
                                int iterations = kDefaultSinkhornIterations);

/// Geometric ramp from beta_start to beta_end over the first half of the
/// epochs, constant afterwards. Epochs are 1-based.
double sinkpit_beta(int epoch, int total_epochs, double beta_start, double beta_end);

}  // namespace pitlab
