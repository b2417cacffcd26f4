#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pitlab/core.hpp"

namespace pitlab {

/// Per-epoch, per-layer PIT assignment of every training sample.
/// Epochs and layers are 1-based, matching the CSV column names.
class SwitchLog {
public:
    using Assignments = std::map<SampleId, Permutation>;

    explicit SwitchLog(std::size_t n_layers);

    /// Appends the next epoch; `per_layer` has one entry per layer, all with
    /// the same id set as earlier epochs.
    void add_epoch(std::vector<Assignments> per_layer);

    std::size_t epochs() const noexcept { return epochs_.size(); }
    std::size_t layers() const noexcept { return n_layers_; }
    const Assignments& at(std::size_t epoch, std::size_t layer) const;

private:
    std::size_t n_layers_;
    std::vector<std::vector<Assignments>> epochs_;
};

/// Percent of samples whose assignment differs between epochs e-1 and e.
double switching_ratio(const SwitchLog& log, std::size_t epoch, std::size_t layer);

/// Switching ratios of one layer for epochs 2..E.
using SwitchCurve = std::vector<double>;

SwitchCurve switch_curve(const SwitchLog& log, std::size_t layer);

/// Sum over epochs of |a_e - b_e|, in percentage points.
double curve_l1_distance(const SwitchCurve& a, const SwitchCurve& b);

struct DecouplingRow {
    std::size_t layer = 0;
    std::size_t reference = 0;  // the last layer
    double distance = 0.0;

    std::string key() const;  // "i_vs_N"
};

struct DecouplingReport {
    std::vector<DecouplingRow> rows;

    double total() const;
    nlohmann::json to_json() const;
};

/// "i vs N" L1 distances between each earlier layer's curve and the last layer's.
DecouplingReport decoupling_report(const SwitchLog& log);

/// CSV with columns epoch, layer_1..layer_N; epoch 1 has empty ratio cells.
std::string switching_csv(const SwitchLog& log);

}  // namespace pitlab
