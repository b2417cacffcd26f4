#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pitlab/analysis.hpp"
#include "pitlab/assignment.hpp"
#include "pitlab/autodiff.hpp"
#include "pitlab/data.hpp"
#include "pitlab/dsd.hpp"
#include "pitlab/lo.hpp"
#include "pitlab/model.hpp"

namespace pitlab {

enum class StrategyKind { pit, pit_fix, sinkpit, dsd, lo, dsd_lo };

const char* to_string(StrategyKind kind);
StrategyKind parse_strategy_kind(const std::string& name);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::pit;
    int fix_epoch = 10;  // pit_fix: epochs 1..fix_epoch use PIT
    double beta_start = 2.0;
    double beta_end = 20.0;
    int sinkhorn_iterations = kDefaultSinkhornIterations;
    DsdConfig dsd;
    std::optional<std::vector<double>> weights;  // lo/dsd_lo; empty = default_weights
    LayerAssignment layer_assignment = LayerAssignment::independent;

    bool uses_dsd() const { return kind == StrategyKind::dsd || kind == StrategyKind::dsd_lo; }
    bool uses_layerwise() const { return kind == StrategyKind::lo || kind == StrategyKind::dsd_lo; }
};

struct SchedulerConfig {
    int patience_early = 10;
    int patience_late = 5;
    int switch_epoch = 80;
};

struct RunConfig {
    DatasetConfig dataset;
    SeparatorConfig model;
    StrategyConfig strategy;
    int epochs = 60;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
    std::string out_dir;
    SchedulerConfig scheduler;
    int checkpoint_every = 10;

    void validate() const;
};

/// Field names mirror RunConfig; missing fields keep their defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& config);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_si_sdri = 0.0;
    std::vector<std::optional<double>> switching;  // percent per layer; empty at epoch 1
    double drop_rate = 0.0;
    double learning_rate = 0.0;
};

struct RunResult {
    RunConfig config;
    std::vector<EpochRecord> records;
    SwitchLog switch_log{1};
    DecouplingReport decoupling;
    MemoryBank bank;
    std::vector<ad::NamedTensor> final_parameters;
    std::size_t total_drops = 0;
    std::size_t total_reorders = 0;
    std::size_t skipped_steps = 0;

    double best_val_si_sdri() const;
    int best_epoch() const;
    nlohmann::json report() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains end-to-end; deterministic for a given config. Writes nothing.
RunResult train(const RunConfig& config, const EpochCallback& on_epoch = {});

/// Trains and writes epochs.csv, switching.csv, decoupling.json, bank.txt,
/// report.json, config.json and periodic checkpoints into config.out_dir.
RunResult run(const RunConfig& config, const EpochCallback& on_epoch = {});

std::string epochs_csv(const std::vector<EpochRecord>& records, std::size_t n_layers);

/// Mean final-layer switching ratio over the last third of the epochs that
/// have a ratio.
double final_third_switching(const std::vector<EpochRecord>& records);

/// Side-by-side summary of completed run directories; deltas are relative
/// to the first run.
nlohmann::json compare(const std::vector<std::string>& run_dirs);

/// Parses an epochs.csv written by run().
std::vector<EpochRecord> read_epochs_csv(const std::string& path);

}  // namespace pitlab
