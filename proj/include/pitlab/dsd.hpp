#pragma once

#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>

#include "pitlab/core.hpp"

namespace pitlab {

/// Per-sample record of the best metric seen and the assignment it came with.
struct MemoryBankEntry {
    SampleId sample_id;
    double best_metric = 0.0;  // dB, per-sample SI-SDR under best_assignment
    Permutation best_assignment;
    int updated_epoch = 0;
};

enum class DsdMode { dropout, reorder };

struct DsdConfig {
    /// Relaxation factor; +infinity accepts every switch and reduces DSD to PIT.
    double epsilon = 0.1;
    DsdMode mode = DsdMode::dropout;
    /// When the assignment is unchanged, overwrite best_metric even if it got worse.
    bool always_overwrite_on_keep = false;

    static constexpr double unbounded = std::numeric_limits<double>::infinity();
};

enum class DecisionKind { select_keep, select_update, dropout, reorder };

const char* to_string(DecisionKind kind);

struct Decision {
    DecisionKind kind = DecisionKind::select_keep;
    std::optional<Permutation> assignment_to_use;  // empty for dropout

    bool dropped() const noexcept { return kind == DecisionKind::dropout; }
};

/// Keyed store of MemoryBankEntry. Iteration is in ascending SampleId order.
class MemoryBank {
public:
    const MemoryBankEntry* find(SampleId id) const;
    bool contains(SampleId id) const { return find(id) != nullptr; }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::map<SampleId, MemoryBankEntry>& entries() const noexcept { return entries_; }

    void record(MemoryBankEntry entry);

    /// One line per entry: "sample_id best_metric mapping updated_epoch",
    /// mapping as comma-separated target indices. Lines starting with '#'
    /// are comments.
    void save(std::ostream& out) const;
    static MemoryBank load(std::istream& in);
    void save(const std::string& path) const;
    static MemoryBank load(const std::string& path);

    friend bool operator==(const MemoryBank& a, const MemoryBank& b);

private:
    std::map<SampleId, MemoryBankEntry> entries_;
};

/// m_cur * (1 + sgn(m_cur) * epsilon) > m_best. Always true for epsilon = +inf.
bool relaxed_better(double m_cur, double m_best, double epsilon);

/// Select / dropout / reorder decision for one sample; writes the bank on
/// select_update (and on select_keep when the metric improves).
Decision dsd_decide(SampleId sample, int epoch, const Permutation& current_assignment,
                    double current_metric, MemoryBank& bank, const DsdConfig& config);

/// Loss of one sample under its decision: the selected or stored assignment
/// for select/reorder, 0 for dropout.
double loss_under_decision(const LossMatrix& matrix, const Decision& decision);

struct DsdEpochStats {
    std::size_t dataset_size = 0;
    std::size_t keeps = 0;
    std::size_t updates = 0;
    std::size_t dropouts = 0;
    std::size_t reorders = 0;
    std::set<SampleId> dropped_ids;    // unique samples dropped this epoch
    std::set<SampleId> reordered_ids;

    void add(SampleId id, DecisionKind kind);
};

struct DsdStepResult {
    double effective_loss = 0.0;
    std::size_t kept = 0;
    bool skip_step = false;  // every sample was dropped
};

/// Mean of per-sample losses over samples that were not dropped.
DsdStepResult dsd_apply(std::span<const Decision> decisions, std::span<const double> losses);

/// Unique dropped samples / dataset size.
double drop_rate(const DsdEpochStats& stats);

}  // namespace pitlab
