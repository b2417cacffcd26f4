#include "pitlab/dsd.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "pitlab/assignment.hpp"

namespace pitlab {

const char* to_string(DecisionKind kind) {
    switch (kind) {
        case DecisionKind::select_keep: return "select_keep";
        case DecisionKind::select_update: return "select_update";
        case DecisionKind::dropout: return "dropout";
        case DecisionKind::reorder: return "reorder";
    }
    return "unknown";
}

const MemoryBankEntry* MemoryBank::find(SampleId id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

void MemoryBank::record(MemoryBankEntry entry) {
    if (!std::isfinite(entry.best_metric)) throw Error("MemoryBank: best_metric must be finite");
    if (entry.best_assignment.size() == 0) throw Error("MemoryBank: empty assignment");
    const SampleId id = entry.sample_id;
    entries_.insert_or_assign(id, std::move(entry));
}

void MemoryBank::save(std::ostream& out) const {
    out << "# sample_id best_metric mapping updated_epoch\n";
    for (const auto& [id, e] : entries_) {
        out << fmt::format("{} {} {} {}\n", id.value, e.best_metric, e.best_assignment.to_string(),
                           e.updated_epoch);
    }
}

MemoryBank MemoryBank::load(std::istream& in) {
    MemoryBank bank;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::uint64_t id = 0;
        double metric = 0.0;
        std::string mapping;
        int epoch = 0;
        if (!(fields >> id >> metric >> mapping >> epoch)) {
            throw Error("MemoryBank: malformed line " + std::to_string(line_no));
        }
        bank.record({SampleId{id}, metric, Permutation::parse(mapping), epoch});
    }
    return bank;
}

void MemoryBank::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("MemoryBank: cannot write " + path);
    save(out);
}

MemoryBank MemoryBank::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("MemoryBank: cannot read " + path);
    return load(in);
}

bool operator==(const MemoryBank& a, const MemoryBank& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (auto ia = a.entries_.begin(), ib = b.entries_.begin(); ia != a.entries_.end(); ++ia, ++ib) {
        const auto& x = ia->second;
        const auto& y = ib->second;
        if (x.sample_id != y.sample_id || x.best_metric != y.best_metric ||
            x.best_assignment != y.best_assignment || x.updated_epoch != y.updated_epoch) {
            return false;
        }
    }
    return true;
}

bool relaxed_better(double m_cur, double m_best, double epsilon) {
    if (std::isnan(epsilon) || epsilon < 0.0) throw Error("relaxed_better: epsilon must be >= 0");
    if (std::isinf(epsilon)) return true;
    const double sign = (m_cur > 0.0) - (m_cur < 0.0);
    return m_cur * (1.0 + sign * epsilon) > m_best;
}

Decision dsd_decide(SampleId sample, int epoch, const Permutation& current_assignment,
                    double current_metric, MemoryBank& bank, const DsdConfig& config) {
    if (epoch < 1) throw Error("dsd_decide: epochs are 1-based");
    const MemoryBankEntry* stored = bank.find(sample);
    if (stored == nullptr) {
        if (epoch != 1) {
            throw Error("dsd_decide: sample " + std::to_string(sample.value) +
                        " was not seen in the first epoch");
        }
        bank.record({sample, current_metric, current_assignment, epoch});
        return {DecisionKind::select_update, current_assignment};
    }
    if (stored->best_assignment.size() != current_assignment.size()) {
        throw Error("dsd_decide: assignment size changed for sample " + std::to_string(sample.value));
    }

    if (stored->best_assignment == current_assignment) {
        if (config.always_overwrite_on_keep || current_metric > stored->best_metric) {
            bank.record({sample, current_metric, current_assignment, epoch});
        }
        return {DecisionKind::select_keep, current_assignment};
    }

    if (relaxed_better(current_metric, stored->best_metric, config.epsilon)) {
        bank.record({sample, current_metric, current_assignment, epoch});
        return {DecisionKind::select_update, current_assignment};
    }
    if (config.mode == DsdMode::reorder) {
        return {DecisionKind::reorder, stored->best_assignment};
    }
    return {DecisionKind::dropout, std::nullopt};
}

double loss_under_decision(const LossMatrix& matrix, const Decision& decision) {
    if (decision.dropped()) return 0.0;
    return assignment_loss(matrix, *decision.assignment_to_use);
}

void DsdEpochStats::add(SampleId id, DecisionKind kind) {
    switch (kind) {
        case DecisionKind::select_keep: ++keeps; break;
        case DecisionKind::select_update: ++updates; break;
        case DecisionKind::dropout:
            ++dropouts;
            dropped_ids.insert(id);
            break;
        case DecisionKind::reorder:
            ++reorders;
            reordered_ids.insert(id);
            break;
    }
}

DsdStepResult dsd_apply(std::span<const Decision> decisions, std::span<const double> losses) {
    if (decisions.size() != losses.size()) {
        throw Error("dsd_apply: one loss per decision is required");
    }
    DsdStepResult result;
    double sum = 0.0;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        if (decisions[i].dropped()) continue;
        sum += losses[i];
        ++result.kept;
    }
    if (result.kept == 0) {
        result.skip_step = true;
        return result;
    }
    result.effective_loss = sum / static_cast<double>(result.kept);
    return result;
}

double drop_rate(const DsdEpochStats& stats) {
    if (stats.dataset_size == 0) throw Error("drop_rate: dataset size is zero");
    return static_cast<double>(stats.dropped_ids.size()) / static_cast<double>(stats.dataset_size);
}

}  // namespace pitlab
