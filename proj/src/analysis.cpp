#include "pitlab/analysis.hpp"

#include <cmath>

#include <fmt/format.h>

namespace pitlab {

SwitchLog::SwitchLog(std::size_t n_layers) : n_layers_(n_layers) {
    if (n_layers == 0) throw Error("SwitchLog: need at least one layer");
}

void SwitchLog::add_epoch(std::vector<Assignments> per_layer) {
    if (per_layer.size() != n_layers_) {
        throw Error("SwitchLog: expected " + std::to_string(n_layers_) + " layers, got " +
                    std::to_string(per_layer.size()));
    }
    const Assignments& reference = epochs_.empty() ? per_layer.front() : epochs_.front().front();
    for (const auto& layer : per_layer) {
        if (layer.size() != reference.size()) throw Error("SwitchLog: id set changed between epochs");
        for (auto a = layer.begin(), b = reference.begin(); a != layer.end(); ++a, ++b) {
            if (a->first != b->first) throw Error("SwitchLog: id set changed between epochs");
        }
    }
    epochs_.push_back(std::move(per_layer));
}

const SwitchLog::Assignments& SwitchLog::at(std::size_t epoch, std::size_t layer) const {
    if (epoch < 1 || epoch > epochs_.size()) {
        throw Error("SwitchLog: epoch " + std::to_string(epoch) + " not logged");
    }
    if (layer < 1 || layer > n_layers_) throw Error("SwitchLog: layer " + std::to_string(layer) + " out of range");
    return epochs_[epoch - 1][layer - 1];
}

double switching_ratio(const SwitchLog& log, std::size_t epoch, std::size_t layer) {
    if (epoch < 2) throw Error("switching_ratio: needs epoch >= 2");
    const auto& prev = log.at(epoch - 1, layer);
    const auto& cur = log.at(epoch, layer);
    if (cur.empty()) return 0.0;
    std::size_t switched = 0;
    for (auto a = prev.begin(), b = cur.begin(); b != cur.end(); ++a, ++b) {
        if (a->second != b->second) ++switched;
    }
    return 100.0 * static_cast<double>(switched) / static_cast<double>(cur.size());
}

SwitchCurve switch_curve(const SwitchLog& log, std::size_t layer) {
    SwitchCurve curve;
    for (std::size_t e = 2; e <= log.epochs(); ++e) curve.push_back(switching_ratio(log, e, layer));
    return curve;
}

double curve_l1_distance(const SwitchCurve& a, const SwitchCurve& b) {
    if (a.size() != b.size()) throw Error("curve_l1_distance: curves differ in length");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
    return d;
}

std::string DecouplingRow::key() const {
    return std::to_string(layer) + "_vs_" + std::to_string(reference);
}

double DecouplingReport::total() const {
    double t = 0.0;
    for (const auto& r : rows) t += r.distance;
    return t;
}

nlohmann::json DecouplingReport::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    j["unit"] = "percentage points summed over epochs";
    nlohmann::json distances = nlohmann::json::object();
    for (const auto& r : rows) distances[r.key()] = r.distance;
    j["distances"] = distances;
    j["total"] = total();
    return j;
}

DecouplingReport decoupling_report(const SwitchLog& log) {
    if (log.layers() < 2) throw Error("decoupling_report: needs at least two layers");
    const std::size_t last = log.layers();
    const SwitchCurve reference = switch_curve(log, last);
    DecouplingReport report;
    for (std::size_t l = 1; l < last; ++l) {
        report.rows.push_back({l, last, curve_l1_distance(switch_curve(log, l), reference)});
    }
    return report;
}

std::string switching_csv(const SwitchLog& log) {
    std::string out = "epoch";
    for (std::size_t l = 1; l <= log.layers(); ++l) out += fmt::format(",layer_{}", l);
    out += '\n';
    for (std::size_t e = 1; e <= log.epochs(); ++e) {
        out += std::to_string(e);
        for (std::size_t l = 1; l <= log.layers(); ++l) {
            out += ',';
            if (e >= 2) out += fmt::format("{}", switching_ratio(log, e, l));
        }
        out += '\n';
    }
    return out;
}

}  // namespace pitlab
