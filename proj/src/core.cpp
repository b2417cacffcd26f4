#include "pitlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pitlab {

namespace {

void check_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error(std::string(what) + ": non-finite sample");
        }
    }
}

void check_pair(std::span<const double> estimate, std::span<const double> target) {
    if (estimate.size() != target.size()) {
        throw Error("metric: estimate/target length mismatch (" + std::to_string(estimate.size()) +
                    " vs " + std::to_string(target.size()) + ")");
    }
    if (target.empty()) {
        throw Error("metric: empty signal");
    }
}

double squared_norm(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc;
}

}  // namespace

Waveform::Waveform(std::vector<double> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw Error("Waveform: length must be >= 1");
    check_finite(samples_, "Waveform");
}

Waveform::Waveform(std::initializer_list<double> samples)
    : Waveform(std::vector<double>(samples)) {}

double Waveform::energy() const noexcept { return squared_norm(samples_); }

Permutation::Permutation(std::vector<int> mapping) : mapping_(std::move(mapping)) {
    std::vector<char> seen(mapping_.size(), 0);
    for (int m : mapping_) {
        if (m < 0 || static_cast<std::size_t>(m) >= mapping_.size() || seen[m]) {
            throw Error("Permutation: mapping is not a bijection");
        }
        seen[m] = 1;
    }
}

Permutation::Permutation(std::initializer_list<int> mapping)
    : Permutation(std::vector<int>(mapping)) {}

Permutation Permutation::identity(std::size_t n) {
    std::vector<int> m(n);
    std::iota(m.begin(), m.end(), 0);
    return Permutation(std::move(m));
}

Permutation Permutation::inverse() const {
    std::vector<int> inv(mapping_.size());
    for (std::size_t i = 0; i < mapping_.size(); ++i) inv[mapping_[i]] = static_cast<int>(i);
    return Permutation(std::move(inv));
}

std::string Permutation::to_string() const {
    std::string out;
    for (std::size_t i = 0; i < mapping_.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(mapping_[i]);
    }
    return out;
}

Permutation Permutation::parse(const std::string& text) {
    std::vector<int> m;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            m.push_back(std::stoi(item, &used));
            if (used != item.size()) throw Error("trailing characters");
        } catch (const std::exception&) {
            throw Error("Permutation: cannot parse '" + text + "'");
        }
    }
    return Permutation(std::move(m));
}

LossMatrix::LossMatrix(std::size_t n, double fill) : n_(n), entries_(n * n, fill) {}

LossMatrix::LossMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : n_(rows.size()) {
    entries_.reserve(n_ * n_);
    for (const auto& row : rows) {
        if (row.size() != n_) throw Error("LossMatrix: matrix is not square");
        entries_.insert(entries_.end(), row.begin(), row.end());
    }
    check_finite(entries_, "LossMatrix");
}

LossMatrix::LossMatrix(std::size_t n, std::vector<double> entries)
    : n_(n), entries_(std::move(entries)) {
    if (entries_.size() != n_ * n_) throw Error("LossMatrix: matrix is not square");
    check_finite(entries_, "LossMatrix");
}

LossMatrix LossMatrix::permute_columns(const Permutation& column_order) const {
    if (column_order.size() != n_) throw Error("LossMatrix: permutation size mismatch");
    LossMatrix out(n_);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j) out(i, j) = (*this)(i, column_order[j]);
    return out;
}

double si_sdr(std::span<const double> estimate, std::span<const double> target) {
    check_pair(estimate, target);
    const double tt = squared_norm(target);
    if (tt == 0.0) throw Error("si_sdr: target is identically zero");
    const double ee = squared_norm(estimate);
    if (ee == 0.0) return 0.0;  // limit of the guarded ratio: guard / guard

    double et = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) et += estimate[i] * target[i];
    const double alpha = et * (1.0 / tt);

    double projected = 0.0;
    double residual = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double s = alpha * target[i];
        const double e = estimate[i] - s;
        projected += s * s;
        residual += e * e;
    }
    const double guard = kMetricGuard * ee;
    return 10.0 * (std::log10(projected + guard) - std::log10(residual + guard));
}

double si_sdr(const Waveform& estimate, const Waveform& target) {
    return si_sdr(estimate.samples(), target.samples());
}

double sdr(std::span<const double> estimate, std::span<const double> target) {
    check_pair(estimate, target);
    const double tt = squared_norm(target);
    if (tt == 0.0) throw Error("sdr: target is identically zero");
    double err = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = target[i] - estimate[i];
        err += d * d;
    }
    const double guard = kMetricGuard * tt;
    return 10.0 * (std::log10(tt + guard) - std::log10(err + guard));
}

double sdr(const Waveform& estimate, const Waveform& target) {
    return sdr(estimate.samples(), target.samples());
}

double evaluate(Metric metric, std::span<const double> estimate, std::span<const double> target) {
    return metric == Metric::si_sdr ? si_sdr(estimate, target) : sdr(estimate, target);
}

double metric_improvement(const Waveform& estimate, const Waveform& target,
                          const Waveform& mixture, Metric metric) {
    return evaluate(metric, estimate.samples(), target.samples()) -
           evaluate(metric, mixture.samples(), target.samples());
}

LossMatrix pairwise_loss_matrix(std::span<const Waveform> estimates,
                                std::span<const Waveform> targets) {
    if (estimates.empty() || estimates.size() != targets.size()) {
        throw Error("pairwise_loss_matrix: need equal, non-zero estimate/target counts");
    }
    const std::size_t n = estimates.size();
    LossMatrix m(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(i, j) = -si_sdr(estimates[i], targets[j]);
    return m;
}

}  // namespace pitlab
