#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pitlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for malformed user configuration (CLI maps it to exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Guard added to log/ratio denominators. Scaled by the reference energy so
/// the metrics stay exactly scale invariant.
inline constexpr double kMetricGuard = 1e-8;

/// A real-valued signal with at least one finite sample.
class Waveform {
public:
    Waveform() = default;
    explicit Waveform(std::vector<double> samples);
    Waveform(std::initializer_list<double> samples);

    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    std::span<const double> samples() const noexcept { return samples_; }
    const std::vector<double>& vector() const noexcept { return samples_; }
    double operator[](std::size_t i) const { return samples_[i]; }

    double energy() const noexcept;

    friend bool operator==(const Waveform&, const Waveform&) = default;

private:
    std::vector<double> samples_;
};

/// Stable identifier of a training sample; identical across epochs.
struct SampleId {
    std::uint64_t value = 0;
    friend auto operator<=>(const SampleId&, const SampleId&) = default;
};

/// mapping[i] is the target index assigned to estimate i.
class Permutation {
public:
    Permutation() = default;
    explicit Permutation(std::vector<int> mapping);
    Permutation(std::initializer_list<int> mapping);

    static Permutation identity(std::size_t n);

    std::size_t size() const noexcept { return mapping_.size(); }
    int operator[](std::size_t i) const { return mapping_[i]; }
    const std::vector<int>& mapping() const noexcept { return mapping_; }

    Permutation inverse() const;
    std::string to_string() const;  // "1,0,2"
    static Permutation parse(const std::string& text);

    friend auto operator<=>(const Permutation&, const Permutation&) = default;

private:
    std::vector<int> mapping_;
};

/// N x N pairwise loss; (i, j) is the loss of pairing estimate i with target j.
class LossMatrix {
public:
    LossMatrix() = default;
    explicit LossMatrix(std::size_t n, double fill = 0.0);
    LossMatrix(std::initializer_list<std::initializer_list<double>> rows);
    /// Row-major entries; throws unless entries.size() == n * n.
    LossMatrix(std::size_t n, std::vector<double> entries);

    std::size_t size() const noexcept { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return entries_[i * n_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return entries_[i * n_ + j]; }
    std::span<const double> entries() const noexcept { return entries_; }

    /// Columns reordered so that result(i, j) = (*this)(i, column_order[j]).
    LossMatrix permute_columns(const Permutation& column_order) const;

    friend bool operator==(const LossMatrix&, const LossMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::vector<double> entries_;
};

enum class Metric { si_sdr, sdr };

/// Scale-invariant SDR in dB.
double si_sdr(const Waveform& estimate, const Waveform& target);
double si_sdr(std::span<const double> estimate, std::span<const double> target);

/// Plain SDR in dB (not invariant to rescaling the estimate).
double sdr(const Waveform& estimate, const Waveform& target);
double sdr(std::span<const double> estimate, std::span<const double> target);

double evaluate(Metric metric, std::span<const double> estimate, std::span<const double> target);

/// metric(estimate, target) - metric(mixture, target).
double metric_improvement(const Waveform& estimate, const Waveform& target,
                          const Waveform& mixture, Metric metric);

/// entries(i, j) = -si_sdr(estimates[i], targets[j]).
LossMatrix pairwise_loss_matrix(std::span<const Waveform> estimates,
                                std::span<const Waveform> targets);

}  // namespace pitlab
