#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pitlab/core.hpp"

namespace pitlab {

enum class NoiseCondition { clean, noisy };

struct DatasetConfig {
    std::size_t n_samples = 200;
    std::size_t n_validation = 50;
    std::size_t n_sources = 2;
    std::size_t sample_length = 1024;
    /// Number of disjoint frequency bands in the class pool.
    std::size_t n_classes = 12;
    /// Draw each sample's source classes at random from the pool; when false,
    /// source k always uses band k.
    bool shuffle_classes = true;
    NoiseCondition noise = NoiseCondition::clean;
    double noise_snr_db = 10.0;
    std::uint64_t seed = 0;

    void validate(std::size_t min_length = 1) const;
};

struct MixtureSample {
    SampleId id;
    Waveform mixture;
    std::vector<Waveform> targets;
};

struct Dataset {
    std::vector<MixtureSample> train;
    std::vector<MixtureSample> validation;
};

/// Normalized frequency band [low, high) in cycles/sample for class k of n_classes.
std::pair<double, double> source_band(std::size_t k, std::size_t n_classes);

/// Distinct band classes of the sources of sample `index`, in source order.
std::vector<std::size_t> source_classes(const DatasetConfig& config, std::uint64_t index);

/// Sample with id `index`; a pure function of (config, index).
MixtureSample generate_sample(const DatasetConfig& config, std::uint64_t index);

/// Training samples with ids 0..n_samples-1.
std::vector<MixtureSample> generate(const DatasetConfig& config);

/// Training plus validation; validation ids continue after the training ids.
Dataset generate_split(const DatasetConfig& config);

/// Indices into a dataset of `size` samples, in batches. Every index appears
/// exactly once per epoch; the order is a function of (shuffle_seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t size, std::size_t batch_size,
                                                    int epoch, std::uint64_t shuffle_seed,
                                                    bool shuffle = true);

/// Directory of little-endian float32 files plus manifest.tsv
/// (columns: id, role, length, file).
void export_dataset(const std::vector<MixtureSample>& samples, const std::string& dir);
std::vector<MixtureSample> import_dataset(const std::string& dir);

/// splitmix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace pitlab
