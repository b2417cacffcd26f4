#include "pitlab/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace pitlab {

namespace fs = std::filesystem;

namespace {

constexpr double kBandLow = 0.02;   // cycles/sample
constexpr double kBandHigh = 0.42;
constexpr double kBandGap = 0.03;   // spacing between adjacent class bands

Waveform make_source(std::mt19937_64& rng, std::size_t cls, std::size_t n_classes, std::size_t length) {
    const auto [low, high] = source_band(cls, n_classes);
    std::uniform_int_distribution<int> count_dist(2, 4);
    std::uniform_real_distribution<double> freq_dist(low, high);
    std::uniform_real_distribution<double> amp_dist(0.3, 1.0);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> env_rate_dist(0.5, 2.0);  // cycles per sample length
    std::uniform_real_distribution<double> gain_db_dist(-5.0, 5.0);

    const int n_tones = count_dist(rng);
    std::vector<double> x(length, 0.0);
    for (int s = 0; s < n_tones; ++s) {
        const double f = freq_dist(rng);
        const double a = amp_dist(rng);
        const double phi = phase_dist(rng);
        for (std::size_t t = 0; t < length; ++t) {
            x[t] += a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) + phi);
        }
    }
    const double env_rate = env_rate_dist(rng);
    const double env_phase = phase_dist(rng);
    const double gain = std::pow(10.0, gain_db_dist(rng) / 20.0);
    for (std::size_t t = 0; t < length; ++t) {
        const double pos = static_cast<double>(t) / static_cast<double>(length);
        const double envelope = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * env_rate * pos + env_phase);
        x[t] *= gain * envelope;
    }
    return Waveform(std::move(x));
}

void write_f32(const fs::path& path, std::span<const double> values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("export_dataset: cannot write " + path.string());
    for (double v : values) {
        auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        char bytes[4];
        std::memcpy(bytes, &bits, 4);
        out.write(bytes, 4);
    }
}

std::vector<double> read_f32(const fs::path& path, std::size_t length) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("import_dataset: cannot read " + path.string());
    std::vector<double> values(length);
    for (auto& v : values) {
        char bytes[4];
        if (!in.read(bytes, 4)) throw Error("import_dataset: truncated file " + path.string());
        std::uint32_t bits;
        std::memcpy(&bits, bytes, 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        v = static_cast<double>(std::bit_cast<float>(bits));
    }
    return values;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void DatasetConfig::validate(std::size_t min_length) const {
    if (n_samples < 1) throw ConfigError("dataset: n_samples must be >= 1");
    if (n_sources < 2 || n_sources > 3) throw ConfigError("dataset: n_sources must be 2 or 3");
    if (n_classes < n_sources) throw ConfigError("dataset: n_classes must be >= n_sources");
    if (sample_length < std::max<std::size_t>(min_length, 1)) {
        throw ConfigError("dataset: sample_length " + std::to_string(sample_length) +
                          " is shorter than the model frame (" + std::to_string(min_length) + ")");
    }
    if (noise == NoiseCondition::noisy && !std::isfinite(noise_snr_db)) {
        throw ConfigError("dataset: noise_snr_db must be finite");
    }
}

std::pair<double, double> source_band(std::size_t k, std::size_t n_classes) {
    if (k >= n_classes) throw Error("source_band: class index out of range");
    const double width = (kBandHigh - kBandLow) / static_cast<double>(n_classes);
    const double lo = kBandLow + static_cast<double>(k) * width;
    const double gap = std::min(kBandGap, 0.25 * width);
    return {lo + 0.5 * gap, lo + width - 0.5 * gap};
}

std::vector<std::size_t> source_classes(const DatasetConfig& config, std::uint64_t index) {
    std::vector<std::size_t> classes(config.n_classes);
    std::iota(classes.begin(), classes.end(), 0);
    if (config.shuffle_classes) {
        std::mt19937_64 rng(mix_seed(mix_seed(config.seed, index), 0xC1A55ULL));
        std::shuffle(classes.begin(), classes.end(), rng);
    }
    classes.resize(config.n_sources);
    return classes;
}

MixtureSample generate_sample(const DatasetConfig& config, std::uint64_t index) {
    MixtureSample sample;
    sample.id = SampleId{index};
    const std::size_t length = config.sample_length;
    std::vector<double> mix(length, 0.0);
    const std::vector<std::size_t> classes = source_classes(config, index);
    for (std::size_t k = 0; k < config.n_sources; ++k) {
        std::mt19937_64 rng(mix_seed(mix_seed(config.seed, index), k));
        Waveform source = make_source(rng, classes[k], config.n_classes, length);
        for (std::size_t t = 0; t < length; ++t) mix[t] += source[t];
        sample.targets.push_back(std::move(source));
    }
    if (config.noise == NoiseCondition::noisy) {
        std::mt19937_64 rng(mix_seed(mix_seed(config.seed, index), 0xA0153ULL));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> noise(length);
        for (double& v : noise) v = normal(rng);
        const double signal_energy = std::inner_product(mix.begin(), mix.end(), mix.begin(), 0.0);
        const double noise_energy = std::inner_product(noise.begin(), noise.end(), noise.begin(), 0.0);
        const double gain =
            std::sqrt(signal_energy / (noise_energy * std::pow(10.0, config.noise_snr_db / 10.0)));
        for (std::size_t t = 0; t < length; ++t) mix[t] += gain * noise[t];
    }
    sample.mixture = Waveform(std::move(mix));
    return sample;
}

std::vector<MixtureSample> generate(const DatasetConfig& config) {
    config.validate();
    std::vector<MixtureSample> out;
    out.reserve(config.n_samples);
    for (std::size_t j = 0; j < config.n_samples; ++j) out.push_back(generate_sample(config, j));
    return out;
}

Dataset generate_split(const DatasetConfig& config) {
    Dataset d;
    d.train = generate(config);
    for (std::size_t j = 0; j < config.n_validation; ++j) {
        d.validation.push_back(generate_sample(config, config.n_samples + j));
    }
    return d;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t size, std::size_t batch_size,
                                                    int epoch, std::uint64_t shuffle_seed,
                                                    bool shuffle) {
    if (batch_size < 1) throw Error("epoch_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(size);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        std::mt19937_64 rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < size; start += batch_size) {
        const std::size_t end = std::min(size, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

void export_dataset(const std::vector<MixtureSample>& samples, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.tsv");
    if (!manifest) throw Error("export_dataset: cannot write manifest in " + dir);
    manifest << "id\trole\tlength\tfile\n";
    for (const auto& s : samples) {
        const std::string stem = std::to_string(s.id.value);
        const std::string mix_file = stem + "_mixture.f32";
        write_f32(fs::path(dir) / mix_file, s.mixture.samples());
        manifest << s.id.value << "\tmixture\t" << s.mixture.size() << '\t' << mix_file << '\n';
        for (std::size_t k = 0; k < s.targets.size(); ++k) {
            const std::string file = stem + "_target" + std::to_string(k) + ".f32";
            write_f32(fs::path(dir) / file, s.targets[k].samples());
            manifest << s.id.value << "\ttarget" << k << '\t' << s.targets[k].size() << '\t' << file << '\n';
        }
    }
}

std::vector<MixtureSample> import_dataset(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.tsv");
    if (!manifest) throw Error("import_dataset: no manifest.tsv in " + dir);
    std::string line;
    std::getline(manifest, line);  // header
    std::map<std::uint64_t, MixtureSample> by_id;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::uint64_t id = 0;
        std::string role, file;
        std::size_t length = 0;
        if (!(fields >> id >> role >> length >> file)) throw Error("import_dataset: bad manifest line");
        Waveform w(read_f32(fs::path(dir) / file, length));
        MixtureSample& s = by_id[id];
        s.id = SampleId{id};
        if (role == "mixture") {
            s.mixture = std::move(w);
        } else if (role.rfind("target", 0) == 0) {
            const std::size_t k = std::stoul(role.substr(6));
            if (s.targets.size() <= k) s.targets.resize(k + 1);
            s.targets[k] = std::move(w);
        } else {
            throw Error("import_dataset: unknown role " + role);
        }
    }
    std::vector<MixtureSample> out;
    for (auto& [id, s] : by_id) {
        if (s.mixture.empty() || s.targets.empty()) {
            throw Error("import_dataset: incomplete sample " + std::to_string(id));
        }
        for (const auto& t : s.targets) {
            if (t.empty()) throw Error("import_dataset: missing target for sample " + std::to_string(id));
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pitlab
