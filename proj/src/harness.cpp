#include "pitlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <fmt/format.h>

namespace pitlab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

const char* to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::pit: return "pit";
        case StrategyKind::pit_fix: return "pit_fix";
        case StrategyKind::sinkpit: return "sinkpit";
        case StrategyKind::dsd: return "dsd";
        case StrategyKind::lo: return "lo";
        case StrategyKind::dsd_lo: return "dsd_lo";
    }
    return "unknown";
}

StrategyKind parse_strategy_kind(const std::string& name) {
    for (auto k : {StrategyKind::pit, StrategyKind::pit_fix, StrategyKind::sinkpit, StrategyKind::dsd,
                   StrategyKind::lo, StrategyKind::dsd_lo}) {
        if (name == to_string(k)) return k;
    }
    throw ConfigError("unknown strategy '" + name + "'");
}

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
    for (const auto& [key, _] : j.items()) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
            throw ConfigError(std::string("unknown field '") + key + "' in " + where);
        }
    }
}

double parse_epsilon(const json& value) {
    if (value.is_string()) {
        const auto s = value.get<std::string>();
        if (s == "inf" || s == "+inf" || s == "infinity") return DsdConfig::unbounded;
        throw ConfigError("epsilon: expected a number or \"inf\", got '" + s + "'");
    }
    if (!value.is_number()) throw ConfigError("epsilon: expected a number or \"inf\"");
    return value.get<double>();
}

json epsilon_json(double eps) { return std::isinf(eps) ? json("inf") : json(eps); }

StrategyConfig parse_strategy(const json& j) {
    StrategyConfig s;
    if (j.is_string()) {
        s.kind = parse_strategy_kind(j.get<std::string>());
        return s;
    }
    if (!j.is_object()) throw ConfigError("strategy: expected a name or an object");
    reject_unknown(j,
                   {"name", "L", "beta_start", "beta_end", "iterations", "epsilon", "mode",
                    "always_overwrite_on_keep", "weights", "layer_assignment"},
                   "strategy");
    std::string name = "pit";
    read_field(j, "name", name);
    s.kind = parse_strategy_kind(name);
    read_field(j, "L", s.fix_epoch);
    read_field(j, "beta_start", s.beta_start);
    read_field(j, "beta_end", s.beta_end);
    read_field(j, "iterations", s.sinkhorn_iterations);
    if (j.contains("epsilon")) s.dsd.epsilon = parse_epsilon(j.at("epsilon"));
    if (j.contains("mode")) {
        const auto mode = j.at("mode").get<std::string>();
        if (mode == "dropout") s.dsd.mode = DsdMode::dropout;
        else if (mode == "reorder") s.dsd.mode = DsdMode::reorder;
        else throw ConfigError("strategy.mode must be 'dropout' or 'reorder'");
    }
    read_field(j, "always_overwrite_on_keep", s.dsd.always_overwrite_on_keep);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        if (w.is_string()) {
            if (w.get<std::string>() != "default") throw ConfigError("strategy.weights: expected \"default\" or an array");
        } else {
            std::vector<double> values;
            read_field(j, "weights", values);
            s.weights = std::move(values);
        }
    }
    if (j.contains("layer_assignment")) {
        const auto la = j.at("layer_assignment").get<std::string>();
        if (la == "independent") s.layer_assignment = LayerAssignment::independent;
        else if (la == "tied_to_final") s.layer_assignment = LayerAssignment::tied_to_final;
        else throw ConfigError("strategy.layer_assignment must be 'independent' or 'tied_to_final'");
    }
    return s;
}

json strategy_json(const StrategyConfig& s) {
    json j{{"name", to_string(s.kind)}};
    switch (s.kind) {
        case StrategyKind::pit_fix: j["L"] = s.fix_epoch; break;
        case StrategyKind::sinkpit:
            j["beta_start"] = s.beta_start;
            j["beta_end"] = s.beta_end;
            j["iterations"] = s.sinkhorn_iterations;
            break;
        default: break;
    }
    if (s.uses_dsd()) {
        j["epsilon"] = epsilon_json(s.dsd.epsilon);
        j["mode"] = s.dsd.mode == DsdMode::dropout ? "dropout" : "reorder";
        j["always_overwrite_on_keep"] = s.dsd.always_overwrite_on_keep;
    }
    if (s.uses_layerwise()) {
        j["weights"] = s.weights ? json(*s.weights) : json("default");
        j["layer_assignment"] =
            s.layer_assignment == LayerAssignment::independent ? "independent" : "tied_to_final";
    }
    return j;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    dataset.validate(model.frame_size);
    if (dataset.n_sources != model.n_sources) {
        throw ConfigError("dataset.n_sources and model.n_sources differ");
    }
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (scheduler.patience_early < 1 || scheduler.patience_late < 1) {
        throw ConfigError("scheduler patience must be >= 1");
    }
    if (strategy.kind == StrategyKind::pit_fix && (strategy.fix_epoch < 1 || strategy.fix_epoch > epochs)) {
        throw ConfigError("pit_fix: L must lie in [1, epochs]");
    }
    if (strategy.kind == StrategyKind::sinkpit &&
        (!(strategy.beta_start > 0.0) || !(strategy.beta_end > 0.0) || strategy.sinkhorn_iterations < 1)) {
        throw ConfigError("sinkpit: betas must be > 0 and iterations >= 1");
    }
    if (strategy.uses_dsd() && (std::isnan(strategy.dsd.epsilon) || strategy.dsd.epsilon < 0.0)) {
        throw ConfigError("dsd: epsilon must be >= 0 or \"inf\"");
    }
    if (strategy.uses_layerwise() && strategy.weights) {
        if (strategy.weights->size() != model.n_blocks) {
            throw ConfigError("lo: weights count must equal model.n_blocks");
        }
        try {
            LayerWeights check(*strategy.weights);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }
}

RunConfig parse_run_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    reject_unknown(j,
                   {"dataset", "model", "strategy", "epochs", "batch_size", "learning_rate", "clip_norm",
                    "seed", "out_dir", "scheduler", "checkpoint_every"},
                   "config");
    RunConfig c;
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown(d,
                       {"n_samples", "n_validation", "n_sources", "sample_length", "n_classes", "shuffle_classes",
                        "noise", "noise_snr_db", "seed"},
                       "dataset");
        read_field(d, "n_samples", c.dataset.n_samples);
        read_field(d, "n_validation", c.dataset.n_validation);
        read_field(d, "n_sources", c.dataset.n_sources);
        read_field(d, "sample_length", c.dataset.sample_length);
        read_field(d, "n_classes", c.dataset.n_classes);
        read_field(d, "shuffle_classes", c.dataset.shuffle_classes);
        read_field(d, "noise_snr_db", c.dataset.noise_snr_db);
        read_field(d, "seed", c.dataset.seed);
        if (d.contains("noise")) {
            const auto n = d.at("noise").get<std::string>();
            if (n == "clean") c.dataset.noise = NoiseCondition::clean;
            else if (n == "noisy") c.dataset.noise = NoiseCondition::noisy;
            else throw ConfigError("dataset.noise must be 'clean' or 'noisy'");
        }
    }
    c.model.n_sources = c.dataset.n_sources;
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, {"frame_size", "hop", "hidden_dim", "n_blocks", "n_sources", "symmetric_mask_init"},
                       "model");
        read_field(m, "frame_size", c.model.frame_size);
        read_field(m, "hop", c.model.hop);
        read_field(m, "hidden_dim", c.model.hidden_dim);
        read_field(m, "n_blocks", c.model.n_blocks);
        read_field(m, "n_sources", c.model.n_sources);
        read_field(m, "symmetric_mask_init", c.model.symmetric_mask_init);
    }
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy"));
    read_field(j, "epochs", c.epochs);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "clip_norm", c.clip_norm);
    read_field(j, "seed", c.seed);
    read_field(j, "out_dir", c.out_dir);
    read_field(j, "checkpoint_every", c.checkpoint_every);
    if (j.contains("scheduler")) {
        const json& s = j.at("scheduler");
        reject_unknown(s, {"patience_early", "patience_late", "switch_epoch"}, "scheduler");
        read_field(s, "patience_early", c.scheduler.patience_early);
        read_field(s, "patience_late", c.scheduler.patience_late);
        read_field(s, "switch_epoch", c.scheduler.switch_epoch);
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

json to_json(const RunConfig& c) {
    return json{
        {"dataset",
         {{"n_samples", c.dataset.n_samples},
          {"n_validation", c.dataset.n_validation},
          {"n_sources", c.dataset.n_sources},
          {"sample_length", c.dataset.sample_length},
          {"n_classes", c.dataset.n_classes},
          {"shuffle_classes", c.dataset.shuffle_classes},
          {"noise", c.dataset.noise == NoiseCondition::clean ? "clean" : "noisy"},
          {"noise_snr_db", c.dataset.noise_snr_db},
          {"seed", c.dataset.seed}}},
        {"model",
         {{"frame_size", c.model.frame_size},
          {"hop", c.model.hop},
          {"hidden_dim", c.model.hidden_dim},
          {"n_blocks", c.model.n_blocks},
          {"n_sources", c.model.n_sources},
          {"symmetric_mask_init", c.model.symmetric_mask_init}}},
        {"strategy", strategy_json(c.strategy)},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"clip_norm", c.clip_norm},
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"scheduler",
         {{"patience_early", c.scheduler.patience_early},
          {"patience_late", c.scheduler.patience_late},
          {"switch_epoch", c.scheduler.switch_epoch}}},
        {"checkpoint_every", c.checkpoint_every},
    };
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct SampleContribution {
    bool dropped = false;
    double loss = 0.0;
    std::vector<LossMatrix> coefficients;  // one per trained layer
};

LossMatrix numeric_pairwise(std::span<const ad::Tensor> estimates, std::span<const Waveform> targets) {
    const std::size_t n = estimates.size();
    LossMatrix m(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(i, j) = -si_sdr(estimates[i].values(), targets[j].samples());
    return m;
}

class Trainer {
public:
    explicit Trainer(const RunConfig& config)
        : config_(config),
          data_(generate_split(config.dataset)),
          model_(config.model),
          weights_(config.strategy.weights ? LayerWeights(*config.strategy.weights)
                                           : default_weights(config.model.n_blocks)),
          scheduler_(config.learning_rate, config.scheduler.patience_early, config.scheduler.patience_late,
                     config.scheduler.switch_epoch) {
        model_.init(mix_seed(config.seed, 0x5EEDULL));
        optimizer_.emplace(model_.parameters(), config.learning_rate);
        result_.config = config;
        result_.switch_log = SwitchLog(config.model.n_blocks);
        all_layers_.resize(config.model.n_blocks);
        for (std::size_t i = 0; i < all_layers_.size(); ++i) all_layers_[i] = i;
        last_layer_ = {config.model.n_blocks - 1};
    }

    RunResult run(const EpochCallback& on_epoch, const std::function<void(int)>& after_epoch) {
        for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
            EpochRecord record = train_epoch(epoch);
            evaluate(epoch, record);
            scheduler_.step(epoch, record.val_si_sdri);
            optimizer_->set_learning_rate(scheduler_.learning_rate());
            result_.records.push_back(record);
            if (on_epoch) on_epoch(record);
            if (after_epoch) after_epoch(epoch);
        }
        if (config_.model.n_blocks >= 2) result_.decoupling = decoupling_report(result_.switch_log);
        for (const auto& p : model_.named_parameters()) {
            result_.final_parameters.push_back({p.name, p.tensor.detach()});
        }
        return std::move(result_);
    }

    const SeparatorModel& model() const { return model_; }
    const MemoryBank& bank() const { return result_.bank; }

private:
    EpochRecord train_epoch(int epoch) {
        EpochRecord record;
        record.epoch = epoch;
        record.learning_rate = optimizer_->learning_rate();

        DsdEpochStats stats;
        stats.dataset_size = data_.train.size();
        double loss_sum = 0.0;
        std::size_t steps = 0;

        for (const auto& batch : epoch_batches(data_.train.size(), config_.batch_size, epoch, config_.seed)) {
            std::vector<std::vector<PairwiseLoss>> pairs;
            std::vector<SampleContribution> contributions;
            std::vector<Decision> decisions;
            std::vector<double> losses;
            std::vector<std::span<const double>> mixtures;
            for (std::size_t index : batch) mixtures.push_back(data_.train[index].mixture.samples());
            const auto& layers = config_.strategy.uses_layerwise() ? all_layers_ : last_layer_;
            std::vector<TensorLayers> batch_outputs = model_.forward_batch(mixtures, layers);
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const MixtureSample& sample = data_.train[batch[b]];
                const TensorLayers& outputs = batch_outputs[b];
                std::vector<PairwiseLoss> sample_pairs;
                std::vector<LossMatrix> matrices;
                for (const auto& layer : outputs) {
                    sample_pairs.push_back(pairwise_loss_tensors(layer, sample.targets));
                    matrices.push_back(sample_pairs.back().values);
                }
                SampleContribution c = contribution(sample.id, epoch, matrices, stats);
                decisions.push_back(c.dropped ? Decision{DecisionKind::dropout, std::nullopt}
                                              : Decision{DecisionKind::select_keep, std::nullopt});
                losses.push_back(c.loss);
                pairs.push_back(std::move(sample_pairs));
                contributions.push_back(std::move(c));
            }

            const DsdStepResult step = dsd_apply(decisions, losses);
            if (step.skip_step) {
                ++result_.skipped_steps;
                continue;
            }
            const double inv_kept = 1.0 / static_cast<double>(step.kept);
            ad::Tensor total;
            for (std::size_t s = 0; s < contributions.size(); ++s) {
                if (contributions[s].dropped) continue;
                for (std::size_t l = 0; l < pairs[s].size(); ++l) {
                    ad::Tensor term = weighted_pair_loss(pairs[s][l], contributions[s].coefficients[l]);
                    if (!term.defined()) continue;
                    term = ad::scale(term, inv_kept);
                    total = total.defined() ? total + term : term;
                }
            }
            if (total.defined()) {
                optimizer_->zero_grad();
                total.backward();
                clip_global_norm(optimizer_->params(), config_.clip_norm);
                optimizer_->step();
            }
            loss_sum += step.effective_loss;
            ++steps;
        }

        record.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
        record.drop_rate = drop_rate(stats);
        result_.total_drops += stats.dropouts;
        result_.total_reorders += stats.reorders;
        return record;
    }

    SampleContribution contribution(SampleId id, int epoch, std::span<const LossMatrix> matrices,
                                    DsdEpochStats& stats) {
        const StrategyConfig& s = config_.strategy;
        SampleContribution c;
        auto hard = [&c](const AssignmentResult& r) {
            c.loss = r.total_loss;
            c.coefficients = {r.pair_weights()};
        };
        switch (s.kind) {
            case StrategyKind::pit:
                hard(pit_select(matrices.back()));
                break;
            case StrategyKind::pit_fix:
                if (epoch <= s.fix_epoch) {
                    const AssignmentResult r = pit_select(matrices.back());
                    if (epoch == s.fix_epoch) result_.bank.record({id, -r.total_loss, r.permutation, epoch});
                    hard(r);
                } else {
                    const MemoryBankEntry* fixed = result_.bank.find(id);
                    if (!fixed) throw Error("pit_fix: no stored assignment for sample " + std::to_string(id.value));
                    hard(fixed_assignment_loss(matrices.back(), fixed->best_assignment));
                }
                break;
            case StrategyKind::sinkpit: {
                const double beta = sinkpit_beta(epoch, config_.epochs, s.beta_start, s.beta_end);
                hard(sinkpit_select(matrices.back(), beta, s.sinkhorn_iterations));
                break;
            }
            case StrategyKind::dsd: {
                const AssignmentResult r = pit_select(matrices.back());
                const Decision d = dsd_decide(id, epoch, r.permutation, -r.total_loss, result_.bank, s.dsd);
                stats.add(id, d.kind);
                if (d.dropped()) {
                    c.dropped = true;
                } else {
                    hard(fixed_assignment_loss(matrices.back(), *d.assignment_to_use));
                }
                break;
            }
            case StrategyKind::lo: {
                const LayerwiseResult r = layerwise_loss(matrices, weights_, pit_select, s.layer_assignment);
                c.loss = r.loss;
                c.coefficients = layerwise_coefficients(r, weights_);
                break;
            }
            case StrategyKind::dsd_lo: {
                const LoDsdResult r = lo_with_dsd(matrices, weights_, id, epoch, result_.bank, s.dsd, &stats);
                if (r.decision.dropped()) {
                    c.dropped = true;
                } else {
                    c.loss = r.loss;
                    c.coefficients = layerwise_coefficients(r.layers, weights_);
                }
                break;
            }
        }
        return c;
    }

    void evaluate(int epoch, EpochRecord& record) {
        ad::NoGradGuard no_grad;
        const std::size_t n_layers = config_.model.n_blocks;
        std::vector<SwitchLog::Assignments> per_layer(n_layers);
        for_chunks(data_.train, all_layers_, [&](const MixtureSample& sample, const TensorLayers& outputs) {
            for (std::size_t l = 0; l < n_layers; ++l) {
                per_layer[l].emplace(sample.id, pit_select(numeric_pairwise(outputs[l], sample.targets)).permutation);
            }
        });
        result_.switch_log.add_epoch(std::move(per_layer));
        if (epoch >= 2) {
            for (std::size_t l = 1; l <= n_layers; ++l) {
                record.switching.push_back(switching_ratio(result_.switch_log, static_cast<std::size_t>(epoch), l));
            }
        }

        double improvement = 0.0;
        for_chunks(data_.validation, last_layer_, [&](const MixtureSample& sample, const TensorLayers& outputs) {
            const auto& estimates = outputs.back();
            const Permutation perm = pit_select(numeric_pairwise(estimates, sample.targets)).permutation;
            double per_sample = 0.0;
            for (std::size_t k = 0; k < estimates.size(); ++k) {
                const auto& target = sample.targets[perm[k]].samples();
                per_sample += si_sdr(estimates[k].values(), target) - si_sdr(sample.mixture.samples(), target);
            }
            improvement += per_sample / static_cast<double>(estimates.size());
        });
        record.val_si_sdri = data_.validation.empty() ? 0.0 : improvement / static_cast<double>(data_.validation.size());
    }

    template <class F>
    void for_chunks(const std::vector<MixtureSample>& samples, const std::vector<std::size_t>& layers, F&& visit) {
        constexpr std::size_t kChunk = 32;
        for (std::size_t start = 0; start < samples.size(); start += kChunk) {
            const std::size_t end = std::min(samples.size(), start + kChunk);
            std::vector<std::span<const double>> mixtures;
            for (std::size_t i = start; i < end; ++i) mixtures.push_back(samples[i].mixture.samples());
            const std::vector<TensorLayers> outputs = model_.forward_batch(mixtures, layers);
            for (std::size_t i = start; i < end; ++i) visit(samples[i], outputs[i - start]);
        }
    }

    RunConfig config_;
    Dataset data_;
    SeparatorModel model_;
    LayerWeights weights_;
    ad::PlateauScheduler scheduler_;
    std::optional<ad::Adam> optimizer_;
    RunResult result_;
    std::vector<std::size_t> all_layers_;
    std::vector<std::size_t> last_layer_;

    friend RunResult pitlab::run(const RunConfig&, const EpochCallback&);
};

// Graph tensors are freed every step; keep glibc from returning them to the OS.
void retain_freed_memory() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 256 << 20);
    });
#endif
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

double RunResult::best_val_si_sdri() const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& r : records) best = std::max(best, r.val_si_sdri);
    return best;
}

int RunResult::best_epoch() const {
    int epoch = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& r : records) {
        if (r.val_si_sdri > best) {
            best = r.val_si_sdri;
            epoch = r.epoch;
        }
    }
    return epoch;
}

json RunResult::report() const {
    json j;
    j["strategy"] = strategy_json(config.strategy);
    j["epochs"] = records.size();
    j["best_val_si_sdri"] = best_val_si_sdri();
    j["best_epoch"] = best_epoch();
    j["final_val_si_sdri"] = records.empty() ? 0.0 : records.back().val_si_sdri;
    j["final_train_loss"] = records.empty() ? 0.0 : records.back().train_loss;
    j["final_third_switching"] = final_third_switching(records);
    j["total_drops"] = total_drops;
    j["total_reorders"] = total_reorders;
    j["skipped_steps"] = skipped_steps;
    j["decoupling"] = decoupling.to_json();
    return j;
}

RunResult train(const RunConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    retain_freed_memory();
    Trainer trainer(config);
    return trainer.run(on_epoch, {});
}

RunResult run(const RunConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (config.out_dir.empty()) throw ConfigError("run: out_dir is required");
    const fs::path out(config.out_dir);
    std::error_code ec;
    fs::create_directories(out / "checkpoints", ec);
    if (ec) throw Error("run: cannot create " + out.string() + ": " + ec.message());
    write_text(out / "config.json", to_json(config).dump(2) + "\n");

    retain_freed_memory();
    Trainer trainer(config);
    auto checkpoint = [&](int epoch) {
        if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
            ad::save_checkpoint((out / "checkpoints" / fmt::format("epoch_{:04d}.ckpt", epoch)).string(),
                                trainer.model().named_parameters());
        }
    };
    RunResult result = trainer.run(on_epoch, checkpoint);

    write_text(out / "epochs.csv", epochs_csv(result.records, config.model.n_blocks));
    write_text(out / "switching.csv", switching_csv(result.switch_log));
    write_text(out / "decoupling.json", result.decoupling.to_json().dump(2) + "\n");
    result.bank.save((out / "bank.txt").string());
    write_text(out / "report.json", result.report().dump(2) + "\n");
    return result;
}

std::string epochs_csv(const std::vector<EpochRecord>& records, std::size_t n_layers) {
    std::string out = "epoch,train_loss,val_si_sdri";
    for (std::size_t l = 1; l <= n_layers; ++l) out += fmt::format(",switch_layer_{}", l);
    out += ",drop_rate,learning_rate\n";
    for (const auto& r : records) {
        out += std::to_string(r.epoch) + ',' + fmt_double(r.train_loss) + ',' + fmt_double(r.val_si_sdri);
        for (std::size_t l = 0; l < n_layers; ++l) {
            out += ',';
            if (l < r.switching.size() && r.switching[l]) out += fmt_double(*r.switching[l]);
        }
        out += ',' + fmt_double(r.drop_rate) + ',' + fmt_double(r.learning_rate) + '\n';
    }
    return out;
}

std::vector<EpochRecord> read_epochs_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error("empty epochs.csv: " + path);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 5 || header[0] != "epoch") throw Error("malformed epochs.csv header: " + path);
    const std::size_t n_layers = header.size() - 5;
    std::vector<EpochRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != header.size()) throw Error("malformed epochs.csv row in " + path);
        EpochRecord r;
        r.epoch = std::stoi(cells[0]);
        r.train_loss = std::stod(cells[1]);
        r.val_si_sdri = std::stod(cells[2]);
        bool any = false;
        std::vector<std::optional<double>> sw;
        for (std::size_t l = 0; l < n_layers; ++l) {
            const auto& c = cells[3 + l];
            if (c.empty()) {
                sw.emplace_back();
            } else {
                sw.emplace_back(std::stod(c));
                any = true;
            }
        }
        if (any) r.switching = std::move(sw);
        r.drop_rate = std::stod(cells[3 + n_layers]);
        r.learning_rate = std::stod(cells[4 + n_layers]);
        records.push_back(std::move(r));
    }
    return records;
}

double final_third_switching(const std::vector<EpochRecord>& records) {
    std::vector<double> final_layer;
    for (const auto& r : records) {
        if (!r.switching.empty() && r.switching.back()) final_layer.push_back(*r.switching.back());
    }
    if (final_layer.empty()) return 0.0;
    const std::size_t window = std::max<std::size_t>(1, records.size() / 3);
    const std::size_t take = std::min(window, final_layer.size());
    double sum = 0.0;
    for (std::size_t i = final_layer.size() - take; i < final_layer.size(); ++i) sum += final_layer[i];
    return sum / static_cast<double>(take);
}

json compare(const std::vector<std::string>& run_dirs) {
    if (run_dirs.size() < 2) throw ConfigError("compare: need at least two runs");
    struct Summary {
        std::string dir;
        std::string strategy;
        double best = 0.0;
        double switching = 0.0;
        json decoupling;
        double decoupling_total = 0.0;
        std::size_t epochs = 0;
    };
    std::vector<Summary> runs;
    for (const auto& dir : run_dirs) {
        Summary s;
        s.dir = dir;
        const auto records = read_epochs_csv((fs::path(dir) / "epochs.csv").string());
        s.epochs = records.size();
        s.best = -std::numeric_limits<double>::infinity();
        for (const auto& r : records) s.best = std::max(s.best, r.val_si_sdri);
        s.switching = final_third_switching(records);
        std::ifstream dj(fs::path(dir) / "decoupling.json");
        if (!dj) throw Error("compare: missing decoupling.json in " + dir);
        json d;
        dj >> d;
        s.decoupling = d.value("distances", json::object());
        s.decoupling_total = d.value("total", 0.0);
        std::ifstream rj(fs::path(dir) / "report.json");
        if (rj) {
            json rep;
            rj >> rep;
            s.strategy = rep.contains("strategy") ? rep["strategy"].value("name", "") : "";
        }
        runs.push_back(std::move(s));
    }
    for (const auto& s : runs) {
        if (s.epochs != runs.front().epochs) throw ConfigError("compare: runs have different epoch counts");
    }

    json out;
    out["metric_notes"] = {
        {"best_val_si_sdri", "dB, final layer, best epoch"},
        {"final_third_switching", "percent, final layer, mean over the last third of epochs"},
        {"decoupling", "L1 distance between switching curves, percentage points summed over epochs"}};
    out["runs"] = json::array();
    const Summary& base = runs.front();
    for (const auto& s : runs) {
        out["runs"].push_back({
            {"dir", s.dir},
            {"strategy", s.strategy},
            {"epochs", s.epochs},
            {"best_val_si_sdri", s.best},
            {"final_third_switching", s.switching},
            {"decoupling", s.decoupling},
            {"decoupling_total", s.decoupling_total},
            {"delta_best_val_si_sdri", s.best - base.best},
            {"delta_final_third_switching", s.switching - base.switching},
            {"delta_decoupling_total", s.decoupling_total - base.decoupling_total},
        });
    }
    return out;
}

}  // namespace pitlab
