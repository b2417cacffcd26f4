#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pitlab/harness.hpp"

using namespace pitlab;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(StrategyKind kind, int epochs = 4) {
    RunConfig c;
    c.dataset.n_samples = 12;
    c.dataset.n_validation = 4;
    c.dataset.sample_length = 128;
    c.dataset.seed = 2;
    c.model.hidden_dim = 8;
    c.model.n_blocks = 3;
    c.batch_size = 4;
    c.epochs = epochs;
    c.seed = 2;
    c.strategy.kind = kind;
    return c;
}

std::vector<double> losses(const RunResult& r) {
    std::vector<double> out;
    for (const auto& e : r.records) out.push_back(e.train_loss);
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("strategy names") {
    for (auto k : {StrategyKind::pit, StrategyKind::pit_fix, StrategyKind::sinkpit, StrategyKind::dsd,
                   StrategyKind::lo, StrategyKind::dsd_lo}) {
        CHECK(parse_strategy_kind(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_strategy_kind("upit"), ConfigError);
}

TEST_CASE("config parsing") {
    const auto j = nlohmann::json::parse(R"({
        "epochs": 12,
        "seed": 9,
        "dataset": {"n_samples": 30, "noise": "noisy", "noise_snr_db": 5},
        "model": {"n_blocks": 4},
        "strategy": {"name": "dsd_lo", "epsilon": "inf", "mode": "reorder", "weights": [0.1, 0.2, 0.3, 1.0]}
    })");
    const RunConfig c = parse_run_config(j);
    CHECK(c.epochs == 12);
    CHECK(c.seed == 9);
    CHECK(c.dataset.n_samples == 30);
    CHECK(c.dataset.noise == NoiseCondition::noisy);
    CHECK(c.model.n_blocks == 4);
    CHECK(c.strategy.kind == StrategyKind::dsd_lo);
    CHECK(std::isinf(c.strategy.dsd.epsilon));
    CHECK(c.strategy.dsd.mode == DsdMode::reorder);
    CHECK(c.strategy.weights->size() == 4);

    const RunConfig back = parse_run_config(to_json(c));
    CHECK(to_json(back) == to_json(c));

    CHECK(parse_run_config(nlohmann::json::parse(R"({"strategy": "lo"})")).strategy.kind == StrategyKind::lo);
}

TEST_CASE("config errors") {
    auto bad = [](const char* text) { return parse_run_config(nlohmann::json::parse(text)); };
    CHECK_THROWS_AS(bad(R"({"epoch": 3})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"epochs": "many"})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"epochs": 0})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"strategy": {"name": "dsd", "epsilon": -1}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"strategy": {"name": "pit_fix", "L": 80}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"strategy": {"name": "lo", "weights": [1.0]}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"({"dataset": {"n_sources": 3}, "model": {"n_sources": 2}})"), ConfigError);
    CHECK_THROWS_AS(bad(R"([1, 2])"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("one epoch has no switching ratio") {
    const RunResult r = train(tiny(StrategyKind::pit, 1));
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].switching.empty());
}

TEST_CASE("dsd with unbounded epsilon reproduces pit") {
    RunConfig d = tiny(StrategyKind::dsd);
    d.strategy.dsd.epsilon = DsdConfig::unbounded;
    const RunResult a = train(tiny(StrategyKind::pit)), b = train(d);
    CHECK(losses(a) == losses(b));
    CHECK(b.total_drops == 0);
    for (std::size_t p = 0; p < a.final_parameters.size(); ++p) {
        const auto x = a.final_parameters[p].tensor.values(), y = b.final_parameters[p].tensor.values();
        CHECK(std::equal(x.begin(), x.end(), y.begin()));
    }
}

TEST_CASE("pit_fix with L = epochs reduces to pit") {
    RunConfig f = tiny(StrategyKind::pit_fix);
    f.strategy.fix_epoch = f.epochs;
    CHECK(losses(train(f)) == losses(train(tiny(StrategyKind::pit))));
}

TEST_CASE("pit_fix freezes assignments after L") {
    RunConfig f = tiny(StrategyKind::pit_fix, 5);
    f.strategy.fix_epoch = 2;
    const RunResult r = train(f);
    CHECK(r.bank.size() == f.dataset.n_samples);
    for (const auto& [id, e] : r.bank.entries()) CHECK(e.updated_epoch == 2);
}

TEST_CASE("every strategy trains and logs all layers") {
    for (auto k : {StrategyKind::pit, StrategyKind::pit_fix, StrategyKind::sinkpit, StrategyKind::dsd,
                   StrategyKind::lo, StrategyKind::dsd_lo}) {
        RunConfig c = tiny(k, 3);
        c.strategy.fix_epoch = 2;
        const RunResult r = train(c);
        REQUIRE(r.records.size() == 3);
        CHECK(r.records[2].switching.size() == 3);
        CHECK(r.decoupling.rows.size() == 2);
        for (const auto& e : r.records) {
            CHECK(std::isfinite(e.train_loss));
            CHECK(e.drop_rate >= 0.0);
            CHECK(e.drop_rate <= 1.0);
        }
    }
}

TEST_CASE("training is deterministic") {
    const RunConfig c = tiny(StrategyKind::dsd_lo);
    CHECK(epochs_csv(train(c).records, 3) == epochs_csv(train(c).records, 3));
}

TEST_CASE("run writes the run directory and compare reads it") {
    TempDir tmp("pitlab_unit_run");
    RunConfig a = tiny(StrategyKind::pit);
    a.checkpoint_every = 2;
    a.out_dir = (tmp.path / "a").string();
    RunConfig b = tiny(StrategyKind::dsd);
    b.out_dir = (tmp.path / "b").string();
    const RunResult ra = run(a);
    run(b);

    for (const char* f : {"epochs.csv", "switching.csv", "decoupling.json", "bank.txt", "report.json", "config.json",
                          "checkpoints/epoch_0002.ckpt", "checkpoints/epoch_0004.ckpt"}) {
        CHECK_MESSAGE(fs::exists(tmp.path / "a" / f), f);
    }
    CHECK(parse_run_config(nlohmann::json::parse(slurp(tmp.path / "a" / "config.json"))).epochs == a.epochs);
    const auto csv = slurp(tmp.path / "a" / "epochs.csv");
    CHECK(csv.rfind("epoch,train_loss,val_si_sdri,switch_layer_1,switch_layer_2,switch_layer_3,drop_rate,"
                    "learning_rate\n",
                    0) == 0);
    const auto records = read_epochs_csv((tmp.path / "a" / "epochs.csv").string());
    REQUIRE(records.size() == ra.records.size());
    for (std::size_t e = 0; e < records.size(); ++e) {
        CHECK(records[e].train_loss == ra.records[e].train_loss);
        CHECK(records[e].val_si_sdri == ra.records[e].val_si_sdri);
    }
    const auto report = nlohmann::json::parse(slurp(tmp.path / "a" / "report.json"));
    CHECK(report["best_val_si_sdri"].get<double>() == ra.best_val_si_sdri());

    SUBCASE("self comparison has zero deltas") {
        const auto j = compare({a.out_dir, a.out_dir});
        for (const char* key : {"delta_best_val_si_sdri", "delta_final_third_switching", "delta_decoupling_total"}) {
            CHECK(j["runs"][1][key].get<double>() == 0.0);
        }
    }
    SUBCASE("deltas recomputed from the CSVs") {
        const auto j = compare({a.out_dir, b.out_dir});
        REQUIRE(j["runs"].size() == 2);
        const double sa = final_third_switching(read_epochs_csv(a.out_dir + "/epochs.csv"));
        const double sb = final_third_switching(read_epochs_csv(b.out_dir + "/epochs.csv"));
        CHECK(j["runs"][0]["final_third_switching"].get<double>() == sa);
        CHECK(j["runs"][1]["delta_final_third_switching"].get<double>() == doctest::Approx(sb - sa));
        CHECK(j["runs"][1]["strategy"] == "dsd");
    }
    SUBCASE("compare errors") {
        CHECK_THROWS_AS(compare({a.out_dir}), ConfigError);
        RunConfig c = tiny(StrategyKind::pit, 2);
        c.out_dir = (tmp.path / "c").string();
        run(c);
        CHECK_THROWS_AS(compare({a.out_dir, c.out_dir}), ConfigError);
        CHECK_THROWS(compare({a.out_dir, (tmp.path / "missing").string()}));
    }
}

TEST_CASE("run requires an output directory") {
    CHECK_THROWS_AS(run(tiny(StrategyKind::pit, 1)), ConfigError);
}

TEST_CASE("checkpoint restores the final model") {
    TempDir tmp("pitlab_unit_ckpt_run");
    RunConfig c = tiny(StrategyKind::lo, 2);
    c.checkpoint_every = 2;
    c.out_dir = tmp.path.string();
    const RunResult r = run(c);
    const auto loaded = ad::load_checkpoint((tmp.path / "checkpoints" / "epoch_0002.ckpt").string());
    REQUIRE(loaded.size() == r.final_parameters.size());
    for (std::size_t p = 0; p < loaded.size(); ++p) {
        CHECK(loaded[p].name == r.final_parameters[p].name);
        const auto x = loaded[p].tensor.values(), y = r.final_parameters[p].tensor.values();
        CHECK(std::equal(x.begin(), x.end(), y.begin()));
    }
}

TEST_CASE("final_third_switching") {
    std::vector<EpochRecord> rs(7);
    for (int e = 0; e < 7; ++e) {
        rs[e].epoch = e + 1;
        if (e > 0) rs[e].switching = {std::optional<double>(50.0), std::optional<double>(double(e))};
    }
    // Six ratios (epochs 2..7); the last third is epochs 6 and 7.
    CHECK(final_third_switching(rs) == doctest::Approx((5.0 + 6.0) / 2.0));
}
