#include <doctest.h>

#include <random>

#include "pitlab/analysis.hpp"

using namespace pitlab;

namespace {

SwitchLog::Assignments assign(std::initializer_list<Permutation> perms) {
    SwitchLog::Assignments a;
    std::uint64_t id = 0;
    for (const auto& p : perms) a.emplace(SampleId{id++}, p);
    return a;
}

const Permutation I{0, 1};
const Permutation S{1, 0};

}  // namespace

TEST_CASE("switching_ratio examples") {
    SwitchLog log(1);
    log.add_epoch({assign({I, I, I, I})});
    log.add_epoch({assign({I, I, I, I})});
    log.add_epoch({assign({I, S, I, I})});
    CHECK(switching_ratio(log, 2, 1) == 0.0);
    CHECK(switching_ratio(log, 3, 1) == 25.0);
    CHECK_THROWS_AS(switching_ratio(log, 1, 1), Error);
    CHECK_THROWS_AS(switching_ratio(log, 4, 1), Error);
    CHECK_THROWS_AS(switching_ratio(log, 2, 2), Error);
    CHECK(switch_curve(log, 1) == SwitchCurve{0.0, 25.0});
}

TEST_CASE("switching_ratio matches a recount on random logs") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        SwitchLog log(2);
        std::vector<std::vector<std::vector<int>>> raw;  // epoch, layer, sample -> bit
        for (int e = 0; e < 6; ++e) {
            std::vector<SwitchLog::Assignments> layers;
            raw.emplace_back();
            for (int l = 0; l < 2; ++l) {
                SwitchLog::Assignments a;
                raw.back().emplace_back();
                for (std::uint64_t s = 0; s < 30; ++s) {
                    const int bit = static_cast<int>(rng() % 2);
                    raw.back().back().push_back(bit);
                    a.emplace(SampleId{s}, bit ? S : I);
                }
                layers.push_back(std::move(a));
            }
            log.add_epoch(std::move(layers));
        }
        for (std::size_t e = 2; e <= 6; ++e)
            for (std::size_t l = 1; l <= 2; ++l) {
                int changed = 0;
                for (std::size_t s = 0; s < 30; ++s) changed += raw[e - 1][l - 1][s] != raw[e - 2][l - 1][s];
                CHECK(switching_ratio(log, e, l) == doctest::Approx(100.0 * changed / 30.0));
            }
    }
}

TEST_CASE("switching ratio ignores the permutation encoding") {
    const Permutation A{0, 1, 2}, B{2, 0, 1}, C{1, 2, 0};
    SwitchLog plain(1), relabeled(1);
    const std::vector<std::vector<Permutation>> epochs{{A, B, C}, {A, C, C}, {B, C, A}};
    for (const auto& e : epochs) {
        plain.add_epoch({assign({e[0], e[1], e[2]})});
        relabeled.add_epoch({assign({e[0].inverse(), e[1].inverse(), e[2].inverse()})});
    }
    CHECK(switch_curve(plain, 1) == switch_curve(relabeled, 1));
}

TEST_CASE("add_epoch validation") {
    SwitchLog log(2);
    CHECK_THROWS_AS(log.add_epoch({assign({I})}), Error);
    log.add_epoch({assign({I, I}), assign({I, I})});
    CHECK_THROWS_AS(log.add_epoch({assign({I, I, I}), assign({I, I, I})}), Error);
}

TEST_CASE("curve_l1_distance") {
    CHECK(curve_l1_distance({10, 20, 30}, {10, 20, 30}) == 0.0);
    CHECK(curve_l1_distance({10, 20, 30}, {10, 10, 10}) == 30.0);
    CHECK_THROWS_AS(curve_l1_distance({1, 2}, {1}), Error);

    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> d(0.0, 100.0);
    for (int i = 0; i < 200; ++i) {
        SwitchCurve a(8), b(8), c(8);
        for (std::size_t k = 0; k < 8; ++k) {
            a[k] = d(rng);
            b[k] = d(rng);
            c[k] = d(rng);
        }
        CHECK(curve_l1_distance(a, b) == curve_l1_distance(b, a));
        CHECK(curve_l1_distance(a, b) > 0.0);
        CHECK(curve_l1_distance(a, c) <= curve_l1_distance(a, b) + curve_l1_distance(b, c) + 1e-9);
    }
}

TEST_CASE("decoupling_report") {
    SUBCASE("agreeing layers") {
        SwitchLog log(3);
        log.add_epoch({assign({I, I}), assign({I, I}), assign({I, I})});
        log.add_epoch({assign({S, I}), assign({S, I}), assign({S, I})});
        const auto r = decoupling_report(log);
        REQUIRE(r.rows.size() == 2);
        CHECK(r.total() == 0.0);
        CHECK(r.rows[0].key() == "1_vs_3");
    }
    SUBCASE("hand-counted two-layer log") {
        SwitchLog log(2);
        // Layer 1 switches 2 of 4 samples each epoch; layer 2 switches 1 then 0.
        log.add_epoch({assign({I, I, I, I}), assign({I, I, I, I})});
        log.add_epoch({assign({S, S, I, I}), assign({S, I, I, I})});
        log.add_epoch({assign({I, I, I, I}), assign({S, I, I, I})});
        const auto r = decoupling_report(log);
        REQUIRE(r.rows.size() == 1);
        CHECK(r.rows[0].distance == 75.0);  // |50-25| + |50-0|
        const auto j = r.to_json();
        CHECK(j["distances"]["1_vs_2"].get<double>() == 75.0);
        CHECK(j["total"].get<double>() == 75.0);
    }
    SUBCASE("single layer is rejected") {
        SwitchLog log(1);
        log.add_epoch({assign({I})});
        CHECK_THROWS_AS(decoupling_report(log), Error);
    }
}

TEST_CASE("switching_csv") {
    SwitchLog log(2);
    log.add_epoch({assign({I, I}), assign({I, I})});
    log.add_epoch({assign({S, I}), assign({I, I})});
    CHECK(switching_csv(log) == "epoch,layer_1,layer_2\n1,,\n2,50,0\n");
}
