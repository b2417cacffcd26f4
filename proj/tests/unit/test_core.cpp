#include <doctest.h>

#include <cmath>
#include <random>

#include "pitlab/core.hpp"

using namespace pitlab;

namespace {

// Independent SI-SDR: explicit projection, no guard.
double si_sdr_reference(const std::vector<double>& est, const std::vector<double>& tgt) {
    long double et = 0, tt = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        et += static_cast<long double>(est[i]) * tgt[i];
        tt += static_cast<long double>(tgt[i]) * tgt[i];
    }
    long double proj = 0, res = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const long double s = et / tt * tgt[i];
        proj += s * s;
        res += (est[i] - s) * (est[i] - s);
    }
    return static_cast<double>(10.0L * std::log10(proj / res));
}

std::vector<double> noise(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("si_sdr hand examples") {
    CHECK(std::abs(si_sdr(Waveform{1, 1}, Waveform{1, 0})) < 1e-6);
    CHECK(si_sdr(Waveform{1, 0.5}, Waveform{1, 0}) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-6));
}

TEST_CASE("si_sdr perfect reconstruction hits the guard maximum") {
    const Waveform t{0.3, -1.2, 0.7, 2.0};
    const double top = si_sdr(t, t);
    CHECK(top == doctest::Approx(80.0).epsilon(1e-6));
    CHECK(si_sdr(Waveform{0.6, -2.4, 1.4, 4.0}, t) == doctest::Approx(top).epsilon(1e-12));
    CHECK(sdr(t, t) == doctest::Approx(top).epsilon(1e-6));
}

TEST_CASE("si_sdr matches an unguarded reference on random pairs") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 200; ++i) {
        const auto t = noise(rng, 50);
        auto e = noise(rng, 50);
        for (std::size_t k = 0; k < e.size(); ++k) e[k] += t[k];
        CHECK(si_sdr(Waveform(e), Waveform(t)) == doctest::Approx(si_sdr_reference(e, t)).epsilon(1e-7));
    }
}

TEST_CASE("si_sdr is invariant to positive rescaling") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const auto t = noise(rng, 64);
        auto e = noise(rng, 64);
        const double base = si_sdr(Waveform(e), Waveform(t));
        for (auto& x : e) x *= 37.5;
        CHECK(std::abs(si_sdr(Waveform(e), Waveform(t)) - base) < 1e-9);
    }
}

TEST_CASE("sdr hand examples") {
    CHECK(std::abs(sdr(Waveform{1, 1}, Waveform{1, 0})) < 1e-6);
    CHECK(std::abs(sdr(Waveform{0, 0}, Waveform{3, 4})) < 1e-6);
    // Not scale invariant.
    CHECK(sdr(Waveform{2, 1}, Waveform{1, 0}) != doctest::Approx(sdr(Waveform{1, 0.5}, Waveform{1, 0})));
}

TEST_CASE("metric errors") {
    CHECK_THROWS_AS(si_sdr(Waveform{1, 2}, Waveform{1, 2, 3}), Error);
    CHECK_THROWS_AS(si_sdr(Waveform{1, 2}, Waveform{0, 0}), Error);
    CHECK_THROWS_AS(sdr(Waveform{1, 2}, Waveform{0, 0}), Error);
    CHECK_THROWS_AS(Waveform(std::vector<double>{}), Error);
    CHECK_THROWS_AS(Waveform({1.0, NAN}), Error);
}

TEST_CASE("metric_improvement") {
    const Waveform target{1, 0, -1, 0.5};
    const Waveform mixture{1.5, 0.7, -0.2, 0.1};
    for (Metric m : {Metric::si_sdr, Metric::sdr}) {
        CHECK(metric_improvement(mixture, target, mixture, m) == 0.0);
        CHECK(metric_improvement(target, target, mixture, m) > 0.0);
    }
    const double top = si_sdr(target, target);
    CHECK(metric_improvement(target, target, mixture, Metric::si_sdr) ==
          doctest::Approx(top - si_sdr(mixture, target)));
}

TEST_CASE("pairwise_loss_matrix equals element-wise evaluation") {
    std::mt19937_64 rng(8);
    std::vector<Waveform> est, tgt;
    for (int k = 0; k < 3; ++k) {
        est.emplace_back(noise(rng, 32));
        tgt.emplace_back(noise(rng, 32));
    }
    const LossMatrix m = pairwise_loss_matrix(est, tgt);
    REQUIRE(m.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(m(i, j) == -si_sdr(est[i], tgt[j]));

    const std::vector<Waveform> one{Waveform{1, 2, 3}};
    CHECK(pairwise_loss_matrix(one, one).size() == 1);
    CHECK_THROWS_AS(pairwise_loss_matrix(est, std::span(tgt).first(2)), Error);
}

TEST_CASE("pairwise_loss_matrix orthogonal targets") {
    const std::vector<Waveform> s{Waveform{1, 0, 0, 0}, Waveform{0, 1, 0, 0}};
    const LossMatrix m = pairwise_loss_matrix(s, s);
    CHECK(m(0, 0) == m(1, 1));
    CHECK(m(0, 1) > m(0, 0));
    CHECK(m(1, 0) > m(1, 1));
}

TEST_CASE("Permutation") {
    const Permutation p{2, 0, 1};
    CHECK(p.to_string() == "2,0,1");
    CHECK(Permutation::parse("2,0,1") == p);
    const Permutation inv = p.inverse();
    for (std::size_t i = 0; i < 3; ++i) CHECK(inv[static_cast<std::size_t>(p[i])] == static_cast<int>(i));
    CHECK(Permutation::identity(3) == Permutation{0, 1, 2});
    CHECK_THROWS_AS(Permutation({0, 0}), Error);
    CHECK_THROWS_AS(Permutation({0, 2}), Error);
    CHECK_THROWS(Permutation::parse("0,x"));
    CHECK(Permutation{0, 1} < Permutation{1, 0});
}

TEST_CASE("LossMatrix") {
    const LossMatrix m{{3, 1}, {2, 4}};
    CHECK(m(0, 1) == 1);
    CHECK(m(1, 0) == 2);
    const LossMatrix swapped = m.permute_columns(Permutation{1, 0});
    CHECK(swapped(0, 0) == 1);
    CHECK(swapped(1, 1) == 2);
    CHECK_THROWS_AS(LossMatrix({{1, 2}, {3}}), Error);
    CHECK_THROWS_AS(LossMatrix(2, std::vector<double>{1, 2, 3}), Error);
}
