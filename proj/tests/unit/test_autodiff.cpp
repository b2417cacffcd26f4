#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "pitlab/autodiff.hpp"

using namespace pitlab;
using ad::Tensor;

namespace {

std::vector<double> randn(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST_CASE("forward values") {
    const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
    const Tensor c = ad::matmul(a, b);
    CHECK(c.shape() == ad::Shape{2, 2});
    CHECK(std::vector<double>(c.values().begin(), c.values().end()) == std::vector<double>{58, 64, 139, 154});
    CHECK(ad::sum(Tensor::from({4}, {1, 1, 1, 1})).item() == 4.0);
    CHECK(ad::transpose(a).shape() == ad::Shape{3, 2});
    CHECK(ad::transpose(a).values()[1] == 4.0);
    CHECK(ad::slice(a, 1, 1, 3).values()[2] == 5.0);
    CHECK(ad::relu(Tensor::from({2}, {-1, 2})).values()[0] == 0.0);
    CHECK(ad::dot(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4})).item() == 11.0);
    CHECK(ad::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(ad::tanh(Tensor::scalar(0.3)).item() == doctest::Approx(std::tanh(0.3)).epsilon(1e-15));
    CHECK(ad::log10(Tensor::scalar(1000.0)).item() == doctest::Approx(3.0));
}

TEST_CASE("overlap_add divides by the overlap count") {
    // Two frames of ones, hop 2, frame 4: every covered sample averages to 1.
    const Tensor frames = Tensor::from({2, 4}, std::vector<double>(8, 1.0));
    const Tensor y = ad::overlap_add(frames, 2, 6);
    for (double v : y.values()) CHECK(v == 1.0);
    const Tensor z = ad::overlap_add(Tensor::from({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), 2, 6);
    CHECK(std::vector<double>(z.values().begin(), z.values().end()) == std::vector<double>{1, 2, 4, 5, 7, 8});
}

TEST_CASE("shape errors") {
    const Tensor a = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(ad::add(a, Tensor::zeros({3, 2})), Error);
    CHECK_THROWS_AS(ad::matmul(a, a), Error);
    CHECK_THROWS_AS(ad::reshape(a, {5}), Error);
    CHECK_THROWS_AS(ad::slice(a, 1, 2, 4), Error);
    CHECK_THROWS_AS(ad::dot(Tensor::zeros({2}), Tensor::zeros({3})), Error);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), Error);
}

TEST_CASE("backward basics") {
    SUBCASE("gradient of mean(x^2)") {
        Tensor x = Tensor::from({3}, {1, 2, 3}, true);
        ad::mean(ad::pow(x, 2.0)).backward();
        const auto g = grad_of(x);
        CHECK(g[0] == doctest::Approx(2.0 / 3.0));
        CHECK(g[1] == doctest::Approx(4.0 / 3.0));
        CHECK(g[2] == doctest::Approx(2.0));
    }
    SUBCASE("root is a parameter") {
        Tensor p = Tensor::scalar(3.0, true);
        p.backward();
        CHECK(p.grad()[0] == 1.0);
    }
    SUBCASE("disconnected parameter gets zero") {
        Tensor p = Tensor::scalar(3.0, true), q = Tensor::scalar(2.0, true);
        (p * p).backward();
        CHECK(p.grad()[0] == 6.0);
        CHECK((!q.has_grad() || q.grad()[0] == 0.0));
    }
    SUBCASE("non-scalar root") {
        Tensor p = Tensor::from({2}, {1, 2}, true);
        CHECK_THROWS_AS((p * p).backward(), Error);
    }
    SUBCASE("reused node accumulates") {
        Tensor x = Tensor::scalar(2.0, true);
        const Tensor y = x * x;
        (y + y * x).backward();
        CHECK(x.grad()[0] == doctest::Approx(2 * 2.0 + 3 * 4.0));
    }
}

TEST_CASE("no-grad mode records nothing") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y;
    {
        ad::NoGradGuard guard;
        y = x * x;
    }
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("composite tanh(w.x) matches finite differences") {
    std::mt19937_64 rng(1);
    Tensor w = Tensor::from({5}, randn(rng, 5), true);
    const Tensor x = Tensor::from({5}, randn(rng, 5));
    std::vector<Tensor> params{w};
    const auto r = testing::check_gradients([&] { return ad::tanh(ad::dot(w, x)); }, params);
    CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("backward is deterministic") {
    std::mt19937_64 rng(2);
    const auto values = randn(rng, 12);
    auto run = [&] {
        Tensor a = Tensor::from({3, 4}, values, true);
        ad::sum(ad::sigmoid(ad::matmul(a, ad::transpose(a)))).backward();
        return grad_of(a);
    };
    CHECK(run() == run());
}

TEST_CASE("clip_global_norm") {
    auto make = [](std::vector<double> g) {
        Tensor t = Tensor::zeros({g.size()}, true);
        auto dst = t.mutable_grad();
        std::copy(g.begin(), g.end(), dst.begin());
        return t;
    };
    std::vector<Tensor> small{make({3.0, 0.0})};
    CHECK(ad::clip_global_norm(small, 5.0) == 1.0);
    CHECK(grad_of(small[0])[0] == 3.0);

    std::vector<Tensor> big{make({6.0}), make({8.0})};
    CHECK(ad::clip_global_norm(big, 5.0) == doctest::Approx(0.5));
    CHECK(ad::global_grad_norm(big) == doctest::Approx(5.0).epsilon(1e-12));
    const auto once = grad_of(big[1]);
    ad::clip_global_norm(big, 5.0);
    CHECK(grad_of(big[1]) == once);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        std::vector<Tensor> ps{make(randn(rng, 4)), make(randn(rng, 3))};
        double g = 0.0;
        for (auto& p : ps)
            for (double v : p.grad()) g += v * v;
        g = std::sqrt(g) * (i % 2 ? 3.0 : 0.5);
        for (auto& p : ps)
            for (double& v : p.mutable_grad()) v *= (i % 2 ? 3.0 : 0.5);
        ad::clip_global_norm(ps, 5.0);
        CHECK(ad::global_grad_norm(ps) == doctest::Approx(std::min(g, 5.0)).epsilon(1e-9));
    }
}

TEST_CASE("Adam first step moves every coordinate by the learning rate") {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    ad::Adam opt({p}, 0.01);
    ad::sum(p * Tensor::from({3}, {2.0, -1.0, 0.3})).backward();
    opt.step();
    // Bias-corrected m/sqrt(v) = sign(g) on the first step.
    CHECK(p.values()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
    CHECK(p.values()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-9));
    CHECK(p.values()[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-9));
    CHECK(opt.state().step == 1);
    CHECK(opt.state().first_moment[0].size() == 3);
}

TEST_CASE("Adam matches a scalar reference over several steps") {
    Tensor p = Tensor::scalar(1.5, true);
    ad::Adam opt({p}, 0.1);
    double x = 1.5, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
        opt.zero_grad();
        (p * p * p).backward();
        opt.step();
        const double g = 3 * x * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        CHECK(p.item() == doctest::Approx(x).epsilon(1e-12));
    }
}

namespace {

// Independent simulation of the halving schedule.
std::vector<int> simulate_halvings(const std::vector<double>& metrics, int early, int late, int switch_epoch) {
    std::vector<int> out;
    double best = -1e300;
    int since = 0;
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        const int epoch = static_cast<int>(i) + 1;
        if (metrics[i] > best) {
            best = metrics[i];
            since = 0;
            continue;
        }
        ++since;
        if (since >= (epoch <= switch_epoch ? early : late)) {
            out.push_back(epoch);
            since = 0;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("PlateauScheduler") {
    SUBCASE("steady improvement never halves") {
        ad::PlateauScheduler s(1e-3);
        for (int e = 1; e <= 100; ++e) s.step(e, e);
        CHECK(s.halvings() == 0);
        CHECK(s.learning_rate() == 1e-3);
    }
    SUBCASE("flat for ten epochs") {
        ad::PlateauScheduler s(1e-3);
        s.step(1, 5.0);
        for (int e = 2; e <= 11; ++e) s.step(e, 5.0);
        CHECK(s.halvings() == 1);
        CHECK(s.learning_rate() == 5e-4);
    }
    SUBCASE("scripted sequence across the switch epoch") {
        std::mt19937_64 rng(4);
        std::vector<double> metrics;
        double level = 0.0;
        for (int e = 1; e <= 140; ++e) {
            if (rng() % 7 == 0) level += 0.5;
            metrics.push_back(level);
        }
        ad::PlateauScheduler s(1e-3);
        std::vector<int> halved;
        for (int e = 1; e <= 140; ++e) {
            const int before = s.halvings();
            s.step(e, metrics[e - 1]);
            if (s.halvings() != before) halved.push_back(e);
        }
        CHECK(halved == simulate_halvings(metrics, 10, 5, 80));
        CHECK(s.learning_rate() == doctest::Approx(1e-3 * std::pow(0.5, halved.size())));
    }
    CHECK_THROWS_AS(ad::PlateauScheduler(0.0), Error);
}

TEST_CASE("checkpoint round trip") {
    const auto path = std::filesystem::temp_directory_path() / "pitlab_unit_ckpt.txt";
    std::vector<ad::NamedTensor> ts{{"w", Tensor::from({2, 2}, {0.1, -1e-300, 3.0 / 7.0, 1e300})},
                                    {"b", Tensor::from({3}, {1, 2, 3})}};
    ad::save_checkpoint(path.string(), ts);
    const auto back = ad::load_checkpoint(path.string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "w");
    CHECK(back[0].tensor.shape() == ad::Shape{2, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(back[0].tensor.values()[i] == ts[0].tensor.values()[i]);
    CHECK_THROWS_AS(ad::save_checkpoint(path.string(), std::vector<ad::NamedTensor>{{"bad name", Tensor::scalar(1)}}),
                    Error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(ad::load_checkpoint(path.string()), Error);
}
