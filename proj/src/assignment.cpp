#include "pitlab/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

namespace pitlab {

namespace {

constexpr int kNewtonSteps = 200;
constexpr std::size_t kMaxAnnealStages = 64;
constexpr double kMarginalTolerance = 1e-13;

void require_nonempty(const LossMatrix& matrix, const char* who) {
    if (matrix.size() == 0) throw Error(std::string(who) + ": empty loss matrix");
}

double log_sum_exp(std::span<const double> values) {
    const double peak = *std::max_element(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - peak);
    return peak + std::log(acc);
}

double plan_objective(const std::vector<double>& kernel, std::size_t n, const std::vector<double>& f,
                      const std::vector<double>& g) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) total += std::exp(kernel[i * n + j] + f[i] + g[j]);
    for (std::size_t i = 0; i < n; ++i) total -= f[i] + g[i];
    return total;
}

// Newton iterations on the convex scaling dual
//   F(f, g) = sum_ij exp(kernel_ij + f_i + g_j) - sum_i f_i - sum_j g_j
// with g_{n-1} held fixed. Its gradient is the marginal error, so the
// minimizer is the doubly stochastic plan.
void newton_polish(const std::vector<double>& kernel, std::size_t n, std::vector<double>& f,
                   std::vector<double>& g) {
    if (n == 1) {
        f[0] = -kernel[0] - g[0];
        return;
    }
    const std::size_t m = 2 * n - 1;
    Eigen::MatrixXd hessian(m, m);
    Eigen::VectorXd gradient(m);
    std::vector<double> plan(n * n), f_try(n), g_try(n);
    double objective = plan_objective(kernel, n, f, g);
    for (int step = 0; step < kNewtonSteps; ++step) {
        for (std::size_t k = 0; k < n * n; ++k) plan[k] = std::exp(kernel[k] + f[k / n] + g[k % n]);
        hessian.setZero();
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0, col = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row += plan[i * n + j];
                col += plan[j * n + i];
            }
            worst = std::max({worst, std::abs(row - 1.0), std::abs(col - 1.0)});
            hessian(i, i) = row;
            gradient(i) = row - 1.0;
            if (i + 1 < n) {
                hessian(n + i, n + i) = col;
                gradient(n + i) = col - 1.0;
            }
        }
        if (worst <= kMarginalTolerance) return;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j + 1 < n; ++j) {
                hessian(i, n + j) = plan[i * n + j];
                hessian(n + j, i) = plan[i * n + j];
            }
        const Eigen::VectorXd direction = -hessian.ldlt().solve(gradient);
        const double slope = gradient.dot(direction);
        if (!(slope < 0.0)) return;
        double t = 1.0;
        bool moved = false;
        for (int half = 0; half < 60; ++half, t *= 0.5) {
            for (std::size_t i = 0; i < n; ++i) f_try[i] = f[i] + t * direction(i);
            for (std::size_t j = 0; j + 1 < n; ++j) g_try[j] = g[j] + t * direction(n + j);
            g_try[n - 1] = g[n - 1];
            const double candidate = plan_objective(kernel, n, f_try, g_try);
            if (std::isfinite(candidate) && candidate <= objective + 1e-4 * t * slope) {
                f.swap(f_try);
                g.swap(g_try);
                objective = candidate;
                moved = true;
                break;
            }
        }
        if (!moved) return;
    }
}

}  // namespace

LossMatrix AssignmentResult::pair_weights() const {
    if (soft) {
        const std::size_t n = plan.gamma.size();
        LossMatrix w(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) w(i, j) = plan.gamma(i, j) / static_cast<double>(n);
        return w;
    }
    const std::size_t n = permutation.size();
    LossMatrix w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) w(i, permutation[i]) = 1.0 / static_cast<double>(n);
    return w;
}

double assignment_loss(const LossMatrix& matrix, const Permutation& permutation) {
    if (permutation.size() != matrix.size()) {
        throw Error("assignment_loss: permutation size " + std::to_string(permutation.size()) +
                    " does not match matrix size " + std::to_string(matrix.size()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < matrix.size(); ++i) sum += matrix(i, permutation[i]);
    return sum / static_cast<double>(matrix.size());
}

AssignmentResult exhaustive_select(const LossMatrix& matrix) {
    require_nonempty(matrix, "exhaustive_select");
    const std::size_t n = matrix.size();
    std::vector<int> mapping(n);
    std::iota(mapping.begin(), mapping.end(), 0);

    // next_permutation walks in lexicographic order, so a strict comparison
    // keeps the smallest mapping among ties.
    std::vector<int> best = mapping;
    double best_sum = std::numeric_limits<double>::infinity();
    do {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += matrix(i, mapping[i]);
        if (sum < best_sum) {
            best_sum = sum;
            best = mapping;
        }
    } while (std::next_permutation(mapping.begin(), mapping.end()));

    Permutation perm(std::move(best));
    const double total = assignment_loss(matrix, perm);
    return {std::move(perm), total, false, {}};
}

AssignmentResult hungarian_select(const LossMatrix& matrix) {
    require_nonempty(matrix, "hungarian_select");
    const int n = static_cast<int>(matrix.size());
    constexpr double inf = std::numeric_limits<double>::infinity();

    // 1-based potentials; column 0 is a virtual start column.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> owner(n + 1, 0), way(n + 1, 0);
    for (int row = 1; row <= n; ++row) {
        owner[0] = row;
        int col0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[col0] = 1;
            const int row0 = owner[col0];
            double delta = inf;
            int col1 = 0;
            for (int col = 1; col <= n; ++col) {
                if (used[col]) continue;
                const double reduced = matrix(row0 - 1, col - 1) - u[row0] - v[col];
                if (reduced < minv[col]) {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if (minv[col] < delta) {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for (int col = 0; col <= n; ++col) {
                if (used[col]) {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
        } while (owner[col0] != 0);
        do {
            const int col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
        } while (col0 != 0);
    }

    std::vector<int> mapping(n, -1);
    for (int col = 1; col <= n; ++col) mapping[owner[col] - 1] = col - 1;
    Permutation perm(std::move(mapping));
    const double total = assignment_loss(matrix, perm);
    return {std::move(perm), total, false, {}};
}

AssignmentResult pit_select(const LossMatrix& matrix) {
    return matrix.size() <= kExhaustiveLimit ? exhaustive_select(matrix) : hungarian_select(matrix);
}

AssignmentResult fixed_assignment_loss(const LossMatrix& matrix, const Permutation& fixed) {
    const double total = assignment_loss(matrix, fixed);
    return {fixed, total, false, {}};
}

SinkPitResult sinkpit_loss(const LossMatrix& matrix, double beta, int iterations) {
    require_nonempty(matrix, "sinkpit_loss");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw Error("sinkpit_loss: beta must be finite and > 0");
    if (iterations < 1) throw Error("sinkpit_loss: iterations must be >= 1");

    const std::size_t n = matrix.size();
    const auto [lo, hi] = std::minmax_element(matrix.entries().begin(), matrix.entries().end());
    const double spread = *hi - *lo;

    // Anneal beta upwards by doubling from a well-conditioned start, warm
    // starting each stage from the previous potentials.
    std::vector<double> schedule{beta};
    while (schedule.size() < kMaxAnnealStages && schedule.back() * spread > 1.0) {
        schedule.push_back(schedule.back() / 2.0);
    }
    std::reverse(schedule.begin(), schedule.end());

    std::vector<double> kernel(n * n);  // log K = -beta * C
    std::vector<double> f(n, 0.0), g(n, 0.0), line(n);  // gamma_ij = exp(kernel_ij + f_i + g_j)
    double previous = schedule.front();
    for (const double b : schedule) {
        for (std::size_t k = 0; k < n * n; ++k) kernel[k] = -b * matrix.entries()[k];
        for (std::size_t i = 0; i < n; ++i) {
            f[i] *= b / previous;
            g[i] *= b / previous;
        }
        previous = b;
        for (int it = 0; it < iterations; ++it) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) line[j] = kernel[i * n + j] + g[j];
                f[i] = -log_sum_exp(line);
            }
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t i = 0; i < n; ++i) line[i] = kernel[i * n + j] + f[i];
                g[j] = -log_sum_exp(line);
            }
        }
        newton_polish(kernel, n, f, g);
    }

    LossMatrix gamma(n);
    double soft = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            gamma(i, j) = std::exp(kernel[i * n + j] + f[i] + g[j]);
            soft += gamma(i, j) * matrix(i, j);
        }
    }
    return {soft / static_cast<double>(n), {std::move(gamma), beta, iterations}};
}

AssignmentResult sinkpit_select(const LossMatrix& matrix, double beta, int iterations) {
    auto [soft_loss, plan] = sinkpit_loss(matrix, beta, iterations);
    // Report the hard assignment the plan concentrates on; fall back to PIT if
    // the row-wise argmax is not a bijection.
    const std::size_t n = matrix.size();
    std::vector<int> mapping(n);
    std::vector<char> taken(n, 0);
    bool bijective = true;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < n; ++j)
            if (plan.gamma(i, j) > plan.gamma(i, arg)) arg = j;
        mapping[i] = static_cast<int>(arg);
        if (taken[arg]) bijective = false;
        taken[arg] = 1;
    }
    Permutation perm = bijective ? Permutation(std::move(mapping)) : pit_select(matrix).permutation;
    AssignmentResult out{std::move(perm), soft_loss, true, std::move(plan)};
    return out;
}

double sinkpit_beta(int epoch, int total_epochs, double beta_start, double beta_end) {
    if (!(beta_start > 0.0) || !(beta_end > 0.0)) throw Error("sinkpit_beta: betas must be > 0");
    const int ramp = std::max(1, total_epochs / 2);
    if (ramp == 1 || epoch >= ramp) return beta_end;
    if (epoch <= 1) return beta_start;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(ramp - 1);
    return beta_start * std::pow(beta_end / beta_start, t);
}

}  // namespace pitlab
