#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pitlab/core.hpp"

/// Reverse-mode automatic differentiation over dense double tensors.
///
/// Every op records a node when at least one input requires a gradient and
/// grad mode is enabled for the calling thread. backward() on a scalar root
/// accumulates into the grads of every reachable tensor that requires one.
/// Shapes are explicit: elementwise ops need equal shapes, except that one
/// operand may be a single-element tensor.
namespace pitlab::ad {

using Shape = std::vector<std::size_t>;

namespace detail {
struct Node;
struct Builder;
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t rows() const;  // rank-2 only
    std::size_t cols() const;  // rank-2 only

    std::span<const double> values() const;
    /// Direct write access for optimizers and initialization; bypasses the graph.
    std::span<double> mutable_values();
    double item() const;

    bool requires_grad() const;
    bool has_grad() const;
    /// Zeros when backward has not reached this tensor.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Root must be a single-element tensor.
    void backward() const;

    /// Same values, no history.
    Tensor detach() const;

    const detail::Node* node() const noexcept { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend struct detail::Builder;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);
/// x * w + bias, with the {1, n} bias added to every row.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
/// Rank-1 along axis 0, or rank-2 along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Half-open [begin, end) along axis.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor sqrt(const Tensor& a);
Tensor log10(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

/// Overlap-add of a (frames x frame_size) matrix with the given hop into a
/// rank-1 signal of `length` samples. Each output sample is divided by the
/// number of frames covering it; samples past `length` are dropped.
Tensor overlap_add(const Tensor& frames, std::size_t hop, std::size_t length);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double f) { return scale(a, f); }
inline Tensor operator*(double f, const Tensor& a) { return scale(a, f); }

// ---------------------------------------------------------------------------
// Optimization

/// Scales all grads by max_norm / g when their global L2 norm g exceeds
/// max_norm. Returns the factor applied (1.0 when unchanged).
double clip_global_norm(std::span<Tensor> params, double max_norm);

double global_grad_norm(std::span<const Tensor> params);

struct OptimizerState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    long step = 0;
    double learning_rate = 1e-3;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9,
         double beta2 = 0.999, double epsilon = 1e-8);

    void step();
    void zero_grad();

    double learning_rate() const noexcept { return state_.learning_rate; }
    void set_learning_rate(double lr) { state_.learning_rate = lr; }
    const OptimizerState& state() const noexcept { return state_; }
    std::span<Tensor> params() noexcept { return params_; }

private:
    std::vector<Tensor> params_;
    OptimizerState state_;
    double beta1_;
    double beta2_;
    double epsilon_;
};

/// Halves the learning rate after `patience` consecutive epochs without a
/// strict improvement of a metric to maximize. Epochs 1..switch_epoch use
/// `patience_early`, later epochs `patience_late`.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, int patience_early = 10, int patience_late = 5,
                     int switch_epoch = 80, double factor = 0.5);

    /// Feed the metric of a finished (1-based) epoch; returns the learning rate to use next.
    double step(int epoch, double metric);

    double learning_rate() const noexcept { return lr_; }
    int halvings() const noexcept { return halvings_; }

private:
    double lr_;
    int patience_early_;
    int patience_late_;
    int switch_epoch_;
    double factor_;
    double best_;
    int bad_epochs_ = 0;
    int halvings_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Text format, see docs/checkpoint_format.md.
void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace pitlab::ad
