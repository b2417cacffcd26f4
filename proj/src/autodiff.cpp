#include "pitlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>
#include <fmt/format.h>

namespace pitlab::ad {

namespace detail {

// 64-byte aligned storage keeps Eigen's vectorized loops independent of
// where the allocator happens to place a buffer.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Buffer& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

namespace {
thread_local bool g_grad_enabled = true;
}

struct Builder {
    static Tensor make(Shape shape, Buffer value,
                       std::initializer_list<const Tensor*> inputs,
                       std::function<void(Node&)> backward) {
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(value);
        bool needs = false;
        if (g_grad_enabled) {
            for (const Tensor* t : inputs) needs = needs || t->node_->requires_grad;
        }
        if (needs) {
            node->requires_grad = true;
            for (const Tensor* t : inputs) node->parents.push_back(t->node_);
            node->backward = std::move(backward);
        }
        return Tensor(std::move(node));
    }

    static Tensor make_many(Shape shape, Buffer value, std::span<const Tensor> inputs,
                            std::function<void(Node&)> backward) {
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(value);
        bool needs = false;
        if (g_grad_enabled) {
            for (const Tensor& t : inputs) needs = needs || t.node_->requires_grad;
        }
        if (needs) {
            node->requires_grad = true;
            for (const Tensor& t : inputs) node->parents.push_back(t.node_);
            node->backward = std::move(backward);
        }
        return Tensor(std::move(node));
    }

    static Tensor leaf(Shape shape, Buffer value, bool requires_grad) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        if (shape.empty() || n == 0) throw Error("Tensor: shape must be non-empty with non-zero extents");
        if (value.size() != n) throw Error("Tensor: value count does not match shape");
        for (double v : value) {
            if (!std::isfinite(v)) throw Error("Tensor: non-finite value");
        }
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(value);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Node& node(const Tensor& t) {
        if (!t.node_) throw Error("Tensor: use of undefined tensor");
        return *t.node_;
    }
};

}  // namespace detail

using detail::Builder;
using detail::Buffer;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

const Buffer& vals(const Tensor& t) { return Builder::node(t).value; }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                    shape_str(t.shape()));
    }
}

enum class Broadcast { none, left_scalar, right_scalar };

Broadcast binary_layout(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (a.numel() == 1) return Broadcast::left_scalar;
    if (b.numel() == 1) return Broadcast::right_scalar;
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

// Elementwise binary op with optional scalar operand. da/db return the local
// partial derivatives at (x, y).
template <class F, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, Da da, Db db) {
    const Broadcast layout = binary_layout(a, b, name);
    const Shape shape = layout == Broadcast::left_scalar ? b.shape() : a.shape();
    const std::size_t n = layout == Broadcast::left_scalar ? b.numel() : a.numel();
    const auto& x = vals(a);
    const auto& y = vals(b);
    const std::size_t sx = layout == Broadcast::left_scalar ? 0 : 1;
    const std::size_t sy = layout == Broadcast::right_scalar ? 0 : 1;
    Buffer out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i * sx], y[i * sy]);
    return Builder::make(shape, std::move(out), {&a, &b}, [=](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                g[i * sx] += self.grad[i] * da(pa.value[i * sx], pb.value[i * sy]);
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                g[i * sy] += self.grad[i] * db(pa.value[i * sx], pb.value[i * sy]);
        }
    });
}

// Elementwise unary op; the derivative sees the input x and the output y.
template <class D>
Tensor unary_result(const Tensor& a, Buffer out, D d) {
    return Builder::make(a.shape(), std::move(out), {&a}, [=](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * d(p.value[i], self.value[i]);
    });
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D d) {
    const auto& x = vals(a);
    Buffer out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return unary_result(a, std::move(out), d);
}

using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXd>;

void check_finite_result(const Buffer& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(std::string(op) + ": produced a non-finite value");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Builder::leaf(std::move(shape), Buffer(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Builder::leaf(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Builder::leaf({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return Builder::node(*this).shape; }
std::size_t Tensor::numel() const { return Builder::node(*this).value.size(); }

std::size_t Tensor::rows() const {
    require_rank(*this, 2, "rows");
    return shape()[0];
}

std::size_t Tensor::cols() const {
    require_rank(*this, 2, "cols");
    return shape()[1];
}

std::span<const double> Tensor::values() const { return Builder::node(*this).value; }
std::span<double> Tensor::mutable_values() { return Builder::node(*this).value; }

double Tensor::item() const {
    if (numel() != 1) throw Error("item: tensor has " + std::to_string(numel()) + " elements");
    return values()[0];
}

bool Tensor::requires_grad() const { return Builder::node(*this).requires_grad; }

bool Tensor::has_grad() const {
    const Node& n = Builder::node(*this);
    return n.grad.size() == n.value.size();
}

std::span<const double> Tensor::grad() const { return Builder::node(*this).ensure_grad(); }
std::span<double> Tensor::mutable_grad() { return Builder::node(*this).ensure_grad(); }

void Tensor::zero_grad() {
    Node& n = Builder::node(*this);
    n.grad.assign(n.value.size(), 0.0);
}

Tensor Tensor::detach() const {
    const Node& n = Builder::node(*this);
    return Builder::leaf(n.shape, n.value, false);
}

void Tensor::backward() const {
    Node& root = Builder::node(*this);
    if (root.value.size() != 1) throw Error("backward: root must be a scalar");
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    root.grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return detail::g_grad_enabled; }

// ---------------------------------------------------------------------------
// Ops

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double x) { return factor * x; },
                 [factor](double, double) { return factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw Error("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    }
    Buffer out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(vals(a).data(), m, k) * ConstMap(vals(b).data(), k, n);
    return Builder::make({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        ConstMap g(self.grad.data(), m, n);
        if (pa.requires_grad) {
            MutMap(pa.ensure_grad().data(), m, k).noalias() +=
                g * ConstMap(pb.value.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            MutMap(pb.ensure_grad().data(), k, n).noalias() +=
                ConstMap(pa.value.data(), m, k).transpose() * g;
        }
    });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(x, 2, "affine");
    require_rank(w, 2, "affine");
    require_rank(bias, 2, "affine");
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    if (w.rows() != k || bias.rows() != 1 || bias.cols() != n) {
        throw Error("affine: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()) +
                    " + " + shape_str(bias.shape()));
    }
    Buffer out(m * n);
    MutMap y(out.data(), m, n);
    y.noalias() = ConstMap(vals(x).data(), m, k) * ConstMap(vals(w).data(), k, n);
    y.rowwise() += ConstMap(vals(bias).data(), 1, n).row(0);
    return Builder::make({m, n}, std::move(out), {&x, &w, &bias}, [m, k, n](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        ConstMap g(self.grad.data(), m, n);
        if (px.requires_grad) {
            MutMap(px.ensure_grad().data(), m, k).noalias() += g * ConstMap(pw.value.data(), k, n).transpose();
        }
        if (pw.requires_grad) {
            MutMap(pw.ensure_grad().data(), k, n).noalias() += ConstMap(px.value.data(), m, k).transpose() * g;
        }
        if (pb.requires_grad) MutMap(pb.ensure_grad().data(), 1, n) += g.colwise().sum();
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    Buffer out(r * c);
    const auto& x = vals(a);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return Builder::make({c, r}, std::move(out), {&a}, [r, c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != a.numel()) throw Error("reshape: element count changes");
    return Builder::make(std::move(shape), vals(a), {&a}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw Error("concat: nothing to concatenate");
    const std::size_t rank = parts[0].rank();
    if (rank > 2 || axis >= rank) throw Error("concat: unsupported rank/axis");
    for (const auto& p : parts) {
        if (p.rank() != rank) throw Error("concat: rank mismatch");
        if (rank == 2 && p.shape()[1 - axis] != parts[0].shape()[1 - axis]) {
            throw Error("concat: extent mismatch off the concatenation axis");
        }
    }
    // Treat rank 1 as a single row.
    const std::size_t rows = rank == 1 ? 1 : (axis == 0 ? 0 : parts[0].rows());
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const std::size_t w = rank == 1 ? p.numel() : p.shape()[axis];
        widths.push_back(w);
        total += w;
    }
    Buffer out;
    out.reserve(total * (rank == 2 ? parts[0].shape()[1 - axis] : 1));
    Shape shape;
    if (rank == 1 || axis == 0) {
        for (const auto& p : parts) out.insert(out.end(), vals(p).begin(), vals(p).end());
        shape = rank == 1 ? Shape{total} : Shape{total, parts[0].cols()};
    } else {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < parts.size(); ++k) {
                const auto& x = vals(parts[k]);
                out.insert(out.end(), x.begin() + r * widths[k], x.begin() + (r + 1) * widths[k]);
            }
        shape = Shape{rows, total};
    }
    const bool by_rows = rank == 1 || axis == 0;
    return Builder::make_many(shape, std::move(out), parts, [by_rows, rows, widths, total](Node& self) {
        if (by_rows) {
            std::size_t offset = 0;
            for (auto& p : self.parents) {
                const std::size_t n = p->value.size();
                if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
                }
                offset += n;
            }
            return;
        }
        std::size_t col = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (p.requires_grad) {
                auto& g = p.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[k]; ++j)
                        g[r * widths[k] + j] += self.grad[r * total + col + j];
            }
            col += widths[k];
        }
    });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const std::size_t rank = a.rank();
    if (rank > 2 || axis >= rank) throw Error("slice: unsupported rank/axis");
    if (begin >= end || end > a.shape()[axis]) throw Error("slice: range out of bounds");
    const auto& x = vals(a);
    const std::size_t cols = rank == 1 ? a.numel() : a.cols();
    const std::size_t rows = rank == 1 ? 1 : a.rows();
    // Rank 1 or row slices are contiguous.
    if (rank == 1 || axis == 0) {
        const std::size_t stride = rank == 1 ? 1 : cols;
        Buffer out(x.begin() + begin * stride, x.begin() + end * stride);
        Shape shape = rank == 1 ? Shape{end - begin} : Shape{end - begin, cols};
        return Builder::make(shape, std::move(out), {&a}, [begin, stride](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * stride + i] += self.grad[i];
        });
    }
    const std::size_t width = end - begin;
    Buffer out(rows * width);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.begin() + r * cols + begin, width, out.begin() + r * width);
    return Builder::make({rows, width}, std::move(out), {&a}, [=](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < width; ++j) g[r * cols + begin + j] += self.grad[r * width + j];
    });
}

Tensor sum(const Tensor& a) {
    const auto& x = vals(a);
    const double s = std::accumulate(x.begin(), x.end(), 0.0);
    return Builder::make({1}, {s}, {&a}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& gi : g) gi += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor pow(const Tensor& a, double exponent) {
    auto out = unary(
        a, [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
    check_finite_result(vals(out), "pow");
    return out;
}

Tensor sqrt(const Tensor& a) {
    for (double x : vals(a)) {
        if (!(x > 0.0)) throw Error("sqrt: argument must be > 0");
    }
    return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor log10(const Tensor& a) {
    for (double x : vals(a)) {
        if (!(x > 0.0)) throw Error("log10: argument must be > 0");
    }
    static const double inv_ln10 = 1.0 / std::log(10.0);
    return unary(a, [](double x) { return std::log10(x); },
                 [](double x, double) { return inv_ln10 / x; });
}

Tensor sigmoid(const Tensor& a) {
    const auto& x = vals(a);
    const auto n = static_cast<Eigen::Index>(x.size());
    Buffer out(x.size());
    ArrayMap(out.data(), n) = 1.0 / (1.0 + (-ConstArrayMap(x.data(), n)).exp());
    return unary_result(a, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    const auto& x = vals(a);
    const auto n = static_cast<Eigen::Index>(x.size());
    Buffer out(x.size());
    ArrayMap(out.data(), n) = 1.0 - 2.0 / ((2.0 * ConstArrayMap(x.data(), n)).exp() + 1.0);
    return unary_result(a, std::move(out), [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw Error("dot: element count mismatch");
    const auto& x = vals(a);
    const auto& y = vals(b);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return Builder::make({1}, {s}, {&a, &b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double g = self.grad[0];
        if (pa.requires_grad) {
            auto& ga = pa.ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * pa.value[i];
        }
    });
}

Tensor overlap_add(const Tensor& frames, std::size_t hop, std::size_t length) {
    require_rank(frames, 2, "overlap_add");
    if (hop == 0 || length == 0) throw Error("overlap_add: hop and length must be >= 1");
    const std::size_t n_frames = frames.rows();
    const std::size_t frame_size = frames.cols();
    if (hop > frame_size) throw Error("overlap_add: hop exceeds frame size");

    std::vector<double> inv_count(length, 0.0);
    for (std::size_t f = 0; f < n_frames; ++f)
        for (std::size_t k = 0; k < frame_size && f * hop + k < length; ++k) inv_count[f * hop + k] += 1.0;
    for (double& c : inv_count) c = c > 0.0 ? 1.0 / c : 0.0;

    const auto& x = vals(frames);
    Buffer out(length, 0.0);
    for (std::size_t f = 0; f < n_frames; ++f)
        for (std::size_t k = 0; k < frame_size && f * hop + k < length; ++k)
            out[f * hop + k] += x[f * frame_size + k];
    for (std::size_t t = 0; t < length; ++t) out[t] *= inv_count[t];

    return Builder::make({length}, std::move(out), {&frames},
                         [=, inv_count = std::move(inv_count)](Node& self) {
                             auto& g = self.parents[0]->ensure_grad();
                             for (std::size_t f = 0; f < n_frames; ++f)
                                 for (std::size_t k = 0; k < frame_size && f * hop + k < length; ++k) {
                                     const std::size_t t = f * hop + k;
                                     g[f * frame_size + k] += self.grad[t] * inv_count[t];
                                 }
                         });
}

// ---------------------------------------------------------------------------
// Optimization

double global_grad_norm(std::span<const Tensor> params) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.grad()) sq += g * g;
    return std::sqrt(sq);
}

double clip_global_norm(std::span<Tensor> params, double max_norm) {
    if (!(max_norm > 0.0)) throw Error("clip_global_norm: max_norm must be > 0");
    const double norm = global_grad_norm(std::span<const Tensor>(params.data(), params.size()));
    if (!(norm > max_norm)) return 1.0;
    const double factor = max_norm / norm;
    for (auto& p : params)
        for (double& g : p.mutable_grad()) g *= factor;
    return factor;
}

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    if (!(learning_rate > 0.0)) throw Error("Adam: learning rate must be > 0");
    state_.learning_rate = learning_rate;
    for (const auto& p : params_) {
        if (!p.requires_grad()) throw Error("Adam: parameter does not require grad");
        state_.first_moment.emplace_back(p.numel(), 0.0);
        state_.second_moment.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double correction1 = 1.0 - std::pow(beta1_, t);
    const double correction2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto value = params_[k].mutable_values();
        auto grad = params_[k].grad();
        auto& m = state_.first_moment[k];
        auto& v = state_.second_moment[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            value[i] -= state_.learning_rate * m_hat / (std::sqrt(v_hat) + epsilon_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

PlateauScheduler::PlateauScheduler(double initial_lr, int patience_early, int patience_late,
                                   int switch_epoch, double factor)
    : lr_(initial_lr),
      patience_early_(patience_early),
      patience_late_(patience_late),
      switch_epoch_(switch_epoch),
      factor_(factor),
      best_(-std::numeric_limits<double>::infinity()) {
    if (!(initial_lr > 0.0)) throw Error("PlateauScheduler: learning rate must be > 0");
    if (patience_early < 1 || patience_late < 1) throw Error("PlateauScheduler: patience must be >= 1");
}

double PlateauScheduler::step(int epoch, double metric) {
    if (metric > best_) {
        best_ = metric;
        bad_epochs_ = 0;
        return lr_;
    }
    const int patience = epoch <= switch_epoch_ ? patience_early_ : patience_late_;
    if (++bad_epochs_ >= patience) {
        lr_ *= factor_;
        ++halvings_;
        bad_epochs_ = 0;
    }
    return lr_;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
    std::ofstream out(path);
    if (!out) throw Error("save_checkpoint: cannot write " + path);
    out << "pitlab-checkpoint 1\n" << tensors.size() << "\n";
    for (const auto& [name, tensor] : tensors) {
        if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
            throw Error("save_checkpoint: invalid tensor name '" + name + "'");
        }
        out << name << ' ' << tensor.rank();
        for (std::size_t d : tensor.shape()) out << ' ' << d;
        out << '\n';
        const auto v = tensor.values();
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << fmt::format("{}", v[i]);
        out << '\n';
    }
    if (!out) throw Error("save_checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_checkpoint: cannot read " + path);
    std::string magic;
    int version = 0;
    std::size_t count = 0;
    if (!(in >> magic >> version >> count) || magic != "pitlab-checkpoint" || version != 1) {
        throw Error("load_checkpoint: not a pitlab checkpoint: " + path);
    }
    std::vector<NamedTensor> tensors;
    for (std::size_t t = 0; t < count; ++t) {
        std::string name;
        std::size_t rank = 0;
        if (!(in >> name >> rank) || rank == 0) throw Error("load_checkpoint: bad tensor header");
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            if (!(in >> d)) throw Error("load_checkpoint: bad shape for " + name);
            n *= d;
        }
        std::vector<double> values(n);
        for (auto& v : values) {
            if (!(in >> v)) throw Error("load_checkpoint: truncated values for " + name);
        }
        tensors.push_back({name, Tensor::from(std::move(shape), std::move(values), true)});
    }
    return tensors;
}

}  // namespace pitlab::ad
