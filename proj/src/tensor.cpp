#include "cure/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "cure/error.hpp"

namespace cure {
namespace {

std::atomic<std::uint64_t> next_sequence{1};
thread_local bool grad_enabled = true;

void require_finite(std::span<const double> values, const char* where)
{
    for (const double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value in ") + where);
        }
    }
}

enum class Broadcast { None, RowB, RowA };

// Equal shapes, or a rank-2 [batch x n] against a rank-1 [n].
Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() == b.shape()) {
        return Broadcast::None;
    }
    if (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0)) {
        return Broadcast::RowB;
    }
    if (b.rank() == 2 && a.rank() == 1 && b.dim(1) == a.dim(0)) {
        return Broadcast::RowA;
    }
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
}

// Reduce a gradient over the broadcast batch axis into a rank-1 buffer.
void accumulate_rows(std::span<const double> g, std::vector<double>& into)
{
    const std::size_t n = into.size();
    for (std::size_t i = 0; i < g.size(); ++i) {
        into[i % n] += g[i];
    }
}

template <class Fwd, class DA, class DB>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db)
{
    const Broadcast kind = broadcast_kind(a, b, op);
    const Tensor& big = kind == Broadcast::RowA ? b : a;
    const std::size_t n = big.size();
    const std::size_t row = kind == Broadcast::RowB ? b.size() : (kind == Broadcast::RowA ? a.size() : n);
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = kind == Broadcast::RowA ? ad[i % row] : ad[i];
        const double y = kind == Broadcast::RowB ? bd[i % row] : bd[i];
        out[i] = fwd(x, y);
    }
    require_finite(out, op);
    return Tensor::make_result(
        big.shape(), std::move(out), op, {a, b},
        [kind, row, da, db](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gin) {
            const auto& ad = self.parents[0]->data;
            const auto& bd = self.parents[1]->data;
            const std::size_t n = g.size();
            if (gin[0] != nullptr) {
                std::vector<double> local(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = kind == Broadcast::RowA ? ad[i % row] : ad[i];
                    const double y = kind == Broadcast::RowB ? bd[i % row] : bd[i];
                    local[i] = g[i] * da(x, y);
                }
                if (kind == Broadcast::RowA) {
                    accumulate_rows(local, *gin[0]);
                } else {
                    for (std::size_t i = 0; i < n; ++i) {
                        (*gin[0])[i] += local[i];
                    }
                }
            }
            if (gin[1] != nullptr) {
                std::vector<double> local(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = kind == Broadcast::RowA ? ad[i % row] : ad[i];
                    const double y = kind == Broadcast::RowB ? bd[i % row] : bd[i];
                    local[i] = g[i] * db(x, y);
                }
                if (kind == Broadcast::RowB) {
                    accumulate_rows(local, *gin[1]);
                } else {
                    for (std::size_t i = 0; i < n; ++i) {
                        (*gin[1])[i] += local[i];
                    }
                }
            }
        });
}

} // namespace

std::string shape_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            s += "x";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (const auto d : shape) {
        n *= d;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad)
{
    for (const auto d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
    if (shape_size(shape) != data.size()) {
        throw ShapeError("shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
    }
    require_finite(data, "tensor construction");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->sequence = next_sequence.fetch_add(1);
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return from({}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n)
{
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        v[i * n + i] = 1.0;
    }
    return from({n, n}, std::move(v));
}

detail::Node& Tensor::checked() const
{
    if (!node_) {
        throw GraphError("use of an undefined tensor");
    }
    return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const
{
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    }
    return s[axis];
}

std::size_t Tensor::size() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }

double Tensor::at(std::size_t row, std::size_t col) const
{
    return data()[row * dim(1) + col];
}

double Tensor::item() const
{
    if (size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    }
    return data()[0];
}

std::span<double> Tensor::mutable_data()
{
    auto& n = checked();
    if (!n.parents.empty()) {
        throw GraphError(std::string("mutable_data on non-leaf tensor produced by ") + n.op);
    }
    return n.data;
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool flag)
{
    auto& n = checked();
    if (!n.parents.empty()) {
        throw GraphError("requires_grad can only be set on leaf tensors");
    }
    n.requires_grad = flag;
}

bool Tensor::is_leaf() const { return checked().parents.empty(); }

bool Tensor::has_grad() const { return checked().grad.has_value(); }

std::span<const double> Tensor::grad() const
{
    const auto& n = checked();
    if (!n.grad) {
        throw GraphError("gradient not populated");
    }
    return *n.grad;
}

void Tensor::accumulate_grad(std::span<const double> values)
{
    auto& n = checked();
    if (values.size() != n.data.size()) {
        throw ShapeError("gradient length " + std::to_string(values.size()) + " does not match tensor " +
                         shape_string(n.shape));
    }
    if (!n.grad) {
        n.grad = std::vector<double>(values.begin(), values.end());
        return;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        (*n.grad)[i] += values[i];
    }
}

void Tensor::zero_grad() { checked().grad.reset(); }

Tensor Tensor::detach() const
{
    const auto& n = checked();
    return from(n.shape, n.data, false);
}

Tensor Tensor::clone(bool requires_grad) const
{
    const auto& n = checked();
    return from(n.shape, n.data, requires_grad);
}

Tensor Tensor::reshape(Shape shape) const
{
    const auto& n = checked();
    if (shape_size(shape) != n.data.size()) {
        throw ShapeError("cannot reshape " + shape_string(n.shape) + " to " + shape_string(shape));
    }
    return make_result(std::move(shape), n.data, "reshape", {*this},
                       [](const detail::Node&, std::span<const double> g, std::span<std::vector<double>*> gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               (*gin[0])[i] += g[i];
                           }
                       });
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                           detail::BackwardRule rule)
{
    Tensor out = from(std::move(shape), std::move(data), false);
    if (!grad_enabled) {
        return out;
    }
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!any) {
        return out;
    }
    auto& node = *out.node_;
    node.requires_grad = true;
    node.op = op;
    node.backward = std::move(rule);
    node.parents.reserve(inputs.size());
    for (auto& t : inputs) {
        node.parents.push_back(t.node_);
    }
    return out;
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

bool grad_mode_enabled() noexcept { return grad_enabled; }

// ---------------------------------------------------------------------------
// Operations

Tensor add(const Tensor& a, const Tensor& b)
{
    return elementwise(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return elementwise(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return elementwise(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor)
{
    if (!std::isfinite(factor)) {
        throw NumericError("scale: non-finite factor");
    }
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) {
        out[i] = factor * ad[i];
    }
    require_finite(out, "scale");
    return Tensor::make_result(a.shape(), std::move(out), "scale", {a},
                               [factor](const detail::Node&, std::span<const double> g,
                                        std::span<std::vector<double>*> gin) {
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       (*gin[0])[i] += factor * g[i];
                                   }
                               });
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t n = b.dim(1);
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] += av * bd[p * n + j];
            }
        }
    }
    require_finite(out, "matmul");
    return Tensor::make_result(
        {m, n}, std::move(out), "matmul", {a, b},
        [m, k, n](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>*> gin) {
            const auto& ad = self.parents[0]->data;
            const auto& bd = self.parents[1]->data;
            if (gin[0] != nullptr) {
                // dA = G . B^T
                auto& ga = *gin[0];
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                            acc += g[i * n + j] * bd[p * n + j];
                        }
                        ga[i * k + p] += acc;
                    }
                }
            }
            if (gin[1] != nullptr) {
                // dB = A^T . G
                auto& gb = *gin[1];
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = ad[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) {
                            gb[p * n + j] += av * g[i * n + j];
                        }
                    }
                }
            }
        });
}

Tensor transpose(const Tensor& a)
{
    if (a.rank() != 2) {
        throw ShapeError("transpose: expected rank 2, got " + shape_string(a.shape()));
    }
    const std::size_t r = a.dim(0);
    const std::size_t c = a.dim(1);
    const auto ad = a.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = ad[i * c + j];
        }
    }
    return Tensor::make_result({c, r}, std::move(out), "transpose", {a},
                               [r, c](const detail::Node&, std::span<const double> g,
                                      std::span<std::vector<double>*> gin) {
                                   auto& ga = *gin[0];
                                   for (std::size_t i = 0; i < r; ++i) {
                                       for (std::size_t j = 0; j < c; ++j) {
                                           ga[i * c + j] += g[j * r + i];
                                       }
                                   }
                               });
}

Tensor relu(const Tensor& a)
{
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) {
        out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    }
    return Tensor::make_result(a.shape(), std::move(out), "relu", {a},
                               [](const detail::Node& self, std::span<const double> g,
                                  std::span<std::vector<double>*> gin) {
                                   const auto& ad = self.parents[0]->data;
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       if (ad[i] > 0.0) {
                                           (*gin[0])[i] += g[i];
                                       }
                                   }
                               });
}

Tensor exp(const Tensor& a)
{
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) {
        out[i] = std::exp(ad[i]);
    }
    require_finite(out, "exp");
    return Tensor::make_result(a.shape(), std::move(out), "exp", {a},
                               [](const detail::Node& self, std::span<const double> g,
                                  std::span<std::vector<double>*> gin) {
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       (*gin[0])[i] += g[i] * self.data[i];
                                   }
                               });
}

Tensor log_softmax(const Tensor& a)
{
    if (a.rank() != 1 && a.rank() != 2) {
        throw ShapeError("log_softmax: expected rank 1 or 2, got " + shape_string(a.shape()));
    }
    const std::size_t cols = a.rank() == 1 ? a.dim(0) : a.dim(1);
    const std::size_t rows = a.size() / cols;
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = ad.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            s += std::exp(x[c] - mx);
        }
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = x[c] - lse;
        }
    }
    require_finite(out, "log_softmax");
    return Tensor::make_result(a.shape(), std::move(out), "log_softmax", {a},
                               [rows, cols](const detail::Node& self, std::span<const double> g,
                                            std::span<std::vector<double>*> gin) {
                                   // d/dx_j = g_j - softmax_j * sum_c g_c
                                   auto& ga = *gin[0];
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double gs = 0.0;
                                       for (std::size_t c = 0; c < cols; ++c) {
                                           gs += g[r * cols + c];
                                       }
                                       for (std::size_t c = 0; c < cols; ++c) {
                                           const std::size_t i = r * cols + c;
                                           ga[i] += g[i] - std::exp(self.data[i]) * gs;
                                       }
                                   }
                               });
}

Tensor sum(const Tensor& a)
{
    double s = 0.0;
    for (const double v : a.data()) {
        s += v;
    }
    require_finite(std::span<const double>(&s, 1), "sum");
    return Tensor::make_result({}, {s}, "sum", {a},
                               [](const detail::Node&, std::span<const double> g,
                                  std::span<std::vector<double>*> gin) {
                                   for (auto& v : *gin[0]) {
                                       v += g[0];
                                   }
                               });
}

Tensor mean(const Tensor& a)
{
    const double n = static_cast<double>(a.size());
    double s = 0.0;
    for (const double v : a.data()) {
        s += v;
    }
    s /= n;
    require_finite(std::span<const double>(&s, 1), "mean");
    return Tensor::make_result({}, {s}, "mean", {a},
                               [n](const detail::Node&, std::span<const double> g,
                                   std::span<std::vector<double>*> gin) {
                                   const double share = g[0] / n;
                                   for (auto& v : *gin[0]) {
                                       v += share;
                                   }
                               });
}

Tensor clamp(const Tensor& a, double lo, double hi)
{
    if (!(lo <= hi)) {
        throw InvalidArgument("clamp: lo must not exceed hi");
    }
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) {
        out[i] = std::clamp(ad[i], lo, hi);
    }
    return Tensor::make_result(a.shape(), std::move(out), "clamp", {a},
                               [lo, hi](const detail::Node& self, std::span<const double> g,
                                        std::span<std::vector<double>*> gin) {
                                   const auto& ad = self.parents[0]->data;
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       if (ad[i] > lo && ad[i] < hi) {
                                           (*gin[0])[i] += g[i];
                                       }
                                   }
                               });
}

Tensor pick(const Tensor& a, std::span<const int> index)
{
    if (a.rank() != 2 || a.dim(0) != index.size()) {
        throw ShapeError("pick: tensor " + shape_string(a.shape()) + " with " + std::to_string(index.size()) +
                         " indices");
    }
    const std::size_t rows = a.dim(0);
    const std::size_t cols = a.dim(1);
    std::vector<std::size_t> cols_picked(rows);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= cols) {
            throw InvalidArgument("pick: index " + std::to_string(index[r]) + " out of range for " +
                                  std::to_string(cols) + " columns");
        }
        cols_picked[r] = static_cast<std::size_t>(index[r]);
        out[r] = a.data()[r * cols + cols_picked[r]];
    }
    return Tensor::make_result({rows}, std::move(out), "pick", {a},
                               [cols, cols_picked](const detail::Node&, std::span<const double> g,
                                                   std::span<std::vector<double>*> gin) {
                                   for (std::size_t r = 0; r < g.size(); ++r) {
                                       (*gin[0])[r * cols + cols_picked[r]] += g[r];
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Tape and reverse mode

Tape Tape::record(const Tensor& root)
{
    Tape tape;
    if (!root.defined()) {
        throw GraphError("cannot record an undefined tensor");
    }
    std::vector<std::shared_ptr<detail::Node>> stack{root.node_};
    std::unordered_map<const detail::Node*, bool> seen;
    while (!stack.empty()) {
        auto node = std::move(stack.back());
        stack.pop_back();
        if (!node->requires_grad || !seen.emplace(node.get(), true).second) {
            continue;
        }
        for (const auto& p : node->parents) {
            stack.push_back(p);
        }
        tape.keep_alive_.push_back(std::move(node));
    }
    // Parents are always created before their children.
    std::sort(tape.keep_alive_.begin(), tape.keep_alive_.end(),
              [](const auto& x, const auto& y) { return x->sequence < y->sequence; });
    tape.nodes_.reserve(tape.keep_alive_.size());
    for (const auto& n : tape.keep_alive_) {
        tape.nodes_.push_back(n.get());
    }
    return tape;
}

bool Tape::contains(const Tensor& t) const
{
    return std::find(nodes_.begin(), nodes_.end(), t.node()) != nodes_.end();
}

std::vector<std::vector<double>> Tape::sweep(const std::vector<bool>& wanted) const
{
    std::unordered_map<const detail::Node*, std::size_t> index;
    index.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        index.emplace(nodes_[i], i);
    }
    std::vector<std::vector<double>> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (wanted[i]) {
            grads[i].assign(nodes_[i]->data.size(), 0.0);
        }
    }
    grads.back().assign(1, 1.0);

    std::vector<std::vector<double>*> gin;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const auto* node = nodes_[i];
        if (node->parents.empty() || !wanted[i]) {
            continue;
        }
        gin.assign(node->parents.size(), nullptr);
        bool any = false;
        for (std::size_t p = 0; p < node->parents.size(); ++p) {
            const auto it = index.find(node->parents[p].get());
            if (it != index.end() && wanted[it->second]) {
                gin[p] = &grads[it->second];
                any = true;
            }
        }
        if (any) {
            node->backward(*node, grads[i], gin);
        }
    }
    return grads;
}

void backward(const Tensor& loss)
{
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward requires a scalar loss, got " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) {
        throw GraphError("backward on a loss that does not depend on any requires_grad tensor");
    }
    const Tape tape = Tape::record(loss);
    const std::vector<bool> wanted(tape.size(), true);
    const auto grads = tape.sweep(wanted);
    for (std::size_t i = 0; i < tape.size(); ++i) {
        auto* node = const_cast<detail::Node*>(tape.nodes()[i]);
        if (!node->parents.empty()) {
            continue;
        }
        if (!node->grad) {
            node->grad = grads[i];
        } else {
            for (std::size_t k = 0; k < grads[i].size(); ++k) {
                (*node->grad)[k] += grads[i][k];
            }
        }
    }
}

Tensor grad_wrt(const Tensor& loss, const Tensor& target)
{
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("grad_wrt requires a scalar loss");
    }
    if (!target.defined() || !loss.requires_grad()) {
        throw GraphError("grad_wrt: target does not participate in the loss graph");
    }
    const Tape tape = Tape::record(loss);
    const auto& nodes = tape.nodes();
    // Only nodes that have the target as an ancestor (or are the target) need
    // gradients; everything else is pruned from the sweep.
    std::vector<bool> wanted(nodes.size(), false);
    std::unordered_map<const detail::Node*, std::size_t> index;
    std::size_t target_index = nodes.size();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        index.emplace(nodes[i], i);
        if (nodes[i] == target.node()) {
            wanted[i] = true;
            target_index = i;
            continue;
        }
        for (const auto& p : nodes[i]->parents) {
            const auto it = index.find(p.get());
            if (it != index.end() && wanted[it->second]) {
                wanted[i] = true;
                break;
            }
        }
    }
    if (target_index == nodes.size()) {
        throw GraphError("grad_wrt: target does not participate in the loss graph");
    }
    auto grads = tape.sweep(wanted);
    return Tensor::from(target.shape(), std::move(grads[target_index]));
}

} // namespace cure
