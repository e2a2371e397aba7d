#ifndef CURE_TENSOR_HPP
#define CURE_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cure {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::string shape_string(const Shape& shape);
[[nodiscard]] std::size_t shape_size(const Shape& shape);

namespace detail {

struct Node;

// Accumulates the contribution of one node's output gradient into the
// gradient buffers of its parents. A null buffer means the parent does not
// need a gradient on this pass.
using BackwardRule = std::function<void(const Node& self, std::span<const double> grad_out,
                                        std::span<std::vector<double>*> grad_in)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad{false};
    std::optional<std::vector<double>> grad;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardRule backward;
    std::uint64_t sequence{0};
    const char* op{"leaf"};
};

} // namespace detail

/// Dense row-major tensor of doubles. Copies share storage; the graph of
/// operations that produced a tensor is kept alive by the tensor itself.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(std::size_t n);

    [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] std::size_t rank() const { return shape().size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const;
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] std::span<const double> data() const;
    [[nodiscard]] double at(std::size_t flat) const { return data()[flat]; }
    [[nodiscard]] double at(std::size_t row, std::size_t col) const;
    [[nodiscard]] double item() const;

    /// Writable view of a leaf tensor's storage (optimizer updates, attack
    /// iterates). Throws for tensors produced by an operation.
    [[nodiscard]] std::span<double> mutable_data();

    [[nodiscard]] bool requires_grad() const;
    void set_requires_grad(bool flag);
    [[nodiscard]] bool is_leaf() const;

    [[nodiscard]] bool has_grad() const;
    [[nodiscard]] std::span<const double> grad() const;
    void accumulate_grad(std::span<const double> values);
    void zero_grad();

    /// New leaf holding a copy of the values, cut from any graph.
    [[nodiscard]] Tensor detach() const;
    [[nodiscard]] Tensor clone(bool requires_grad) const;
    [[nodiscard]] Tensor reshape(Shape shape) const;

    [[nodiscard]] bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }
    [[nodiscard]] const detail::Node* node() const noexcept { return node_.get(); }

    static Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                              std::vector<Tensor> inputs, detail::BackwardRule rule);

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    [[nodiscard]] detail::Node& checked() const;

    std::shared_ptr<detail::Node> node_;

    friend class Tape;
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

[[nodiscard]] bool grad_mode_enabled() noexcept;

// Forward operations. Elementwise binary ops accept equal shapes or a
// [batch x n] operand paired with an [n] operand broadcast over the batch axis.
[[nodiscard]] Tensor add(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor sub(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor mul(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor scale(const Tensor& a, double factor);
[[nodiscard]] Tensor matmul(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor transpose(const Tensor& a);
[[nodiscard]] Tensor relu(const Tensor& a);
[[nodiscard]] Tensor exp(const Tensor& a);
/// Row-wise over the last axis; a rank-1 tensor is treated as one row.
[[nodiscard]] Tensor log_softmax(const Tensor& a);
[[nodiscard]] Tensor sum(const Tensor& a);
[[nodiscard]] Tensor mean(const Tensor& a);
/// Gradient passes only where lo < x < hi.
[[nodiscard]] Tensor clamp(const Tensor& a, double lo, double hi);
/// out[i] = a[i, index[i]] for a [batch x C] tensor.
[[nodiscard]] Tensor pick(const Tensor& a, std::span<const int> index);

[[nodiscard]] inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
[[nodiscard]] inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
[[nodiscard]] inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
[[nodiscard]] inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Topologically ordered record of every operation reachable from a root.
class Tape {
public:
    static Tape record(const Tensor& root);

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool contains(const Tensor& t) const;
    [[nodiscard]] const std::vector<const detail::Node*>& nodes() const noexcept { return nodes_; }

    /// Reverse sweep from the root seeded with d(root)/d(root) = 1. Only nodes
    /// for which `wanted` holds receive gradient buffers.
    [[nodiscard]] std::vector<std::vector<double>> sweep(const std::vector<bool>& wanted) const;

private:
    std::vector<const detail::Node*> nodes_;
    std::vector<std::shared_ptr<detail::Node>> keep_alive_;
};

/// Accumulates d(loss)/d(t) into every requires_grad leaf t reachable from loss.
void backward(const Tensor& loss);

/// d(loss)/d(target) without touching any stored gradient.
[[nodiscard]] Tensor grad_wrt(const Tensor& loss, const Tensor& target);

} // namespace cure

#endif // CURE_TENSOR_HPP
