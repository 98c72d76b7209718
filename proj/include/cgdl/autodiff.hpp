#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "cgdl/tensor.hpp"

namespace cgdl {

// ============================================================================
// Reverse-mode automatic differentiation over Tensor values.
//
// Every operation appends a node to an implicit tape: the node stores its
// value, references to its inputs, and a closure holding whatever the backward
// rule needs. backward(loss) topologically orders the subgraph under the loss,
// zeroes the adjoints of interior nodes, seeds d(loss)/d(loss) = 1, and walks
// the tape in reverse, accumulating adjoints with +=. Leaf (parameter)
// adjoints persist across calls, so two backward passes without zero_grad()
// sum their gradients.
// ============================================================================

namespace detail {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use, same shape as value
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs

    void ensure_grad();
};

// While a guard is alive, newly built ops record no tape structure; useful for
// inference passes where gradients are never requested.
bool grad_enabled();

}  // namespace detail

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

class Var {
  public:
    Var() = default;

    static Var constant(Tensor value);
    static Var param(Tensor value);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    // In-place access for optimizers and finite-difference probes.
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const;
    void zero_grad();
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const char* op() const { return node_->op; }

    const std::vector<std::size_t>& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }

    std::shared_ptr<detail::Node> node() const { return node_; }

  private:
    explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
                       std::function<void(detail::Node&)> backprop);
};

// --- graph construction -----------------------------------------------------

// Shared factory used by every op below; exposed so higher modules can add
// fused ops (the objective module's cross-entropy uses it).
Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
            std::function<void(detail::Node&)> backprop);

// Elementwise; shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scalar_mul(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var reciprocal(const Var& a);
Var softplus(const Var& a);
Var erf(const Var& a);

// PReLU with one learnable slope: x >= 0 ? x : a*x, a a scalar tensor.
Var prelu(const Var& x, const Var& slope);

// Reductions to a scalar tensor of shape [1].
Var sum(const Var& a);
Var mean(const Var& a);

// Matrix product: a[m x k] * b[k x n].
Var matmul(const Var& a, const Var& b);

// m[r x c] + row[c] broadcast over the rows of m.
Var add_row_broadcast(const Var& m, const Var& row);

// Row-wise softmax of a 2-D tensor.
Var softmax_rows(const Var& logits);

// Gathers m[labels[i]] into row i of the output; backward scatters.
Var embedding_rows(const Var& m, const std::vector<int>& labels);

Var reshape(const Var& a, std::vector<std::size_t> new_shape);
Var concat(const Var& a, const Var& b, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t len);

// --- backward ----------------------------------------------------------------

// loss must be scalar (size 1) and require grad.
void backward(const Var& loss);

}  // namespace cgdl
