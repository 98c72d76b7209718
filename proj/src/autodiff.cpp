#include "cgdl/autodiff.hpp"

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

#include "cgdl/errors.hpp"
#include "cgdl/kernels.hpp"

namespace cgdl {

namespace {

const kernels::Ops& K() { return kernels::active(); }

thread_local bool t_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw contract_error(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                             " vs " + b.value().shape_str());
}

void require_matrix(const Var& a, const char* op) {
    if (a.value().ndim() != 2)
        throw contract_error(std::string(op) + ": expected a 2-D tensor, got " +
                             a.value().shape_str());
}

double safe_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Decomposes a shape around an axis into [outer, dim, inner] extents for
// row-major block copies (concat/slice).
struct AxisSplit {
    std::size_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size())
        throw contract_error(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for rank " + std::to_string(shape.size()));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.dim = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

namespace detail {

void Node::ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
}

bool grad_enabled() { return t_grad_enabled; }

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var Var::constant(Tensor value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::param(Tensor value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

const Tensor& Var::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Var::zero_grad() {
    if (node_ && node_->grad.size() > 0) node_->grad.fill(0.0);
}

Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
            std::function<void(detail::Node&)> backprop) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->op = name;
    n->is_leaf = false;
    bool req = false;
    if (detail::grad_enabled())
        for (const Var& in : inputs) req = req || in.requires_grad();
    n->requires_grad = req;
    if (req) {
        n->inputs.reserve(inputs.size());
        for (const Var& in : inputs) n->inputs.push_back(in.node());
        n->backprop = std::move(backprop);
    }
    return Var(std::move(n));
}

// --- elementwise -------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.value().shape());
    K().add(a.value().data(), b.value().data(), out.data(), out.size());
    auto an = a.node(), bn = b.node();
    return make_op("add", std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            K().axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            K().axpy(1.0, self.grad.data(), bn->grad.data(), self.grad.size());
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.value().shape());
    K().sub(a.value().data(), b.value().data(), out.data(), out.size());
    auto an = a.node(), bn = b.node();
    return make_op("sub", std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            K().axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            K().axpy(-1.0, self.grad.data(), bn->grad.data(), self.grad.size());
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.value().shape());
    K().mul(a.value().data(), b.value().data(), out.data(), out.size());
    auto an = a.node(), bn = b.node();
    return make_op("mul", std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            K().mul_acc(self.grad.data(), bn->value.data(), an->grad.data(), self.grad.size());
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            K().mul_acc(self.grad.data(), an->value.data(), bn->grad.data(), self.grad.size());
        }
    });
}

Var scalar_mul(const Var& a, double s) {
    Tensor out(a.value().shape());
    K().scale(a.value().data(), s, out.data(), out.size());
    auto an = a.node();
    return make_op("scalar_mul", std::move(out), {a}, [an, s](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        K().axpy(s, self.grad.data(), an->grad.data(), self.grad.size());
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    K().add_scalar(s, out.data(), out.size());
    auto an = a.node();
    return make_op("add_scalar", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        K().axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
    });
}

Var exp(const Var& a) {
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
    auto an = a.node();
    return make_op("exp", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        K().mul_acc(self.grad.data(), self.value.data(), an->grad.data(), self.grad.size());
    });
}

Var log(const Var& a) {
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
    auto an = a.node();
    return make_op("log", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double* g = self.grad.data();
        const double* x = an->value.data();
        double* dst = an->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += g[i] / x[i];
    });
}

Var sqrt(const Var& a) {
    Tensor out(a.value().shape());
    K().vsqrt(a.value().data(), out.data(), out.size());
    auto an = a.node();
    return make_op("sqrt", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double* g = self.grad.data();
        const double* y = self.value.data();
        double* dst = an->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += 0.5 * g[i] / y[i];
    });
}

Var square(const Var& a) {
    Tensor out(a.value().shape());
    K().mul(a.value().data(), a.value().data(), out.data(), out.size());
    auto an = a.node();
    return make_op("square", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double* g = self.grad.data();
        const double* x = an->value.data();
        double* dst = an->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += 2.0 * g[i] * x[i];
    });
}

Var abs(const Var& a) {
    Tensor out(a.value().shape());
    K().vabs(a.value().data(), out.data(), out.size());
    auto an = a.node();
    return make_op("abs", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double* g = self.grad.data();
        const double* x = an->value.data();
        double* dst = an->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            dst[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
    });
}

Var reciprocal(const Var& a) {
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / a.value()[i];
    auto an = a.node();
    return make_op("reciprocal", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double* g = self.grad.data();
        const double* y = self.value.data();
        double* dst = an->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] -= g[i] * y[i] * y[i];
    });
}

Var softplus(const Var& a) {
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.value()[i];
        // Overflow-safe split: for large x, log(1+e^x) = x + log(1+e^-x).
        // Clamped to the smallest positive normal double so downstream
        // variance math (reciprocal, log) never sees an exact zero.
        const double y = x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        out[i] = y > 2.2250738585072014e-308 ? y : 2.2250738585072014e-308;
    }
    auto an = a.node();
    return make_op("softplus", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double* g = self.grad.data();
        const double* x = an->value.data();
        double* dst = an->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += g[i] * safe_sigmoid(x[i]);
    });
}

Var erf(const Var& a) {
    Tensor out(a.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::erf(a.value()[i]);
    auto an = a.node();
    return make_op("erf", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double two_over_sqrt_pi = 1.1283791670955125738961589031;
        const double* g = self.grad.data();
        const double* x = an->value.data();
        double* dst = an->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            dst[i] += g[i] * two_over_sqrt_pi * std::exp(-x[i] * x[i]);
    });
}

Var prelu(const Var& x, const Var& slope) {
    if (slope.value().size() != 1) throw contract_error("prelu: slope must be a scalar tensor");
    const double a = slope.value()[0];
    Tensor out(x.value().shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.value()[i];
        out[i] = v >= 0.0 ? v : a * v;
    }
    auto xn = x.node(), sn = slope.node();
    return make_op("prelu", std::move(out), {x, slope}, [xn, sn, a](detail::Node& self) {
        const double* g = self.grad.data();
        const double* xv = xn->value.data();
        if (xn->requires_grad) {
            xn->ensure_grad();
            double* dst = xn->grad.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                dst[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : a);
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (xv[i] < 0.0) acc += g[i] * xv[i];
            sn->grad[0] += acc;
        }
    });
}

// --- reductions --------------------------------------------------------------

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(K().sum(a.value().data(), a.value().size()));
    auto an = a.node();
    return make_op("sum", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        K().add_scalar(self.grad[0], an->grad.data(), an->grad.size());
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    Tensor out = Tensor::scalar(K().sum(a.value().data(), a.value().size()) / n);
    auto an = a.node();
    return make_op("mean", std::move(out), {a}, [an, n](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        K().add_scalar(self.grad[0] / n, an->grad.data(), an->grad.size());
    });
}

// --- linear algebra ----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.value().shape()[0];
    const std::size_t k = a.value().shape()[1];
    const std::size_t n = b.value().shape()[1];
    if (b.value().shape()[0] != k)
        throw contract_error("matmul: inner dimensions disagree, " + a.value().shape_str() +
                             " vs " + b.value().shape_str());
    Tensor out({m, n});
    K().matmul_nn(a.value().data(), b.value().data(), out.data(), m, k, n, false);
    auto an = a.node(), bn = b.node();
    return make_op("matmul", std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            K().matmul_nt(self.grad.data(), bn->value.data(), an->grad.data(), m, k, n, true);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            K().matmul_tn(an->value.data(), self.grad.data(), bn->grad.data(), m, k, n, true);
        }
    });
}

Var add_row_broadcast(const Var& m, const Var& row) {
    require_matrix(m, "add_row_broadcast");
    const std::size_t r = m.value().shape()[0];
    const std::size_t c = m.value().shape()[1];
    if (row.value().size() != c)
        throw contract_error("add_row_broadcast: row length " +
                             std::to_string(row.value().size()) + " vs " + std::to_string(c) +
                             " columns");
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
        K().add(m.value().data() + i * c, row.value().data(), out.data() + i * c, c);
    auto mn = m.node(), rn = row.node();
    return make_op("add_row_broadcast", std::move(out), {m, row}, [mn, rn, r, c](detail::Node& self) {
        if (mn->requires_grad) {
            mn->ensure_grad();
            K().axpy(1.0, self.grad.data(), mn->grad.data(), self.grad.size());
        }
        if (rn->requires_grad) {
            rn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                K().axpy(1.0, self.grad.data() + i * c, rn->grad.data(), c);
        }
    });
}

Var softmax_rows(const Var& logits) {
    require_matrix(logits, "softmax_rows");
    const std::size_t r = logits.value().shape()[0];
    const std::size_t c = logits.value().shape()[1];
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = logits.value().data() + i * c;
        double* y = out.data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < c; ++j) y[j] /= z;
    }
    auto ln = logits.node();
    return make_op("softmax_rows", std::move(out), {logits}, [ln, r, c](detail::Node& self) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* g = self.grad.data() + i * c;
            const double* y = self.value.data() + i * c;
            double* dst = ln->grad.data() + i * c;
            const double s = K().dot(g, y, c);
            for (std::size_t j = 0; j < c; ++j) dst[j] += y[j] * (g[j] - s);
        }
    });
}

Var embedding_rows(const Var& m, const std::vector<int>& labels) {
    require_matrix(m, "embedding_rows");
    const std::size_t rows = m.value().shape()[0];
    const std::size_t c = m.value().shape()[1];
    Tensor out({labels.size(), c});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= rows)
            throw contract_error("embedding_rows: label " + std::to_string(labels[i]) +
                                 " out of range [0," + std::to_string(rows) + ")");
        const double* src = m.value().data() + static_cast<std::size_t>(labels[i]) * c;
        double* dst = out.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] = src[j];
    }
    auto mn = m.node();
    auto idx = labels;
    return make_op("embedding_rows", std::move(out), {m}, [mn, idx, c](detail::Node& self) {
        if (!mn->requires_grad) return;
        mn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            K().axpy(1.0, self.grad.data() + i * c,
                     mn->grad.data() + static_cast<std::size_t>(idx[i]) * c, c);
    });
}

// --- shape ops ---------------------------------------------------------------

Var reshape(const Var& a, std::vector<std::size_t> new_shape) {
    Tensor out(std::move(new_shape), a.value().storage());
    if (out.size() != a.value().size())
        throw contract_error("reshape: size mismatch, " + a.value().shape_str() + " -> " +
                             out.shape_str());
    auto an = a.node();
    return make_op("reshape", std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        K().axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
    });
}

Var concat(const Var& a, const Var& b, std::size_t axis) {
    const auto& sa = a.value().shape();
    const auto& sb = b.value().shape();
    if (sa.size() != sb.size())
        throw contract_error("concat: rank mismatch " + a.value().shape_str() + " vs " +
                             b.value().shape_str());
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (i != axis && sa[i] != sb[i])
            throw contract_error("concat: non-axis dimensions differ, " + a.value().shape_str() +
                                 " vs " + b.value().shape_str());
    const AxisSplit pa = split_axis(sa, axis, "concat");
    const AxisSplit pb = split_axis(sb, axis, "concat");
    std::vector<std::size_t> out_shape = sa;
    out_shape[axis] = sa[axis] + sb[axis];
    Tensor out(out_shape);
    const std::size_t a_block = pa.dim * pa.inner;
    const std::size_t b_block = pb.dim * pb.inner;
    for (std::size_t o = 0; o < pa.outer; ++o) {
        double* dst = out.data() + o * (a_block + b_block);
        const double* pa_src = a.value().data() + o * a_block;
        const double* pb_src = b.value().data() + o * b_block;
        for (std::size_t i = 0; i < a_block; ++i) dst[i] = pa_src[i];
        for (std::size_t i = 0; i < b_block; ++i) dst[a_block + i] = pb_src[i];
    }
    auto an = a.node(), bn = b.node();
    return make_op("concat", std::move(out), {a, b},
                   [an, bn, pa, a_block, b_block](detail::Node& self) {
                       for (std::size_t o = 0; o < pa.outer; ++o) {
                           const double* g = self.grad.data() + o * (a_block + b_block);
                           if (an->requires_grad) {
                               an->ensure_grad();
                               K().axpy(1.0, g, an->grad.data() + o * a_block, a_block);
                           }
                           if (bn->requires_grad) {
                               bn->ensure_grad();
                               K().axpy(1.0, g + a_block, bn->grad.data() + o * b_block, b_block);
                           }
                       }
                   });
}

Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t len) {
    const auto& sa = a.value().shape();
    const AxisSplit p = split_axis(sa, axis, "slice");
    if (len == 0 || start + len > p.dim)
        throw contract_error("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for dimension " +
                             std::to_string(p.dim));
    std::vector<std::size_t> out_shape = sa;
    out_shape[axis] = len;
    Tensor out(out_shape);
    const std::size_t in_block = p.dim * p.inner;
    const std::size_t out_block = len * p.inner;
    for (std::size_t o = 0; o < p.outer; ++o) {
        const double* src = a.value().data() + o * in_block + start * p.inner;
        double* dst = out.data() + o * out_block;
        for (std::size_t i = 0; i < out_block; ++i) dst[i] = src[i];
    }
    auto an = a.node();
    return make_op("slice", std::move(out), {a},
                   [an, p, start, in_block, out_block](detail::Node& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::size_t o = 0; o < p.outer; ++o)
                           K().axpy(1.0, self.grad.data() + o * out_block,
                                    an->grad.data() + o * in_block + start * p.inner, out_block);
                   });
}

// --- backward ----------------------------------------------------------------

void backward(const Var& loss) {
    if (!loss.defined()) throw contract_error("backward: undefined loss");
    if (loss.size() != 1)
        throw contract_error("backward: loss must be scalar, got shape " +
                             loss.value().shape_str());
    if (!loss.requires_grad())
        throw contract_error("backward: loss does not depend on any parameter");

    // Iterative post-order DFS; each node enters the order exactly once.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    struct Frame {
        detail::Node* node;
        std::size_t next_child;
    };
    std::vector<Frame> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->inputs.size()) {
            detail::Node* child = f.node->inputs[f.next_child++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    // Interior adjoints restart at zero each pass; leaf (parameter) adjoints
    // accumulate across passes until zero_grad.
    for (detail::Node* n : order) {
        if (!n->is_leaf) {
            n->ensure_grad();
            n->grad.fill(0.0);
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

}  // namespace cgdl
