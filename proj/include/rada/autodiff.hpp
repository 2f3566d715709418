#pragma once

// Reverse-mode gradient tape over rada::Tensor.
//
// A Tape owns every value produced while building an objective. Each
// recorded op keeps the ids of its parents plus a closure that maps the
// gradient of its output onto its parents. backward() walks the tape in
// reverse insertion order, which is a valid topological order because ops
// can only reference earlier nodes.
//
// Gradients exist only for nodes that (transitively) depend on a leaf
// created with requires_grad = true. Constants never receive gradients.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rada/errors.hpp"
#include "rada/tensor.hpp"

namespace rada {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value) {
        const bool rg = value.requires_grad;
        return push(std::move(value), rg, {});
    }

    Var leaf(Tensor value, bool requires_grad) {
        value.requires_grad = requires_grad;
        return leaf(std::move(value));
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Record a derived value. The node requires grad iff any parent does.
    Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
        bool rg = false;
        for (const Var& p : parents) rg = rg || nodes_.at(p.id).requires_grad;
        return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
    }

    Var record(Tensor value, const std::vector<Var>& parents, Backward backward) {
        bool rg = false;
        for (const Var& p : parents) rg = rg || nodes_.at(p.id).requires_grad;
        return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Gradient of the last backward() target wrt v. Nodes off the path get zeros.
    Tensor grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (!n.requires_grad) {
            throw ContractError("no gradient is tracked for a tensor created without requires_grad");
        }
        if (n.grad.empty()) return Tensor(n.value.shape());
        return n.grad;
    }

    void backward(Var loss) {
        const Node& target = nodes_.at(loss.id);
        if (target.value.size() != 1) {
            throw ContractError("backward needs a scalar loss, got shape " + shape_string(target.value.shape()));
        }
        for (Node& n : nodes_) n.grad = Tensor();
        if (!target.requires_grad) return;
        nodes_[loss.id].grad = Tensor(target.value.shape(), 1.0);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, n.grad);
        }
    }

    // Add contribution into the gradient of v (skipped for constants).
    void accumulate(Var v, const Tensor& contribution) {
        Node& n = nodes_.at(v.id);
        if (!n.requires_grad) return;
        if (n.grad.empty()) {
            n.grad = contribution;
            n.grad.requires_grad = false;
            return;
        }
        auto dst = n.grad.data();
        auto src = contribution.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    void accumulate(Var v, Tensor&& contribution) {
        Node& n = nodes_.at(v.id);
        if (!n.requires_grad) return;
        if (n.grad.empty()) {
            n.grad = std::move(contribution);
            n.grad.requires_grad = false;
            return;
        }
        auto dst = n.grad.data();
        auto src = contribution.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Tensor value, bool requires_grad, Backward backward) {
        value.requires_grad = requires_grad;
        nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(backward)});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace ad {

namespace detail {

inline void same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes differ " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

inline Tensor elementwise(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    Tensor out = rada::matmul(a.value(), b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, rada::matmul(g, rada::transpose(b.value())));
        if (t.requires_grad(b)) t.accumulate(b, rada::matmul(rada::transpose(a.value()), g));
    });
}

inline Var transpose(Var a) {
    return a.tape->record(rada::transpose(a.value()), {a},
                          [a](Tape& t, const Tensor& g) { t.accumulate(a, rada::transpose(g)); });
}

// a · bᵀ
inline Var matmul_nt(Var a, Var b) { return matmul(a, transpose(b)); }

inline Var add(Var a, Var b) {
    detail::same_shape(a, b, "add");
    Tensor out = detail::elementwise(a.value(), b.value(), [](double x, double y) { return x + y; });
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

inline Var sub(Var a, Var b) {
    detail::same_shape(a, b, "sub");
    Tensor out = detail::elementwise(a.value(), b.value(), [](double x, double y) { return x - y; });
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        Tensor neg = g;
        for (double& v : neg.data()) v = -v;
        t.accumulate(b, std::move(neg));
    });
}

// Hadamard product.
inline Var mul(Var a, Var b) {
    detail::same_shape(a, b, "mul");
    Tensor out = detail::elementwise(a.value(), b.value(), [](double x, double y) { return x * y; });
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a))
            t.accumulate(a, detail::elementwise(g, b.value(), [](double x, double y) { return x * y; }));
        if (t.requires_grad(b))
            t.accumulate(b, detail::elementwise(g, a.value(), [](double x, double y) { return x * y; }));
    });
}

inline Var scale(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= s;
    return a.tape->record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
        Tensor d = g;
        for (double& v : d.data()) v *= s;
        t.accumulate(a, std::move(d));
    });
}

inline Var add_scalar(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.data()) v += s;
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

inline Var softmax_lastdim(Var a) {
    Tensor out = rada::softmax_lastdim(a.value());
    Tensor saved = out;
    return a.tape->record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Tensor& g) {
        const std::size_t w = saved.cols();
        Tensor d(saved.shape());
        for (std::size_t r = 0; r < saved.size() / w; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < w; ++j) dot += g[r * w + j] * saved[r * w + j];
            for (std::size_t j = 0; j < w; ++j) d[r * w + j] = saved[r * w + j] * (g[r * w + j] - dot);
        }
        t.accumulate(a, std::move(d));
    });
}

inline Var log(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::log(v);
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] /= a.value()[i];
        t.accumulate(a, std::move(d));
    });
}

inline Var tanh(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::tanh(v);
    Tensor saved = out;
    return a.tape->record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Tensor& g) {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - saved[i] * saved[i];
        t.accumulate(a, std::move(d));
    });
}

// |a| with subgradient 0 at the kink.
inline Var abs(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::abs(v);
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double x = a.value()[i];
            d[i] *= (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        }
        t.accumulate(a, std::move(d));
    });
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape->record(Tensor({1}, s), {a}, [a](Tape& t, const Tensor& g) {
        t.accumulate(a, Tensor(a.shape(), g[0]));
    });
}

inline Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

// Maximum entry; the gradient flows to the first maximal entry only.
inline Var max_all(Var a) {
    const auto& x = a.value();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] > x[arg]) arg = i;
    return a.tape->record(Tensor({1}, x[arg]), {a}, [a, arg](Tape& t, const Tensor& g) {
        Tensor d(a.shape());
        d[arg] = g[0];
        t.accumulate(a, std::move(d));
    });
}

// Sum along the last axis of an n x m matrix, returned as a 1 x n row.
inline Var row_sums(Var a) {
    const Tensor& x = a.value();
    require_matrix(x, "row_sums operand");
    Tensor out({1, x.rows()});
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (double v : x.row_span(i)) out(0, i) += v;
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& x = a.value();
        Tensor d(x.shape());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = g(0, i);
        t.accumulate(a, std::move(d));
    });
}

// Mean over rows of an n x m matrix -> 1 x m.
inline Var mean_rows(Var a) {
    const Tensor& x = a.value();
    require_matrix(x, "mean_rows operand");
    const double n = static_cast<double>(x.rows());
    Tensor out({1, x.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j) / n;
    return a.tape->record(std::move(out), {a}, [a, n](Tape& t, const Tensor& g) {
        Tensor d(a.shape());
        for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) = g(0, j) / n;
        t.accumulate(a, std::move(d));
    });
}

// Broadcast a 1 x m row to n x m.
inline Var repeat_rows(Var a, std::size_t n) {
    const Tensor& x = a.value();
    if (x.rank() != 2 || x.rows() != 1) {
        throw DimensionError("repeat_rows needs a 1 x m row, got " + shape_string(x.shape()));
    }
    Tensor out({n, x.cols()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(0, j);
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor d(a.shape());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) d(0, j) += g(i, j);
        t.accumulate(a, std::move(d));
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw DegenerateInputError("concat_rows of nothing");
    const std::size_t w = parts.front().value().cols();
    std::size_t n = 0;
    for (const Var& p : parts) {
        require_matrix(p.value(), "concat_rows part");
        if (p.value().cols() != w) throw DimensionError("concat_rows parts differ in width");
        n += p.value().rows();
    }
    std::vector<double> data;
    data.reserve(n * w);
    for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    return parts.front().tape->record(Tensor({n, w}, std::move(data)), parts, [parts](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
            const std::size_t len = p.value().size();
            if (t.requires_grad(p)) {
                std::vector<double> d(g.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                      g.data().begin() + static_cast<std::ptrdiff_t>(offset + len));
                t.accumulate(p, Tensor(p.shape(), std::move(d)));
            }
            offset += len;
        }
    });
}

inline Var select_rows(Var a, std::vector<std::size_t> indices) {
    const Tensor& x = a.value();
    require_matrix(x, "select_rows operand");
    Tensor out({indices.size(), x.cols()});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= x.rows()) throw DimensionError("select_rows index out of range");
        for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = x(indices[r], j);
    }
    return a.tape->record(std::move(out), {a}, [a, indices = std::move(indices)](Tape& t, const Tensor& g) {
        Tensor d(a.shape());
        for (std::size_t r = 0; r < indices.size(); ++r)
            for (std::size_t j = 0; j < d.cols(); ++j) d(indices[r], j) += g(r, j);
        t.accumulate(a, std::move(d));
    });
}

inline Var l2_normalize_rows(Var a) {
    const Tensor& x = a.value();
    const auto norms = row_norms(x);
    Tensor out = rada::l2_normalize_rows(x);
    Tensor saved = out;
    return a.tape->record(std::move(out), {a}, [a, norms, saved = std::move(saved)](Tape& t, const Tensor& g) {
        // d(x/|x|) = (g - y (y·g)) / |x|
        Tensor d(saved.shape());
        for (std::size_t i = 0; i < saved.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < saved.cols(); ++j) dot += saved(i, j) * g(i, j);
            for (std::size_t j = 0; j < saved.cols(); ++j) d(i, j) = (g(i, j) - saved(i, j) * dot) / norms[i];
        }
        t.accumulate(a, std::move(d));
    });
}

// Set columns j with keep[j] == false to -inf (attention key masking).
inline Var mask_columns(Var a, std::vector<bool> keep) {
    const Tensor& x = a.value();
    require_matrix(x, "mask_columns operand");
    if (keep.size() != x.cols()) throw DimensionError("mask_columns: keep length differs from column count");
    Tensor out = x;
    out.requires_grad = false;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            if (!keep[j]) out(i, j) = -std::numeric_limits<double>::infinity();
    return a.tape->record(std::move(out), {a}, [a, keep = std::move(keep)](Tape& t, const Tensor& g) {
        Tensor d = g;
        for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < d.cols(); ++j)
                if (!keep[j]) d(i, j) = 0.0;
        t.accumulate(a, std::move(d));
    });
}

// Mean negative log-likelihood of labels under row-wise softmax(logits).
inline Var cross_entropy(Var logits, std::vector<std::size_t> labels) {
    const Tensor& z = logits.value();
    require_matrix(z, "cross_entropy logits");
    if (labels.size() != z.rows()) throw DimensionError("cross_entropy: one label per row required");
    const std::size_t k = z.cols();
    for (std::size_t y : labels)
        if (y >= k) throw ContractError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
    Tensor probs = rada::softmax_lastdim(z);
    double total = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double mx = z(r, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z(r, j));
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(z(r, j) - mx);
        total += (mx + std::log(s)) - z(r, labels[r]);
    }
    const double n = static_cast<double>(z.rows());
    return logits.tape->record(
        Tensor({1}, total / n), {logits},
        [logits, labels = std::move(labels), probs = std::move(probs), n](Tape& t, const Tensor& g) {
            Tensor d = probs;
            for (std::size_t r = 0; r < d.rows(); ++r) d(r, labels[r]) -= 1.0;
            for (double& v : d.data()) v *= g[0] / n;
            t.accumulate(logits, std::move(d));
        });
}

}  // namespace ad

}  // namespace rada
