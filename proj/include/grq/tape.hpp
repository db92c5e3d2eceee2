#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace grq {

namespace detail {

// C += A * B, shapes [m,k] x [k,n]. Fixed i,p,j loop order: every output
// element accumulates over p in ascending order, so results are bitwise
// independent of how rows are batched or permuted.
inline void matmul_acc(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                       std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* c = C + std::size_t(i) * std::size_t(n);
        const double* a = A + std::size_t(i) * std::size_t(k);
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + std::size_t(p) * std::size_t(n);
            for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// dA += dC * B^T, shapes dC [m,n], B [k,n], dA [m,k].
inline void matmul_acc_bt(const double* dC, const double* B, double* dA, std::int64_t m,
                          std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* dc = dC + std::size_t(i) * std::size_t(n);
        double* da = dA + std::size_t(i) * std::size_t(k);
        for (std::int64_t p = 0; p < k; ++p) {
            const double* b = B + std::size_t(p) * std::size_t(n);
            double s = 0.0;
            for (std::int64_t j = 0; j < n; ++j) s += dc[j] * b[j];
            da[p] += s;
        }
    }
}

// dB += A^T * dC, shapes A [m,k], dC [m,n], dB [k,n].
inline void matmul_acc_at(const double* A, const double* dC, double* dB, std::int64_t m,
                          std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* a = A + std::size_t(i) * std::size_t(k);
        const double* dc = dC + std::size_t(i) * std::size_t(n);
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[p];
            double* db = dB + std::size_t(p) * std::size_t(n);
            for (std::int64_t j = 0; j < n; ++j) db[j] += av * dc[j];
        }
    }
}

}  // namespace detail

using VarId = std::int32_t;
constexpr VarId kNoVar = -1;

enum class Unary { elu, tanh_fn, sigmoid, exp_fn, log1p_fn };

/// History of per-step entries feeding a single-query attention read.
/// `base` is an optional [b*base_len, d] node holding entries that predate the
/// current tape (re-projected window carry); `steps` are [b, d] nodes pushed
/// one per time step. Window truncation happens inside the attention op.
struct AttnHistory {
    VarId base = kNoVar;
    std::int64_t base_len = 0;
    std::vector<VarId> steps;

    std::int64_t total() const { return base_len + std::int64_t(steps.size()); }
};

// Reverse-mode tape over Tensor values. Nodes are created in forward order;
// backward() replays their closures in strictly reverse creation order, which
// makes gradient accumulation order deterministic. Closures of nodes whose
// gradient was never touched are skipped entirely, so graph regions that do
// not reach the loss contribute nothing -- not even rounding.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- node creation --------------------------------------------------------

    /// Tracked input: gradients are accumulated for it.
    VarId leaf(Tensor value) { return push(std::move(value), true); }

    /// Untracked input: backward never allocates a gradient for it.
    VarId constant(Tensor value) { return push(std::move(value), false); }

    const Tensor& value(VarId id) const { return nodes_[check(id)].value; }

    /// Gradient after backward(); zeros if the node was never on a loss path.
    Tensor grad_of(VarId id) const {
        const Node& n = nodes_[check(id)];
        if (n.grad.empty()) return Tensor(n.value.shape());
        return n.grad;
    }

    bool requires_grad(VarId id) const { return nodes_[check(id)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        ran_backward_ = false;
    }

    // --- ops -------------------------------------------------------------------

    VarId matmul(VarId a, VarId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_rank(A, 2, "matmul lhs");
        require_rank(B, 2, "matmul rhs");
        if (A.dim(1) != B.dim(0))
            throw dimension_error("matmul: inner dims " + shape_str(A.shape()) + " x " +
                                  shape_str(B.shape()));
        const std::int64_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
        Tensor C({m, n});
        detail::matmul_acc(A.data(), B.data(), C.data(), m, k, n);
        VarId out = result(std::move(C), {a, b});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [a, b, out, m, k, n](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                if (t.requires_grad(a))
                    detail::matmul_acc_bt(g.data(), t.value(b).data(), t.grad_ref(a).data(), m, k, n);
                if (t.requires_grad(b))
                    detail::matmul_acc_at(t.value(a).data(), g.data(), t.grad_ref(b).data(), m, k, n);
            };
        }
        return out;
    }

    VarId add(VarId a, VarId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw dimension_error("add: shape mismatch " + shape_str(A.shape()) + " vs " +
                                  shape_str(B.shape()));
        Tensor C(A.shape());
        for (std::size_t i = 0; i < C.numel(); ++i) C.data()[i] = A.data()[i] + B.data()[i];
        VarId out = result(std::move(C), {a, b});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [a, b, out](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                if (t.requires_grad(a)) t.accum(a, g);
                if (t.requires_grad(b)) t.accum(b, g);
            };
        }
        return out;
    }

    VarId sub(VarId a, VarId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw dimension_error("sub: shape mismatch " + shape_str(A.shape()) + " vs " +
                                  shape_str(B.shape()));
        Tensor C(A.shape());
        for (std::size_t i = 0; i < C.numel(); ++i) C.data()[i] = A.data()[i] - B.data()[i];
        VarId out = result(std::move(C), {a, b});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [a, b, out](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                if (t.requires_grad(a)) t.accum(a, g);
                if (t.requires_grad(b)) {
                    Tensor& gb = t.grad_ref(b);
                    for (std::size_t i = 0; i < g.numel(); ++i) gb.data()[i] -= g.data()[i];
                }
            };
        }
        return out;
    }

    /// Hadamard product.
    VarId mul(VarId a, VarId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw dimension_error("mul: shape mismatch " + shape_str(A.shape()) + " vs " +
                                  shape_str(B.shape()));
        Tensor C(A.shape());
        for (std::size_t i = 0; i < C.numel(); ++i) C.data()[i] = A.data()[i] * B.data()[i];
        VarId out = result(std::move(C), {a, b});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [a, b, out](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                if (t.requires_grad(a)) {
                    Tensor& ga = t.grad_ref(a);
                    const Tensor& B2 = t.value(b);
                    for (std::size_t i = 0; i < g.numel(); ++i) ga.data()[i] += g.data()[i] * B2.data()[i];
                }
                if (t.requires_grad(b)) {
                    Tensor& gb = t.grad_ref(b);
                    const Tensor& A2 = t.value(a);
                    for (std::size_t i = 0; i < g.numel(); ++i) gb.data()[i] += g.data()[i] * A2.data()[i];
                }
            };
        }
        return out;
    }

    VarId scale(VarId a, double c) {
        const Tensor& A = value(a);
        Tensor C(A.shape());
        for (std::size_t i = 0; i < C.numel(); ++i) C.data()[i] = c * A.data()[i];
        VarId out = result(std::move(C), {a});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [a, c, out](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                Tensor& ga = t.grad_ref(a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga.data()[i] += c * g.data()[i];
            };
        }
        return out;
    }

    /// x [m,n] + v [n], broadcast over rows.
    VarId add_bias(VarId x, VarId v) {
        const Tensor& X = value(x);
        const Tensor& V = value(v);
        require_rank(X, 2, "add_bias input");
        require_rank(V, 1, "add_bias bias");
        if (X.dim(1) != V.dim(0))
            throw dimension_error("add_bias: width " + std::to_string(X.dim(1)) + " vs bias " +
                                  std::to_string(V.dim(0)));
        const std::int64_t m = X.dim(0), n = X.dim(1);
        Tensor C({m, n});
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) C(i, j) = X(i, j) + V(j);
        VarId out = result(std::move(C), {x, v});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [x, v, out, m, n](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                if (t.requires_grad(x)) t.accum(x, g);
                if (t.requires_grad(v)) {
                    Tensor& gv = t.grad_ref(v);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j) gv(j) += g(i, j);
                }
            };
        }
        return out;
    }

    /// x [m,n] * v [n], broadcast over rows.
    VarId mul_bias(VarId x, VarId v) {
        const Tensor& X = value(x);
        const Tensor& V = value(v);
        require_rank(X, 2, "mul_bias input");
        require_rank(V, 1, "mul_bias weights");
        if (X.dim(1) != V.dim(0))
            throw dimension_error("mul_bias: width " + std::to_string(X.dim(1)) + " vs weights " +
                                  std::to_string(V.dim(0)));
        const std::int64_t m = X.dim(0), n = X.dim(1);
        Tensor C({m, n});
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) C(i, j) = X(i, j) * V(j);
        VarId out = result(std::move(C), {x, v});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [x, v, out, m, n](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                if (t.requires_grad(x)) {
                    Tensor& gx = t.grad_ref(x);
                    const Tensor& V2 = t.value(v);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j) gx(i, j) += g(i, j) * V2(j);
                }
                if (t.requires_grad(v)) {
                    Tensor& gv = t.grad_ref(v);
                    const Tensor& X2 = t.value(x);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j) gv(j) += g(i, j) * X2(i, j);
                }
            };
        }
        return out;
    }

    /// x [m,n] + row [n] where row is a plain value (e.g. a positional code).
    VarId add_row_const(VarId x, Tensor row) {
        const Tensor& X = value(x);
        require_rank(X, 2, "add_row_const input");
        require_rank(row, 1, "add_row_const row");
        if (X.dim(1) != row.dim(0))
            throw dimension_error("add_row_const: width mismatch");
        Tensor C(X.shape());
        for (std::int64_t i = 0; i < X.dim(0); ++i)
            for (std::int64_t j = 0; j < X.dim(1); ++j) C(i, j) = X(i, j) + row(j);
        VarId out = result(std::move(C), {x});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [x, out](Tape& t) {
                t.accum(x, t.nodes_[std::size_t(out)].grad);
            };
        }
        return out;
    }

    VarId unary(Unary kind, VarId x) {
        const Tensor& X = value(x);
        Tensor Y(X.shape());
        for (std::size_t i = 0; i < X.numel(); ++i) {
            const double v = X.data()[i];
            switch (kind) {
                case Unary::elu: Y.data()[i] = v >= 0.0 ? v : std::expm1(v); break;
                case Unary::tanh_fn: Y.data()[i] = std::tanh(v); break;
                case Unary::sigmoid: Y.data()[i] = 1.0 / (1.0 + std::exp(-v)); break;
                case Unary::exp_fn: Y.data()[i] = std::exp(v); break;
                case Unary::log1p_fn: Y.data()[i] = std::log1p(v); break;
            }
        }
        VarId out = result(std::move(Y), {x});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [kind, x, out](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                const Tensor& Y2 = t.value(out);
                const Tensor& X2 = t.value(x);
                Tensor& gx = t.grad_ref(x);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    double d = 0.0;
                    switch (kind) {
                        case Unary::elu: d = X2.data()[i] >= 0.0 ? 1.0 : Y2.data()[i] + 1.0; break;
                        case Unary::tanh_fn: d = 1.0 - Y2.data()[i] * Y2.data()[i]; break;
                        case Unary::sigmoid: d = Y2.data()[i] * (1.0 - Y2.data()[i]); break;
                        case Unary::exp_fn: d = Y2.data()[i]; break;
                        case Unary::log1p_fn: d = 1.0 / (1.0 + X2.data()[i]); break;
                    }
                    gx.data()[i] += g.data()[i] * d;
                }
            };
        }
        return out;
    }

    VarId elu(VarId x) { return unary(Unary::elu, x); }
    VarId tanh_(VarId x) { return unary(Unary::tanh_fn, x); }
    VarId sigmoid(VarId x) { return unary(Unary::sigmoid, x); }
    VarId exp_(VarId x) { return unary(Unary::exp_fn, x); }
    VarId log1p_(VarId x) { return unary(Unary::log1p_fn, x); }

    /// Row-wise layer normalization with learnable gain/offset.
    VarId layer_norm(VarId x, VarId gamma, VarId beta, double eps) {
        const Tensor& X = value(x);
        const Tensor& G = value(gamma);
        const Tensor& B = value(beta);
        require_rank(X, 2, "layer_norm input");
        const std::int64_t m = X.dim(0), d = X.dim(1);
        if (d < 2) throw degenerate_input_error("layer_norm: needs at least 2 features, got " +
                                                std::to_string(d));
        require_shape(G, {d}, "layer_norm gamma");
        require_shape(B, {d}, "layer_norm beta");

        Tensor Y({m, d});
        auto xhat = std::make_shared<Tensor>(Shape{m, d});
        auto inv = std::make_shared<Tensor>(Shape{m});
        for (std::int64_t i = 0; i < m; ++i) {
            const double* xr = X.row(i);
            double mean = 0.0;
            for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
            mean /= double(d);
            double var = 0.0;
            for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
            var /= double(d);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv)(i) = is;
            for (std::int64_t j = 0; j < d; ++j) {
                const double xh = (xr[j] - mean) * is;
                (*xhat)(i, j) = xh;
                Y(i, j) = G(j) * xh + B(j);
            }
        }
        VarId out = result(std::move(Y), {x, gamma, beta});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [x, gamma, beta, out, xhat, inv, m, d](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                const Tensor& G2 = t.value(gamma);
                if (t.requires_grad(beta)) {
                    Tensor& gb = t.grad_ref(beta);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < d; ++j) gb(j) += g(i, j);
                }
                if (t.requires_grad(gamma)) {
                    Tensor& gg = t.grad_ref(gamma);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < d; ++j) gg(j) += g(i, j) * (*xhat)(i, j);
                }
                if (t.requires_grad(x)) {
                    Tensor& gx = t.grad_ref(x);
                    for (std::int64_t i = 0; i < m; ++i) {
                        double mg = 0.0, mgx = 0.0;
                        for (std::int64_t j = 0; j < d; ++j) {
                            const double gj = G2(j) * g(i, j);
                            mg += gj;
                            mgx += gj * (*xhat)(i, j);
                        }
                        mg /= double(d);
                        mgx /= double(d);
                        const double is = (*inv)(i);
                        for (std::int64_t j = 0; j < d; ++j)
                            gx(i, j) += is * (G2(j) * g(i, j) - mg - (*xhat)(i, j) * mgx);
                    }
                }
            };
        }
        return out;
    }

    /// Row-wise softmax with max subtraction.
    VarId softmax(VarId x) {
        const Tensor& X = value(x);
        require_rank(X, 2, "softmax input");
        const std::int64_t m = X.dim(0), n = X.dim(1);
        if (n < 1) throw degenerate_input_error("softmax: empty row");
        Tensor Y({m, n});
        for (std::int64_t i = 0; i < m; ++i) {
            const double* xr = X.row(i);
            double mx = xr[0];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
            double sum = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                const double e = std::exp(xr[j] - mx);
                Y(i, j) = e;
                sum += e;
            }
            const double is = 1.0 / sum;
            for (std::int64_t j = 0; j < n; ++j) Y(i, j) *= is;
        }
        VarId out = result(std::move(Y), {x});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [x, out, m, n](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                const Tensor& Y2 = t.value(out);
                Tensor& gx = t.grad_ref(x);
                for (std::int64_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) dot += Y2(i, j) * g(i, j);
                    for (std::int64_t j = 0; j < n; ++j) gx(i, j) += Y2(i, j) * (g(i, j) - dot);
                }
            };
        }
        return out;
    }

    /// Column-wise concatenation of same-row-count matrices.
    VarId concat_cols(const std::vector<VarId>& parts) {
        if (parts.empty()) throw contract_error("concat_cols: no inputs");
        const std::int64_t m = value(parts[0]).dim(0);
        std::int64_t n = 0;
        for (VarId p : parts) {
            const Tensor& P = value(p);
            require_rank(P, 2, "concat_cols part");
            if (P.dim(0) != m) throw dimension_error("concat_cols: row count mismatch");
            n += P.dim(1);
        }
        Tensor C({m, n});
        std::int64_t off = 0;
        for (VarId p : parts) {
            const Tensor& P = value(p);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < P.dim(1); ++j) C(i, off + j) = P(i, j);
            off += P.dim(1);
        }
        VarId out = result(std::move(C), parts);
        if (nodes_[std::size_t(out)].requires_grad) {
            std::vector<VarId> ps = parts;
            nodes_[std::size_t(out)].back = [ps, out, m](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                std::int64_t off = 0;
                for (VarId p : ps) {
                    const std::int64_t w = t.value(p).dim(1);
                    if (t.requires_grad(p)) {
                        Tensor& gp = t.grad_ref(p);
                        for (std::int64_t i = 0; i < m; ++i)
                            for (std::int64_t j = 0; j < w; ++j) gp(i, j) += g(i, off + j);
                    }
                    off += w;
                }
            };
        }
        return out;
    }

    /// Gated interpolation (1 - z) * n + z * h, elementwise.
    VarId blend(VarId z, VarId n, VarId h) {
        const Tensor& Z = value(z);
        const Tensor& N = value(n);
        const Tensor& H = value(h);
        if (!Z.same_shape(N) || !Z.same_shape(H))
            throw dimension_error("blend: shape mismatch");
        Tensor Y(Z.shape());
        for (std::size_t i = 0; i < Y.numel(); ++i)
            Y.data()[i] = (1.0 - Z.data()[i]) * N.data()[i] + Z.data()[i] * H.data()[i];
        VarId out = result(std::move(Y), {z, n, h});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [z, n, h, out](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                const Tensor& Z2 = t.value(z);
                const Tensor& N2 = t.value(n);
                const Tensor& H2 = t.value(h);
                if (t.requires_grad(z)) {
                    Tensor& gz = t.grad_ref(z);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                        gz.data()[i] += g.data()[i] * (H2.data()[i] - N2.data()[i]);
                }
                if (t.requires_grad(n)) {
                    Tensor& gn = t.grad_ref(n);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                        gn.data()[i] += g.data()[i] * (1.0 - Z2.data()[i]);
                }
                if (t.requires_grad(h)) {
                    Tensor& gh = t.grad_ref(h);
                    for (std::size_t i = 0; i < g.numel(); ++i) gh.data()[i] += g.data()[i] * Z2.data()[i];
                }
            };
        }
        return out;
    }

    /// Mean over the last axis: [m,n] -> [m].
    VarId row_mean(VarId x) {
        const Tensor& X = value(x);
        require_rank(X, 2, "row_mean input");
        const std::int64_t m = X.dim(0), n = X.dim(1);
        if (n < 1) throw degenerate_input_error("row_mean: empty row");
        Tensor Y({m});
        for (std::int64_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < n; ++j) s += X(i, j);
            Y(i) = s / double(n);
        }
        VarId out = result(std::move(Y), {x});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [x, out, m, n](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                Tensor& gx = t.grad_ref(x);
                for (std::int64_t i = 0; i < m; ++i) {
                    const double gi = g(i) / double(n);
                    for (std::int64_t j = 0; j < n; ++j) gx(i, j) += gi;
                }
            };
        }
        return out;
    }

    /// Fixed-weight contraction to a scalar: sum(x * w), w a plain value of
    /// the same shape. The workhorse for masked pooling and test reductions.
    VarId weighted_sum(VarId x, Tensor w) {
        const Tensor& X = value(x);
        if (!X.same_shape(w))
            throw dimension_error("weighted_sum: weight shape " + shape_str(w.shape()) +
                                  " vs input " + shape_str(X.shape()));
        double s = 0.0;
        for (std::size_t i = 0; i < X.numel(); ++i) s += X.data()[i] * w.data()[i];
        auto wp = std::make_shared<Tensor>(std::move(w));
        VarId out = result(Tensor::scalar(s), {x});
        if (nodes_[std::size_t(out)].requires_grad) {
            nodes_[std::size_t(out)].back = [x, out, wp](Tape& t) {
                const double g = t.nodes_[std::size_t(out)].grad.data()[0];
                Tensor& gx = t.grad_ref(x);
                for (std::size_t i = 0; i < gx.numel(); ++i) gx.data()[i] += g * wp->data()[i];
            };
        }
        return out;
    }

    VarId sum(VarId x) {
        Tensor ones(value(x).shape());
        ones.fill(1.0);
        return weighted_sum(x, std::move(ones));
    }

    /// Multi-head single-query attention over a running history.
    ///
    /// q: [b, d] current projected queries. keys/vals: histories of projected
    /// [b, d] entries (plus an optional carried base block). Only the most
    /// recent `window` entries participate; older ones are evicted by
    /// offsetting the start index, so the op itself realizes the ring-buffer
    /// truncation. Per-head weights are written to *weights_out as [b, H, L]
    /// (oldest entry first) when requested.
    VarId attention(VarId q, const AttnHistory& keys, const AttnHistory& vals, int n_heads,
                    std::int64_t window, Tensor* weights_out = nullptr) {
        const Tensor& Q = value(q);
        require_rank(Q, 2, "attention query");
        const std::int64_t b = Q.dim(0), d = Q.dim(1);
        if (n_heads < 1 || d % n_heads != 0)
            throw dimension_error("attention: emb width " + std::to_string(d) +
                                  " not divisible by heads " + std::to_string(n_heads));
        if (window < 1) throw contract_error("attention: window must be positive");
        if (keys.total() != vals.total() || keys.base_len != vals.base_len)
            throw contract_error("attention: key/value history lengths differ");
        const std::int64_t total = keys.total();
        if (total < 1) throw contract_error("attention: empty history");

        const std::int64_t start = std::max<std::int64_t>(0, total - window);
        const std::int64_t L = total - start;
        const std::int64_t dk = d / n_heads;
        const double inv_sqrt_dk = 1.0 / std::sqrt(double(dk));

        // Row lookup for logical entry g of batch element e.
        auto entry_row = [this](const AttnHistory& h, std::int64_t g, std::int64_t e) -> const double* {
            if (g < h.base_len) return value(h.base).row(e * h.base_len + g);
            return value(h.steps[std::size_t(g - h.base_len)]).row(e);
        };

        for (std::int64_t g = start; g < total; ++g) {
            const Tensor& K = g < keys.base_len ? value(keys.base)
                                                : value(keys.steps[std::size_t(g - keys.base_len)]);
            const Tensor& V = g < vals.base_len ? value(vals.base)
                                                : value(vals.steps[std::size_t(g - vals.base_len)]);
            if (K.dim(1) != d || V.dim(1) != d)
                throw dimension_error("attention: history entry width mismatch");
        }

        Tensor Y({b, d});
        auto W = std::make_shared<Tensor>(Shape{b, std::int64_t(n_heads), L});
        std::vector<double> scores(static_cast<std::size_t>(L));
        for (std::int64_t e = 0; e < b; ++e) {
            const double* qr = Q.row(e);
            for (int h = 0; h < n_heads; ++h) {
                const std::int64_t hoff = std::int64_t(h) * dk;
                double mx = -1e300;
                for (std::int64_t i = 0; i < L; ++i) {
                    const double* kr = entry_row(keys, start + i, e) + hoff;
                    double s = 0.0;
                    for (std::int64_t c = 0; c < dk; ++c) s += qr[hoff + c] * kr[c];
                    s *= inv_sqrt_dk;
                    scores[std::size_t(i)] = s;
                    mx = std::max(mx, s);
                }
                double sum = 0.0;
                for (std::int64_t i = 0; i < L; ++i) {
                    const double ex = std::exp(scores[std::size_t(i)] - mx);
                    scores[std::size_t(i)] = ex;
                    sum += ex;
                }
                const double is = 1.0 / sum;
                double* yr = Y.row(e) + hoff;
                for (std::int64_t c = 0; c < dk; ++c) yr[c] = 0.0;
                for (std::int64_t i = 0; i < L; ++i) {
                    const double w = scores[std::size_t(i)] * is;
                    (*W)(e, h, i) = w;
                    const double* vr = entry_row(vals, start + i, e) + hoff;
                    for (std::int64_t c = 0; c < dk; ++c) yr[c] += w * vr[c];
                }
            }
        }
        if (weights_out) *weights_out = *W;

        std::vector<VarId> parents{q};
        if (keys.base != kNoVar && start < keys.base_len) parents.push_back(keys.base);
        if (vals.base != kNoVar && start < vals.base_len) parents.push_back(vals.base);
        for (std::int64_t g = std::max(start, keys.base_len); g < total; ++g) {
            parents.push_back(keys.steps[std::size_t(g - keys.base_len)]);
            parents.push_back(vals.steps[std::size_t(g - vals.base_len)]);
        }
        VarId out = result(std::move(Y), parents);
        if (nodes_[std::size_t(out)].requires_grad) {
            AttnHistory kh = keys, vh = vals;
            nodes_[std::size_t(out)].back = [q, kh, vh, out, W, b, d, n_heads, dk, start, total,
                                             inv_sqrt_dk](Tape& t) {
                const Tensor& g = t.nodes_[std::size_t(out)].grad;
                const std::int64_t L = total - start;
                auto entry_row = [&t](const AttnHistory& h, std::int64_t gi, std::int64_t e) -> const double* {
                    if (gi < h.base_len) return t.value(h.base).row(e * h.base_len + gi);
                    return t.value(h.steps[std::size_t(gi - h.base_len)]).row(e);
                };
                auto grad_row = [&t](const AttnHistory& h, std::int64_t gi, std::int64_t e) -> double* {
                    if (gi < h.base_len) {
                        if (!t.requires_grad(h.base)) return nullptr;
                        return t.grad_ref(h.base).row(e * h.base_len + gi);
                    }
                    const VarId sid = h.steps[std::size_t(gi - h.base_len)];
                    if (!t.requires_grad(sid)) return nullptr;
                    return t.grad_ref(sid).row(e);
                };
                const bool want_q = t.requires_grad(q);
                std::vector<double> dw(static_cast<std::size_t>(L));
                for (std::int64_t e = 0; e < b; ++e) {
                    const double* qr = t.value(q).row(e);
                    double* gq = want_q ? t.grad_ref(q).row(e) : nullptr;
                    for (int h = 0; h < n_heads; ++h) {
                        const std::int64_t hoff = std::int64_t(h) * dk;
                        const double* gy = g.row(e) + hoff;
                        double wdot = 0.0;
                        for (std::int64_t i = 0; i < L; ++i) {
                            const double* vr = entry_row(vh, start + i, e) + hoff;
                            double s = 0.0;
                            for (std::int64_t c = 0; c < dk; ++c) s += vr[c] * gy[c];
                            dw[std::size_t(i)] = s;
                            wdot += (*W)(e, h, i) * s;
                        }
                        for (std::int64_t i = 0; i < L; ++i) {
                            const double w = (*W)(e, h, i);
                            double* gv = grad_row(vh, start + i, e);
                            if (gv)
                                for (std::int64_t c = 0; c < dk; ++c) gv[hoff + c] += w * gy[c];
                            const double ds = w * (dw[std::size_t(i)] - wdot) * inv_sqrt_dk;
                            const double* kr = entry_row(kh, start + i, e) + hoff;
                            if (gq)
                                for (std::int64_t c = 0; c < dk; ++c) gq[hoff + c] += ds * kr[c];
                            double* gk = grad_row(kh, start + i, e);
                            if (gk)
                                for (std::int64_t c = 0; c < dk; ++c) gk[hoff + c] += ds * qr[hoff + c];
                        }
                    }
                }
            };
        }
        return out;
    }

    // --- backward ----------------------------------------------------------------

    /// Reverse sweep seeded from a scalar node. Runs each touched node's
    /// closure exactly once, newest first.
    void backward(VarId loss) {
        const Node& ln = nodes_[check(loss)];
        if (ln.value.numel() != 1)
            throw contract_error("backward: seed must be a scalar, got " + shape_str(ln.value.shape()));
        if (ran_backward_) throw contract_error("backward: tape already differentiated; rebuild it");
        ran_backward_ = true;
        grad_ref(loss).data()[0] = 1.0;
        for (std::int64_t i = loss; i >= 0; --i) {
            Node& n = nodes_[std::size_t(i)];
            if (n.grad.empty() || !n.back) continue;
            n.back(*this);
        }
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched by backward
        bool requires_grad = false;
        std::function<void(Tape&)> back;
    };

    std::size_t check(VarId id) const {
        if (id < 0 || std::size_t(id) >= nodes_.size()) throw contract_error("invalid tape var id");
        return std::size_t(id);
    }

    VarId push(Tensor value, bool wants_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = wants_grad;
        nodes_.push_back(std::move(n));
        return VarId(nodes_.size() - 1);
    }

    VarId result(Tensor value, const std::vector<VarId>& parents) {
        bool req = false;
        for (VarId p : parents) req = req || nodes_[check(p)].requires_grad;
        return push(std::move(value), req);
    }

    /// Gradient accumulator for a node; allocates zeros on first touch.
    Tensor& grad_ref(VarId id) {
        Node& n = nodes_[check(id)];
        if (n.grad.empty()) n.grad = Tensor(n.value.shape());
        return n.grad;
    }

    void accum(VarId id, const Tensor& g) {
        Tensor& dst = grad_ref(id);
        for (std::size_t i = 0; i < g.numel(); ++i) dst.data()[i] += g.data()[i];
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

}  // namespace grq
