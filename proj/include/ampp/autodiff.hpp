// Copyright 2025 the ampp authors
// Reverse-mode tape over dense matrices. One tape per forward pass;
// node creation order is the topological order used by backward().
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "ampp/common.hpp"
#include "ampp/matrix.hpp"

namespace ampp {

template <class Real>
class Tape {
  public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var input(Matrix<Real> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }
    Var constant(Matrix<Real> value) { return input(std::move(value), false); }

    const Matrix<Real> &val(Var v) const { return node(v).value; }

    // Valid after backward(); an untouched gradient reads as zeros.
    const Matrix<Real> &grad(Var v) const {
        const Node &n = node(v);
        if (n.grad.empty() && n.value.size() > 0) {
            zero_like_ = Matrix<Real>(n.value.rows(), n.value.cols());
            return zero_like_;
        }
        return n.grad;
    }

    bool wants_grad(Var v) const { return node(v).needs; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // ── elementwise & linear ─────────────────────────────────────────────

    Var add(Var a, Var b) {
        require(val(a).same_shape(val(b)), "Tape::add: shape mismatch");
        Matrix<Real> out = val(a);
        add_in_place(out, val(b));
        return push(std::move(out), needs(a) || needs(b), [this, a, b](int self) {
            acc(a, nodes_[self].grad);
            acc(b, nodes_[self].grad);
        });
    }

    Var scale(Var a, Real s) {
        Matrix<Real> out = val(a);
        for (index_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
        return push(std::move(out), needs(a), [this, a, s](int self) {
            if (!needs(a)) return;
            Matrix<Real> g = nodes_[self].grad;
            for (index_t i = 0; i < g.size(); ++i) g.data()[i] *= s;
            acc(a, g);
        });
    }

    Var hadamard(Var a, Var b) {
        require(val(a).same_shape(val(b)), "Tape::hadamard: shape mismatch");
        Matrix<Real> out = val(a);
        const Matrix<Real> &bv = val(b);
        for (index_t i = 0; i < out.size(); ++i) out.data()[i] *= bv.data()[i];
        return push(std::move(out), needs(a) || needs(b), [this, a, b](int self) {
            const Matrix<Real> &g = nodes_[self].grad;
            if (needs(a)) {
                Matrix<Real> da = g;
                const Matrix<Real> &bv = val(b);
                for (index_t i = 0; i < da.size(); ++i) da.data()[i] *= bv.data()[i];
                acc(a, da);
            }
            if (needs(b)) {
                Matrix<Real> db = g;
                const Matrix<Real> &av = val(a);
                for (index_t i = 0; i < db.size(); ++i) db.data()[i] *= av.data()[i];
                acc(b, db);
            }
        });
    }

    Var matmul(Var a, Var b) {
        Matrix<Real> out = ampp::matmul(val(a), val(b));
        return push(std::move(out), needs(a) || needs(b), [this, a, b](int self) {
            const Matrix<Real> &g = nodes_[self].grad;
            if (needs(a)) acc_with(a, [&](Matrix<Real> &dst) { matmul_nt_acc(dst, g, val(b)); });
            if (needs(b)) acc_with(b, [&](Matrix<Real> &dst) { matmul_tn_acc(dst, val(a), g); });
        });
    }

    // a * b^T
    Var matmul_nt(Var a, Var b) {
        Matrix<Real> out = ampp::matmul_nt(val(a), val(b));
        return push(std::move(out), needs(a) || needs(b), [this, a, b](int self) {
            const Matrix<Real> &g = nodes_[self].grad;
            if (needs(a)) acc_with(a, [&](Matrix<Real> &dst) { matmul_acc(dst, g, val(b)); });
            if (needs(b)) acc_with(b, [&](Matrix<Real> &dst) { matmul_tn_acc(dst, g, val(a)); });
        });
    }

    // row is [1 x n], broadcast over the rows of a
    Var add_row(Var a, Var row) {
        const Matrix<Real> &av = val(a);
        const Matrix<Real> &rv = val(row);
        require(rv.rows() == 1 && rv.cols() == av.cols(), "Tape::add_row: bias must be [1 x cols]");
        Matrix<Real> out = av;
        for (index_t i = 0; i < out.rows(); ++i) {
            Real *oi = out.row(i);
            for (index_t j = 0; j < out.cols(); ++j) oi[j] += rv(0, j);
        }
        return push(std::move(out), needs(a) || needs(row), [this, a, row](int self) {
            const Matrix<Real> &g = nodes_[self].grad;
            acc(a, g);
            if (needs(row)) {
                Matrix<Real> dr(1, g.cols());
                for (index_t i = 0; i < g.rows(); ++i)
                    for (index_t j = 0; j < g.cols(); ++j) dr(0, j) += g(i, j);
                acc(row, dr);
            }
        });
    }

    // ── shape ops ────────────────────────────────────────────────────────

    Var slice_cols(Var a, index_t c0, index_t c1) {
        const Matrix<Real> &av = val(a);
        require(0 <= c0 && c0 < c1 && c1 <= av.cols(), "Tape::slice_cols: bad range");
        Matrix<Real> out(av.rows(), c1 - c0);
        for (index_t i = 0; i < av.rows(); ++i)
            for (index_t j = c0; j < c1; ++j) out(i, j - c0) = av(i, j);
        return push(std::move(out), needs(a), [this, a, c0](int self) {
            if (!needs(a)) return;
            const Matrix<Real> &g = nodes_[self].grad;
            acc_with(a, [&](Matrix<Real> &dst) {
                for (index_t i = 0; i < g.rows(); ++i)
                    for (index_t j = 0; j < g.cols(); ++j) dst(i, c0 + j) += g(i, j);
            });
        });
    }

    Var concat_cols(const std::vector<Var> &parts) {
        require(!parts.empty(), "Tape::concat_cols: empty");
        index_t rows = val(parts[0]).rows(), cols = 0;
        bool any = false;
        for (Var p : parts) {
            require(val(p).rows() == rows, "Tape::concat_cols: row mismatch");
            cols += val(p).cols();
            any = any || needs(p);
        }
        Matrix<Real> out(rows, cols);
        index_t off = 0;
        for (Var p : parts) {
            const Matrix<Real> &pv = val(p);
            for (index_t i = 0; i < rows; ++i)
                for (index_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
            off += pv.cols();
        }
        return push(std::move(out), any, [this, parts](int self) {
            const Matrix<Real> &g = nodes_[self].grad;
            index_t off = 0;
            for (Var p : parts) {
                const index_t pc = val(p).cols();
                if (needs(p)) {
                    Matrix<Real> dp(g.rows(), pc);
                    for (index_t i = 0; i < g.rows(); ++i)
                        for (index_t j = 0; j < pc; ++j) dp(i, j) = g(i, off + j);
                    acc(p, dp);
                }
                off += pc;
            }
        });
    }

    // Duplicate indices are allowed; backward accumulates into the source row.
    Var gather_rows(Var a, std::vector<index_t> idx) {
        const Matrix<Real> &av = val(a);
        for (index_t i : idx) require(0 <= i && i < av.rows(), "Tape::gather_rows: index out of range");
        Matrix<Real> out(static_cast<index_t>(idx.size()), av.cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (index_t j = 0; j < av.cols(); ++j) out(static_cast<index_t>(r), j) = av(idx[r], j);
        return push(std::move(out), needs(a), [this, a, idx = std::move(idx)](int self) {
            if (!needs(a)) return;
            const Matrix<Real> &g = nodes_[self].grad;
            acc_with(a, [&](Matrix<Real> &dst) {
                for (std::size_t r = 0; r < idx.size(); ++r)
                    for (index_t j = 0; j < g.cols(); ++j) dst(idx[r], j) += g(static_cast<index_t>(r), j);
            });
        });
    }

    Var concat_rows(Var a, Var b) {
        const Matrix<Real> &av = val(a);
        const Matrix<Real> &bv = val(b);
        require(av.cols() == bv.cols(), "Tape::concat_rows: col mismatch");
        Matrix<Real> out(av.rows() + bv.rows(), av.cols());
        for (index_t i = 0; i < av.rows(); ++i)
            for (index_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j);
        for (index_t i = 0; i < bv.rows(); ++i)
            for (index_t j = 0; j < bv.cols(); ++j) out(av.rows() + i, j) = bv(i, j);
        return push(std::move(out), needs(a) || needs(b), [this, a, b](int self) {
            const Matrix<Real> &g = nodes_[self].grad;
            const index_t ar = val(a).rows();
            if (needs(a)) {
                Matrix<Real> da(ar, g.cols());
                for (index_t i = 0; i < ar; ++i)
                    for (index_t j = 0; j < g.cols(); ++j) da(i, j) = g(i, j);
                acc(a, da);
            }
            if (needs(b)) {
                Matrix<Real> db(g.rows() - ar, g.cols());
                for (index_t i = 0; i < db.rows(); ++i)
                    for (index_t j = 0; j < g.cols(); ++j) db(i, j) = g(ar + i, j);
                acc(b, db);
            }
        });
    }

    // [1 x d] -> [n x d]; backward sums over rows.
    Var repeat_row(Var rowvar, index_t n) {
        const Matrix<Real> &rv = val(rowvar);
        require(rv.rows() == 1, "Tape::repeat_row: source must be a single row");
        Matrix<Real> out(n, rv.cols());
        for (index_t i = 0; i < n; ++i)
            for (index_t j = 0; j < rv.cols(); ++j) out(i, j) = rv(0, j);
        return push(std::move(out), needs(rowvar), [this, rowvar](int self) {
            if (!needs(rowvar)) return;
            const Matrix<Real> &g = nodes_[self].grad;
            Matrix<Real> dr(1, g.cols());
            for (index_t i = 0; i < g.rows(); ++i)
                for (index_t j = 0; j < g.cols(); ++j) dr(0, j) += g(i, j);
            acc(rowvar, dr);
        });
    }

    // ── nonlinearities ───────────────────────────────────────────────────

    Var relu(Var a) {
        Matrix<Real> out = val(a);
        for (index_t i = 0; i < out.size(); ++i)
            if (out.data()[i] < Real(0)) out.data()[i] = Real(0);
        return push(std::move(out), needs(a), [this, a](int self) {
            if (!needs(a)) return;
            Matrix<Real> da = nodes_[self].grad;
            const Matrix<Real> &x = val(a);
            for (index_t i = 0; i < da.size(); ++i)
                if (x.data()[i] <= Real(0)) da.data()[i] = Real(0);
            acc(a, da);
        });
    }

    // Exact GELU: 0.5 x (1 + erf(x / sqrt(2)))
    Var gelu(Var a) {
        const Matrix<Real> &x = val(a);
        Matrix<Real> out(x.rows(), x.cols());
        for (index_t i = 0; i < x.size(); ++i) {
            const Real v = x.data()[i];
            out.data()[i] = Real(0.5) * v * (Real(1) + std::erf(v * Real(M_SQRT1_2)));
        }
        return push(std::move(out), needs(a), [this, a](int self) {
            if (!needs(a)) return;
            Matrix<Real> da = nodes_[self].grad;
            const Matrix<Real> &x = val(a);
            constexpr Real inv_sqrt_2pi = Real(0.3989422804014326779);
            for (index_t i = 0; i < da.size(); ++i) {
                const Real v = x.data()[i];
                const Real cdf = Real(0.5) * (Real(1) + std::erf(v * Real(M_SQRT1_2)));
                const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * v * v);
                da.data()[i] *= cdf + v * pdf;
            }
            acc(a, da);
        });
    }

    // Swish: x * sigmoid(x)
    Var swish(Var a) {
        const Matrix<Real> &x = val(a);
        Matrix<Real> out(x.rows(), x.cols());
        for (index_t i = 0; i < x.size(); ++i) {
            const Real v = x.data()[i];
            out.data()[i] = v * sigmoid(v);
        }
        return push(std::move(out), needs(a), [this, a](int self) {
            if (!needs(a)) return;
            Matrix<Real> da = nodes_[self].grad;
            const Matrix<Real> &x = val(a);
            for (index_t i = 0; i < da.size(); ++i) {
                const Real s = sigmoid(x.data()[i]);
                da.data()[i] *= s * (Real(1) + x.data()[i] * (Real(1) - s));
            }
            acc(a, da);
        });
    }

    Var softmax_rows(Var a) {
        const Matrix<Real> &x = val(a);
        Matrix<Real> out(x.rows(), x.cols());
        for (index_t i = 0; i < x.rows(); ++i) {
            const Real *xi = x.row(i);
            Real *oi = out.row(i);
            Real m = xi[0];
            for (index_t j = 1; j < x.cols(); ++j) m = std::max(m, xi[j]);
            Real sum = Real(0);
            for (index_t j = 0; j < x.cols(); ++j) {
                oi[j] = std::exp(xi[j] - m);
                sum += oi[j];
            }
            const Real inv = Real(1) / sum;
            for (index_t j = 0; j < x.cols(); ++j) oi[j] *= inv;
        }
        return push(std::move(out), needs(a), [this, a](int self) {
            if (!needs(a)) return;
            const Matrix<Real> &p = nodes_[self].value;
            const Matrix<Real> &g = nodes_[self].grad;
            Matrix<Real> da(p.rows(), p.cols());
            for (index_t i = 0; i < p.rows(); ++i) {
                Real dot = Real(0);
                for (index_t j = 0; j < p.cols(); ++j) dot += p(i, j) * g(i, j);
                for (index_t j = 0; j < p.cols(); ++j) da(i, j) = p(i, j) * (g(i, j) - dot);
            }
            acc(a, da);
        });
    }

    // Per-row normalization then affine; gain/shift are [1 x d].
    Var layer_norm(Var x, Var gain, Var shift, Real eps) {
        require(val(gain).rows() == 1 && val(gain).cols() == val(x).cols(), "Tape::layer_norm: gain shape");
        require(val(shift).rows() == 1 && val(shift).cols() == val(x).cols(), "Tape::layer_norm: shift shape");
        return layer_norm_impl(x, gain, shift, eps);
    }

    // Normalization only (scale 1, shift 0); no learnable parameters.
    Var layer_norm_plain(Var x, Real eps) { return layer_norm_impl(x, Var{}, Var{}, eps); }

    // Per-head rotation of (even, odd) channel pairs. cosm/sinm are
    // [L x d_head/2]; the same angles apply to every head of a token.
    Var rotate_pairs(Var x, Matrix<Real> cosm, Matrix<Real> sinm, index_t heads) {
        const Matrix<Real> &xv = val(x);
        const index_t L = xv.rows(), d = xv.cols();
        require(heads >= 1 && d % heads == 0, "Tape::rotate_pairs: heads must divide width");
        const index_t dh = d / heads;
        require(dh % 2 == 0, "Tape::rotate_pairs: head width must be even");
        require(cosm.rows() == L && cosm.cols() == dh / 2, "Tape::rotate_pairs: cos table shape");
        require(sinm.rows() == L && sinm.cols() == dh / 2, "Tape::rotate_pairs: sin table shape");
        Matrix<Real> out(L, d);
        for (index_t i = 0; i < L; ++i) {
            const Real *xi = xv.row(i);
            Real *oi = out.row(i);
            for (index_t h = 0; h < heads; ++h) {
                const index_t base = h * dh;
                for (index_t j = 0; j < dh / 2; ++j) {
                    const Real c = cosm(i, j), s = sinm(i, j);
                    const Real x0 = xi[base + 2 * j], x1 = xi[base + 2 * j + 1];
                    oi[base + 2 * j] = c * x0 - s * x1;
                    oi[base + 2 * j + 1] = s * x0 + c * x1;
                }
            }
        }
        return push(std::move(out), needs(x),
                    [this, x, heads, dh, cosm = std::move(cosm), sinm = std::move(sinm)](int self) {
                        if (!needs(x)) return;
                        const Matrix<Real> &g = nodes_[self].grad;
                        Matrix<Real> dx(g.rows(), g.cols());
                        for (index_t i = 0; i < g.rows(); ++i) {
                            const Real *gi = g.row(i);
                            Real *di = dx.row(i);
                            for (index_t h = 0; h < heads; ++h) {
                                const index_t base = h * dh;
                                for (index_t j = 0; j < dh / 2; ++j) {
                                    const Real c = cosm(i, j), s = sinm(i, j);
                                    const Real g0 = gi[base + 2 * j], g1 = gi[base + 2 * j + 1];
                                    di[base + 2 * j] = c * g0 + s * g1;
                                    di[base + 2 * j + 1] = -s * g0 + c * g1;
                                }
                            }
                        }
                        acc(x, dx);
                    });
    }

    // ── scalar outputs ───────────────────────────────────────────────────

    // Mean squared error over the listed rows only; other rows contribute
    // exactly zero (and receive exactly zero gradient).
    Var masked_mse(Var pred, Matrix<Real> target, std::vector<index_t> rows) {
        const Matrix<Real> &p = val(pred);
        require(p.same_shape(target), "Tape::masked_mse: pred/target shape mismatch");
        require(!rows.empty(), "Tape::masked_mse: empty masked set");
        for (index_t r : rows) require(0 <= r && r < p.rows(), "Tape::masked_mse: row out of range");
        const Real denom = static_cast<Real>(rows.size()) * static_cast<Real>(p.cols());
        Real loss = Real(0);
        for (index_t r : rows) {
            const Real *pi = p.row(r);
            const Real *ti = target.row(r);
            for (index_t j = 0; j < p.cols(); ++j) {
                const Real d = pi[j] - ti[j];
                loss += d * d;
            }
        }
        Matrix<Real> out(1, 1);
        out(0, 0) = loss / denom;
        return push(std::move(out), needs(pred),
                    [this, pred, denom, target = std::move(target), rows = std::move(rows)](int self) {
                        if (!needs(pred)) return;
                        const Real g = nodes_[self].grad(0, 0);
                        const Matrix<Real> &p = val(pred);
                        acc_with(pred, [&](Matrix<Real> &dst) {
                            for (index_t r : rows) {
                                const Real *pi = p.row(r);
                                const Real *ti = target.row(r);
                                Real *di = dst.row(r);
                                for (index_t j = 0; j < p.cols(); ++j)
                                    di[j] += g * Real(2) * (pi[j] - ti[j]) / denom;
                            }
                        });
                    });
    }

    // Mean over rows of -log softmax(logits)[label].
    Var softmax_cross_entropy(Var logits, std::vector<index_t> labels) {
        const Matrix<Real> &z = val(logits);
        require(static_cast<index_t>(labels.size()) == z.rows(), "Tape::softmax_cross_entropy: label count");
        for (index_t y : labels) require(0 <= y && y < z.cols(), "Tape::softmax_cross_entropy: label range");
        Matrix<Real> probs(z.rows(), z.cols());
        Real loss = Real(0);
        for (index_t i = 0; i < z.rows(); ++i) {
            const Real *zi = z.row(i);
            Real *pi = probs.row(i);
            Real m = zi[0];
            for (index_t j = 1; j < z.cols(); ++j) m = std::max(m, zi[j]);
            Real sum = Real(0);
            for (index_t j = 0; j < z.cols(); ++j) {
                pi[j] = std::exp(zi[j] - m);
                sum += pi[j];
            }
            const Real inv = Real(1) / sum;
            for (index_t j = 0; j < z.cols(); ++j) pi[j] *= inv;
            loss += std::log(sum) + m - zi[labels[static_cast<std::size_t>(i)]];
        }
        Matrix<Real> out(1, 1);
        out(0, 0) = loss / static_cast<Real>(z.rows());
        return push(std::move(out), needs(logits),
                    [this, logits, probs = std::move(probs), labels = std::move(labels)](int self) {
                        if (!needs(logits)) return;
                        const Real g = nodes_[self].grad(0, 0) / static_cast<Real>(probs.rows());
                        Matrix<Real> dz = probs;
                        for (index_t i = 0; i < dz.rows(); ++i) {
                            dz(i, labels[static_cast<std::size_t>(i)]) -= Real(1);
                            for (index_t j = 0; j < dz.cols(); ++j) dz(i, j) *= g;
                        }
                        acc(logits, dz);
                    });
    }

    // Mean over all entries of the stable binary cross-entropy with logits.
    Var bce_with_logits(Var logits, Matrix<Real> targets) {
        const Matrix<Real> &z = val(logits);
        require(z.same_shape(targets), "Tape::bce_with_logits: shape mismatch");
        Real loss = Real(0);
        for (index_t i = 0; i < z.size(); ++i) {
            const Real zi = z.data()[i], ti = targets.data()[i];
            loss += std::max(zi, Real(0)) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
        }
        Matrix<Real> out(1, 1);
        out(0, 0) = loss / static_cast<Real>(z.size());
        return push(std::move(out), needs(logits), [this, logits, targets = std::move(targets)](int self) {
            if (!needs(logits)) return;
            const Matrix<Real> &z = val(logits);
            const Real g = nodes_[self].grad(0, 0) / static_cast<Real>(z.size());
            Matrix<Real> dz(z.rows(), z.cols());
            for (index_t i = 0; i < z.size(); ++i)
                dz.data()[i] = g * (sigmoid(z.data()[i]) - targets.data()[i]);
            acc(logits, dz);
        });
    }

    // Scalar sum(w .* x); the standard probe for finite-difference checks.
    Var weighted_sum(Var x, Matrix<Real> weights) {
        const Matrix<Real> &xv = val(x);
        require(xv.same_shape(weights), "Tape::weighted_sum: shape mismatch");
        Real s = Real(0);
        for (index_t i = 0; i < xv.size(); ++i) s += xv.data()[i] * weights.data()[i];
        Matrix<Real> out(1, 1);
        out(0, 0) = s;
        return push(std::move(out), needs(x), [this, x, weights = std::move(weights)](int self) {
            if (!needs(x)) return;
            const Real g = nodes_[self].grad(0, 0);
            Matrix<Real> dx = weights;
            for (index_t i = 0; i < dx.size(); ++i) dx.data()[i] *= g;
            acc(x, dx);
        });
    }

    void backward(Var out) {
        const Matrix<Real> &v = val(out);
        require(v.rows() == 1 && v.cols() == 1, "Tape::backward: output must be scalar");
        Node &n = nodes_[static_cast<std::size_t>(out.id)];
        n.grad = Matrix<Real>(1, 1);
        n.grad(0, 0) = Real(1);
        for (int i = out.id; i >= 0; --i) {
            Node &cur = nodes_[static_cast<std::size_t>(i)];
            if (cur.back && cur.needs && !cur.grad.empty()) cur.back(i);
        }
    }

  private:
    struct Node {
        Matrix<Real> value;
        Matrix<Real> grad;
        std::function<void(int)> back;
        bool needs = false;
    };

    static Real sigmoid(Real v) { return Real(1) / (Real(1) + std::exp(-v)); }

    const Node &node(Var v) const {
        require(v.valid() && static_cast<std::size_t>(v.id) < nodes_.size(), "Tape: invalid var");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    bool needs(Var v) const { return v.valid() && nodes_[static_cast<std::size_t>(v.id)].needs; }

    Var push(Matrix<Real> value, bool needs_grad, std::function<void(int)> back) {
        Node n;
        n.value = std::move(value);
        n.back = std::move(back);
        n.needs = needs_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void acc(Var v, const Matrix<Real> &g) {
        if (!needs(v)) return;
        Node &n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.empty()) n.grad = Matrix<Real>(n.value.rows(), n.value.cols());
        add_in_place(n.grad, g);
    }

    // Accumulate via a writer to avoid a temporary for large gradients.
    template <class Fn>
    void acc_with(Var v, Fn &&writer) {
        if (!needs(v)) return;
        Node &n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.empty()) n.grad = Matrix<Real>(n.value.rows(), n.value.cols());
        writer(n.grad);
    }

    Var layer_norm_impl(Var x, Var gain, Var shift, Real eps) {
        const Matrix<Real> &xv = val(x);
        const index_t L = xv.rows(), d = xv.cols();
        require(d >= 1, "Tape::layer_norm: empty rows");
        Matrix<Real> xhat(L, d);
        Matrix<Real> inv_std(L, 1);
        Matrix<Real> out(L, d);
        const bool affine = gain.valid();
        for (index_t i = 0; i < L; ++i) {
            const Real *xi = xv.row(i);
            Real mean = Real(0);
            for (index_t j = 0; j < d; ++j) mean += xi[j];
            mean /= static_cast<Real>(d);
            Real var = Real(0);
            for (index_t j = 0; j < d; ++j) {
                const Real c = xi[j] - mean;
                var += c * c;
            }
            var /= static_cast<Real>(d);
            const Real istd = Real(1) / std::sqrt(var + eps);
            inv_std(i, 0) = istd;
            for (index_t j = 0; j < d; ++j) {
                xhat(i, j) = (xi[j] - mean) * istd;
                out(i, j) = affine ? xhat(i, j) * val(gain)(0, j) + val(shift)(0, j) : xhat(i, j);
            }
        }
        const bool ng = needs(x) || needs(gain) || needs(shift);
        return push(std::move(out), ng,
                    [this, x, gain, shift, affine, xhat = std::move(xhat), inv_std = std::move(inv_std)](int self) {
                        const Matrix<Real> &g = nodes_[self].grad;
                        const index_t L = g.rows(), d = g.cols();
                        if (affine) {
                            if (needs(gain)) {
                                Matrix<Real> dg(1, d);
                                for (index_t i = 0; i < L; ++i)
                                    for (index_t j = 0; j < d; ++j) dg(0, j) += g(i, j) * xhat(i, j);
                                acc(gain, dg);
                            }
                            if (needs(shift)) {
                                Matrix<Real> db(1, d);
                                for (index_t i = 0; i < L; ++i)
                                    for (index_t j = 0; j < d; ++j) db(0, j) += g(i, j);
                                acc(shift, db);
                            }
                        }
                        if (!needs(x)) return;
                        Matrix<Real> dx(L, d);
                        for (index_t i = 0; i < L; ++i) {
                            Real mean_dxhat = Real(0), mean_dxhat_xhat = Real(0);
                            for (index_t j = 0; j < d; ++j) {
                                const Real dxh = affine ? g(i, j) * val(gain)(0, j) : g(i, j);
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xhat(i, j);
                            }
                            mean_dxhat /= static_cast<Real>(d);
                            mean_dxhat_xhat /= static_cast<Real>(d);
                            for (index_t j = 0; j < d; ++j) {
                                const Real dxh = affine ? g(i, j) * val(gain)(0, j) : g(i, j);
                                dx(i, j) = (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat) * inv_std(i, 0);
                            }
                        }
                        acc(x, dx);
                    });
    }

    std::vector<Node> nodes_;
    mutable Matrix<Real> zero_like_;
};

} // namespace ampp
