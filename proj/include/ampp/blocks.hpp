// Copyright 2025 the ampp authors
// Macaron transformer block: half-step MLP FFN, multi-head attention
// with optional rotary position handling, half-step SwiGLU FFN. All math
// runs through the tape so forward values and gradients share one path;
// the plain functions below wrap a gradient-free tape for callers that
// only need values.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ampp/autodiff.hpp"
#include "ampp/common.hpp"
#include "ampp/matrix.hpp"
#include "ampp/rng.hpp"

namespace ampp {

inline constexpr double kLnEps = 1e-6;

// Gated-FFN width: 8d/3 rounded up to a multiple of 8.
inline index_t swiglu_hidden(index_t d) {
    const index_t raw = (8 * d + 2) / 3; // ceil(8d/3)
    return (raw + 7) / 8 * 8;
}

enum class TensorRole { kWeight, kBias, kLnScale, kLnShift, kToken };

template <class Real>
struct LnParams {
    Matrix<Real> scale; // [1 x d]
    Matrix<Real> shift; // [1 x d]
};

template <class Real>
struct MlpParams {
    Matrix<Real> w1, b1; // [d x 4d], [1 x 4d]
    Matrix<Real> w2, b2; // [4d x d], [1 x d]
};

template <class Real>
struct AttnParams {
    Matrix<Real> wq, bq, wk, bk, wv, bv, wo, bo; // [d x d] weights, [1 x d] biases
};

template <class Real>
struct SwigluParams {
    Matrix<Real> w, v; // [d x h] each, no bias
    Matrix<Real> o;    // [h x d]
    Matrix<Real> bo;   // [1 x d]
};

template <class Real>
struct BlockParams {
    index_t d = 0;
    index_t heads = 1;
    bool rope_enabled = false;
    // true: pre-LN on the SwiGLU input plus a parameter-free output
    // normalization; false: ln3 is the learnable output LN and the SwiGLU
    // branch reads its input unnormalized.
    bool swiglu_branch_norm = true;
    LnParams<Real> ln1, ln2, ln3;
    MlpParams<Real> mlp;
    AttnParams<Real> attn;
    SwigluParams<Real> swiglu;
};

// Canonical tensor order for initialization, optimizer state, counting,
// and checkpoints. fn(name, matrix, role).
template <class Params, class Fn>
void for_each_block_tensor(Params &p, Fn &&fn) {
    fn("ln1.scale", p.ln1.scale, TensorRole::kLnScale);
    fn("ln1.shift", p.ln1.shift, TensorRole::kLnShift);
    fn("ln2.scale", p.ln2.scale, TensorRole::kLnScale);
    fn("ln2.shift", p.ln2.shift, TensorRole::kLnShift);
    fn("ln3.scale", p.ln3.scale, TensorRole::kLnScale);
    fn("ln3.shift", p.ln3.shift, TensorRole::kLnShift);
    fn("mlp.w1", p.mlp.w1, TensorRole::kWeight);
    fn("mlp.b1", p.mlp.b1, TensorRole::kBias);
    fn("mlp.w2", p.mlp.w2, TensorRole::kWeight);
    fn("mlp.b2", p.mlp.b2, TensorRole::kBias);
    fn("attn.wq", p.attn.wq, TensorRole::kWeight);
    fn("attn.bq", p.attn.bq, TensorRole::kBias);
    fn("attn.wk", p.attn.wk, TensorRole::kWeight);
    fn("attn.bk", p.attn.bk, TensorRole::kBias);
    fn("attn.wv", p.attn.wv, TensorRole::kWeight);
    fn("attn.bv", p.attn.bv, TensorRole::kBias);
    fn("attn.wo", p.attn.wo, TensorRole::kWeight);
    fn("attn.bo", p.attn.bo, TensorRole::kBias);
    fn("swiglu.w", p.swiglu.w, TensorRole::kWeight);
    fn("swiglu.v", p.swiglu.v, TensorRole::kWeight);
    fn("swiglu.o", p.swiglu.o, TensorRole::kWeight);
    fn("swiglu.bo", p.swiglu.bo, TensorRole::kBias);
}

template <class Real>
void shape_block(BlockParams<Real> &b, index_t d, index_t heads) {
    require(d >= 1 && heads >= 1 && d % heads == 0, "shape_block: heads must divide width");
    const index_t h = swiglu_hidden(d);
    b.d = d;
    b.heads = heads;
    b.ln1 = {Matrix<Real>(1, d), Matrix<Real>(1, d)};
    b.ln2 = {Matrix<Real>(1, d), Matrix<Real>(1, d)};
    b.ln3 = {Matrix<Real>(1, d), Matrix<Real>(1, d)};
    b.mlp = {Matrix<Real>(d, 4 * d), Matrix<Real>(1, 4 * d), Matrix<Real>(4 * d, d), Matrix<Real>(1, d)};
    b.attn = {Matrix<Real>(d, d), Matrix<Real>(1, d), Matrix<Real>(d, d), Matrix<Real>(1, d),
              Matrix<Real>(d, d), Matrix<Real>(1, d), Matrix<Real>(d, d), Matrix<Real>(1, d)};
    b.swiglu = {Matrix<Real>(d, h), Matrix<Real>(d, h), Matrix<Real>(h, d), Matrix<Real>(1, d)};
}

template <class Real>
void init_tensor(Matrix<Real> &m, TensorRole role, Rng &rng, double std_dev = 0.02) {
    switch (role) {
        case TensorRole::kWeight:
            for (index_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.truncated_normal(std_dev));
            break;
        case TensorRole::kToken:
            for (index_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.normal() * std_dev);
            break;
        case TensorRole::kLnScale:
            for (index_t i = 0; i < m.size(); ++i) m.data()[i] = Real(1);
            break;
        case TensorRole::kBias:
        case TensorRole::kLnShift:
            for (index_t i = 0; i < m.size(); ++i) m.data()[i] = Real(0);
            break;
    }
}

template <class Real>
BlockParams<Real> init_block(index_t d, index_t heads, Rng &rng, bool rope_enabled = false,
                             bool swiglu_branch_norm = true) {
    BlockParams<Real> b;
    shape_block(b, d, heads);
    b.rope_enabled = rope_enabled;
    b.swiglu_branch_norm = swiglu_branch_norm;
    for_each_block_tensor(b, [&](const char *, Matrix<Real> &m, TensorRole role) { init_tensor(m, role, rng); });
    return b;
}

// ─── rotary tables ───────────────────────────────────────────────────────

template <class Real>
struct RopeTable {
    Matrix<Real> cos_t, sin_t; // [max_position x d_head/2]
    double base = 10000.0;

    // angle(m, j) = m * base^(-2j / d_head)
    static RopeTable build(index_t max_position, index_t d_head, double base = 10000.0) {
        require(d_head >= 2 && d_head % 2 == 0, "RopeTable: head width must be even");
        require(max_position >= 1, "RopeTable: empty position range");
        RopeTable t;
        t.base = base;
        t.cos_t = Matrix<Real>(max_position, d_head / 2);
        t.sin_t = Matrix<Real>(max_position, d_head / 2);
        for (index_t m = 0; m < max_position; ++m)
            for (index_t j = 0; j < d_head / 2; ++j) {
                const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d_head));
                const double ang = static_cast<double>(m) * theta;
                t.cos_t(m, j) = static_cast<Real>(std::cos(ang));
                t.sin_t(m, j) = static_cast<Real>(std::sin(ang));
            }
        return t;
    }

    index_t max_position() const { return cos_t.rows(); }
    index_t half_width() const { return cos_t.cols(); }
};

// Per-sequence rotation angles: row i holds the angles of positions[i].
template <class Real>
struct RopeAngles {
    Matrix<Real> cos_g, sin_g; // [L x d_head/2]
};

template <class Real>
RopeAngles<Real> gather_rope(const RopeTable<Real> &table, const std::vector<index_t> &positions) {
    RopeAngles<Real> out;
    out.cos_g = Matrix<Real>(static_cast<index_t>(positions.size()), table.half_width());
    out.sin_g = Matrix<Real>(static_cast<index_t>(positions.size()), table.half_width());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const index_t m = positions[i];
        require(0 <= m && m < table.max_position(), "gather_rope: position outside table");
        for (index_t j = 0; j < table.half_width(); ++j) {
            out.cos_g(static_cast<index_t>(i), j) = table.cos_t(m, j);
            out.sin_g(static_cast<index_t>(i), j) = table.sin_t(m, j);
        }
    }
    return out;
}

// ─── tape graphs ─────────────────────────────────────────────────────────

template <class Real>
struct LnVars {
    typename Tape<Real>::Var scale, shift;
};
template <class Real>
struct MlpVars {
    typename Tape<Real>::Var w1, b1, w2, b2;
};
template <class Real>
struct AttnVars {
    typename Tape<Real>::Var wq, bq, wk, bk, wv, bv, wo, bo;
};
template <class Real>
struct SwigluVars {
    typename Tape<Real>::Var w, v, o, bo;
};

template <class Real>
struct BlockVars {
    index_t d = 0;
    index_t heads = 1;
    bool rope_enabled = false;
    bool swiglu_branch_norm = true;
    LnVars<Real> ln1, ln2, ln3;
    MlpVars<Real> mlp;
    AttnVars<Real> attn;
    SwigluVars<Real> swiglu;
};

template <class Real>
BlockVars<Real> register_block(Tape<Real> &tp, const BlockParams<Real> &b, bool requires_grad) {
    BlockVars<Real> v;
    v.d = b.d;
    v.heads = b.heads;
    v.rope_enabled = b.rope_enabled;
    v.swiglu_branch_norm = b.swiglu_branch_norm;
    std::vector<typename Tape<Real>::Var *> slots = {
        &v.ln1.scale, &v.ln1.shift, &v.ln2.scale, &v.ln2.shift, &v.ln3.scale, &v.ln3.shift,
        &v.mlp.w1,    &v.mlp.b1,    &v.mlp.w2,    &v.mlp.b2,    &v.attn.wq,   &v.attn.bq,
        &v.attn.wk,   &v.attn.bk,   &v.attn.wv,   &v.attn.bv,   &v.attn.wo,   &v.attn.bo,
        &v.swiglu.w,  &v.swiglu.v,  &v.swiglu.o,  &v.swiglu.bo};
    std::size_t k = 0;
    for_each_block_tensor(b, [&](const char *, const Matrix<Real> &m, TensorRole) {
        *slots[k++] = tp.input(m, requires_grad);
    });
    return v;
}

template <class Real>
typename Tape<Real>::Var ln_graph(Tape<Real> &tp, typename Tape<Real>::Var x, const LnVars<Real> &ln) {
    return tp.layer_norm(x, ln.scale, ln.shift, static_cast<Real>(kLnEps));
}

template <class Real>
typename Tape<Real>::Var mlp_graph(Tape<Real> &tp, typename Tape<Real>::Var x, const MlpVars<Real> &m) {
    auto h = tp.gelu(tp.add_row(tp.matmul(x, m.w1), m.b1));
    return tp.add_row(tp.matmul(h, m.w2), m.b2);
}

// (Swish(xW) .* xV) O + bO; no bias on W or V.
template <class Real>
typename Tape<Real>::Var swiglu_graph(Tape<Real> &tp, typename Tape<Real>::Var x, const SwigluVars<Real> &s) {
    auto gate = tp.swish(tp.matmul(x, s.w));
    auto lin = tp.matmul(x, s.v);
    return tp.add_row(tp.matmul(tp.hadamard(gate, lin), s.o), s.bo);
}

// Scaled dot-product attention over all tokens (bidirectional, no mask);
// q and k rotate by position when angles are supplied.
template <class Real>
typename Tape<Real>::Var mha_graph(Tape<Real> &tp, typename Tape<Real>::Var x, const AttnVars<Real> &a,
                                   index_t heads, const RopeAngles<Real> *rope) {
    const index_t d = tp.val(x).cols();
    require(d % heads == 0, "mha_graph: heads must divide width");
    const index_t dh = d / heads;
    auto q = tp.add_row(tp.matmul(x, a.wq), a.bq);
    auto k = tp.add_row(tp.matmul(x, a.wk), a.bk);
    auto v = tp.add_row(tp.matmul(x, a.wv), a.bv);
    if (rope != nullptr) {
        q = tp.rotate_pairs(q, rope->cos_g, rope->sin_g, heads);
        k = tp.rotate_pairs(k, rope->cos_g, rope->sin_g, heads);
    }
    const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
    std::vector<typename Tape<Real>::Var> ctx;
    ctx.reserve(static_cast<std::size_t>(heads));
    for (index_t h = 0; h < heads; ++h) {
        auto qh = tp.slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = tp.slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = tp.slice_cols(v, h * dh, (h + 1) * dh);
        auto probs = tp.softmax_rows(tp.scale(tp.matmul_nt(qh, kh), inv_sqrt_dh));
        ctx.push_back(tp.matmul(probs, vh));
    }
    auto merged = heads == 1 ? ctx[0] : tp.concat_cols(ctx);
    return tp.add_row(tp.matmul(merged, a.wo), a.bo);
}

// a = x + 1/2 mlp(LN1(x)); b = a + mha(LN2(a));
// default: y = norm(b + 1/2 swiglu(LN3(b))) with a parameter-free norm;
// literal variant: y = LN3(b + 1/2 swiglu(b)).
template <class Real>
typename Tape<Real>::Var block_graph(Tape<Real> &tp, typename Tape<Real>::Var x, const BlockVars<Real> &bv,
                                     const RopeAngles<Real> *rope) {
    const RopeAngles<Real> *use_rope = bv.rope_enabled ? rope : nullptr;
    require(!bv.rope_enabled || rope != nullptr, "block_graph: rotary block needs position angles");
    auto a = tp.add(x, tp.scale(mlp_graph(tp, ln_graph(tp, x, bv.ln1), bv.mlp), Real(0.5)));
    auto b = tp.add(a, mha_graph(tp, ln_graph(tp, a, bv.ln2), bv.attn, bv.heads, use_rope));
    if (bv.swiglu_branch_norm) {
        auto res = tp.add(b, tp.scale(swiglu_graph(tp, ln_graph(tp, b, bv.ln3), bv.swiglu), Real(0.5)));
        return tp.layer_norm_plain(res, static_cast<Real>(kLnEps));
    }
    auto res = tp.add(b, tp.scale(swiglu_graph(tp, b, bv.swiglu), Real(0.5)));
    return ln_graph(tp, res, bv.ln3);
}

// ─── plain forward wrappers ──────────────────────────────────────────────

template <class Real>
Real swish(Real x) {
    return x / (Real(1) + std::exp(-x));
}

template <class Real>
Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
}

template <class Real>
Matrix<Real> layer_norm(const Matrix<Real> &x, const Matrix<Real> &scale, const Matrix<Real> &shift,
                        Real eps = static_cast<Real>(kLnEps)) {
    Tape<Real> tp;
    return tp.val(tp.layer_norm(tp.input(x), tp.input(scale), tp.input(shift), eps));
}

template <class Real>
Matrix<Real> mlp_ffn(const Matrix<Real> &x, const MlpParams<Real> &p) {
    Tape<Real> tp;
    MlpVars<Real> v{tp.input(p.w1), tp.input(p.b1), tp.input(p.w2), tp.input(p.b2)};
    return tp.val(mlp_graph(tp, tp.input(x), v));
}

template <class Real>
Matrix<Real> swiglu_ffn(const Matrix<Real> &x, const SwigluParams<Real> &p) {
    Tape<Real> tp;
    SwigluVars<Real> v{tp.input(p.w), tp.input(p.v), tp.input(p.o), tp.input(p.bo)};
    return tp.val(swiglu_graph(tp, tp.input(x), v));
}

// x is [L x d] with d = heads * d_head; positions index the table rows.
template <class Real>
Matrix<Real> rope_rotate(const Matrix<Real> &x, const std::vector<index_t> &positions, const RopeTable<Real> &table,
                         index_t heads) {
    require(static_cast<index_t>(positions.size()) == x.rows(), "rope_rotate: one position per row");
    const RopeAngles<Real> ang = gather_rope(table, positions);
    Tape<Real> tp;
    return tp.val(tp.rotate_pairs(tp.input(x), ang.cos_g, ang.sin_g, heads));
}

template <class Real>
Matrix<Real> mha(const Matrix<Real> &x, const AttnParams<Real> &p, index_t heads,
                 const RopeTable<Real> *table = nullptr, const std::vector<index_t> *positions = nullptr) {
    Tape<Real> tp;
    AttnVars<Real> v{tp.input(p.wq), tp.input(p.bq), tp.input(p.wk), tp.input(p.bk),
                     tp.input(p.wv), tp.input(p.bv), tp.input(p.wo), tp.input(p.bo)};
    if (table != nullptr) {
        require(positions != nullptr, "mha: rotary table needs positions");
        const RopeAngles<Real> ang = gather_rope(*table, *positions);
        return tp.val(mha_graph(tp, tp.input(x), v, heads, &ang));
    }
    return tp.val(mha_graph(tp, tp.input(x), v, heads, static_cast<const RopeAngles<Real> *>(nullptr)));
}

template <class Real>
Matrix<Real> block_forward(const Matrix<Real> &x, const BlockParams<Real> &b, const RopeTable<Real> *table = nullptr,
                           const std::vector<index_t> *positions = nullptr) {
    Tape<Real> tp;
    BlockVars<Real> bv = register_block(tp, b, false);
    if (b.rope_enabled) {
        require(table != nullptr && positions != nullptr, "block_forward: rotary block needs table + positions");
        const RopeAngles<Real> ang = gather_rope(*table, *positions);
        return tp.val(block_graph(tp, tp.input(x), bv, &ang));
    }
    return tp.val(block_graph(tp, tp.input(x), bv, static_cast<const RopeAngles<Real> *>(nullptr)));
}

} // namespace ampp
