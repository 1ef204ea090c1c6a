// Copyright 2025 the ampp authors
// Full masked-autoencoder assembly: config presets, the parameter plan
// (single source of truth for tensor names/shapes/order), allocation and
// initialization, the pretrain graph, and the analytic parameter count.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ampp/autodiff.hpp"
#include "ampp/blocks.hpp"
#include "ampp/common.hpp"
#include "ampp/masking.hpp"
#include "ampp/matrix.hpp"
#include "ampp/patching.hpp"
#include "ampp/rng.hpp"

namespace ampp {

struct ModelConfig {
    index_t d_model = 768;
    index_t enc_layers = 12;
    index_t enc_heads = 12;
    index_t d_dec = 384;
    index_t dec_layers = 4;
    index_t dec_heads = 6;
    index_t input_t = 200;
    index_t input_f = 80;
    index_t patch_t = 4;
    index_t patch_f = 16;
    double mask_ratio = 0.8;
    bool rope_encoder = false; // off unless explicitly requested
    bool rope_decoder = false;
    bool swiglu_branch_norm = true;
    std::string preset = "base";

    PatchConfig patch_config() const { return PatchConfig::for_input(input_t, input_f, patch_t, patch_f); }
    index_t n_patches() const { return patch_config().n_patches(); }
    index_t patch_dim() const { return patch_config().patch_dim(); }

    void validate() const {
        require(d_model >= 1 && d_dec >= 1 && enc_layers >= 1, "ModelConfig: empty model");
        require(dec_layers >= 0, "ModelConfig: negative decoder depth");
        require(enc_heads >= 1 && d_model % enc_heads == 0, "ModelConfig: enc_heads must divide d_model");
        require(dec_heads >= 1 && d_dec % dec_heads == 0, "ModelConfig: dec_heads must divide d_dec");
        require(mask_ratio > 0.0 && mask_ratio < 1.0, "ModelConfig: mask_ratio in (0, 1)");
        if (!rope_encoder) require(d_model % 4 == 0, "ModelConfig: sinusoidal table needs d_model % 4 == 0");
        if (!rope_decoder) require(d_dec % 4 == 0, "ModelConfig: sinusoidal table needs d_dec % 4 == 0");
        if (rope_encoder) require((d_model / enc_heads) % 2 == 0, "ModelConfig: rotary head width must be even");
        if (rope_decoder) require((d_dec / dec_heads) % 2 == 0, "ModelConfig: rotary head width must be even");
        patch_config();
    }

    static ModelConfig preset_config(const std::string &name) {
        ModelConfig cfg;
        cfg.preset = name;
        if (name == "tiny") {
            cfg.d_model = 192;
            cfg.enc_layers = 12;
            cfg.enc_heads = 3;
            cfg.d_dec = 384;
            cfg.dec_heads = 6;
        } else if (name == "base") {
            cfg.d_model = 768;
            cfg.enc_layers = 12;
            cfg.enc_heads = 12;
            cfg.d_dec = 384;
            cfg.dec_heads = 6;
        } else if (name == "large") {
            cfg.d_model = 1024;
            cfg.enc_layers = 24;
            cfg.enc_heads = 16;
            cfg.d_dec = 512;
            cfg.dec_heads = 8;
        } else {
            throw Error("unknown preset '" + name + "' (expected tiny|base|large)");
        }
        return cfg;
    }
};

// Encoder parameter reference points used for startup sanity warnings.
inline constexpr double kRefEncoderParams[3] = {8.9e6, 141.9e6, 504.0e6};
inline constexpr const char *kRefPresets[3] = {"tiny", "base", "large"};

// ─── parameter plan ──────────────────────────────────────────────────────

struct TensorSpec {
    std::string name;
    index_t rows = 0;
    index_t cols = 0;
    TensorRole role = TensorRole::kWeight;
    bool encoder_scope = false;

    index_t size() const { return rows * cols; }
    bool decayed() const { return role == TensorRole::kWeight; }
};

// Canonical tensor order; allocation, optimizer state, gradients, and
// checkpoints all follow this list.
inline std::vector<TensorSpec> param_plan(const ModelConfig &cfg) {
    cfg.validate();
    std::vector<TensorSpec> plan;
    const index_t pd = cfg.patch_dim();
    auto push = [&](std::string name, index_t r, index_t c, TensorRole role, bool enc_scope) {
        plan.push_back(TensorSpec{std::move(name), r, c, role, enc_scope});
    };
    push("patch_embed.w", pd, cfg.d_model, TensorRole::kWeight, true);
    push("patch_embed.b", 1, cfg.d_model, TensorRole::kBias, true);
    push("cls_token", 1, cfg.d_model, TensorRole::kToken, true);
    auto push_stack = [&](const std::string &prefix, index_t layers, index_t d, index_t heads, bool enc_scope) {
        BlockParams<float> proto;
        shape_block(proto, d, heads);
        for (index_t i = 0; i < layers; ++i)
            for_each_block_tensor(proto, [&](const char *name, const Matrix<float> &m, TensorRole role) {
                push(prefix + "." + std::to_string(i) + "." + name, m.rows(), m.cols(), role, enc_scope);
            });
    };
    push_stack("enc", cfg.enc_layers, cfg.d_model, cfg.enc_heads, true);
    push("enc_to_dec.w", cfg.d_model, cfg.d_dec, TensorRole::kWeight, false);
    push("enc_to_dec.b", 1, cfg.d_dec, TensorRole::kBias, false);
    push("mask_token", 1, cfg.d_dec, TensorRole::kToken, false);
    if (cfg.dec_layers > 0) push_stack("dec", cfg.dec_layers, cfg.d_dec, cfg.dec_heads, false);
    push("dec_out.w", cfg.d_dec, pd, TensorRole::kWeight, false);
    push("dec_out.b", 1, pd, TensorRole::kBias, false);
    return plan;
}

enum class CountScope { kEncoder, kFull };

inline index_t block_param_count(index_t d) {
    const index_t h = swiglu_hidden(d);
    return 6 * d + (8 * d * d + 5 * d) + 4 * (d * d + d) + (3 * d * h + d);
}

// Closed form; must agree exactly with summing the plan.
inline index_t param_count(const ModelConfig &cfg, CountScope scope) {
    cfg.validate();
    const index_t pd = cfg.patch_dim();
    index_t n = pd * cfg.d_model + cfg.d_model // patch embedding
                + cfg.d_model                  // cls token
                + cfg.enc_layers * block_param_count(cfg.d_model);
    if (scope == CountScope::kFull) {
        n += cfg.d_model * cfg.d_dec + cfg.d_dec // projection to decoder width
             + cfg.d_dec                         // mask token
             + cfg.dec_layers * block_param_count(cfg.d_dec) + cfg.d_dec * pd + pd; // output head
    }
    return n;
}

inline index_t plan_param_count(const ModelConfig &cfg, CountScope scope) {
    index_t n = 0;
    for (const TensorSpec &t : param_plan(cfg))
        if (scope == CountScope::kFull || t.encoder_scope) n += t.size();
    return n;
}

// ─── parameters ──────────────────────────────────────────────────────────

template <class Real>
struct ModelParams {
    ModelConfig cfg;
    Matrix<Real> patch_w, patch_b; // [patch_dim x d], [1 x d]
    Matrix<Real> cls_token;        // [1 x d]
    std::vector<BlockParams<Real>> enc;
    Matrix<Real> enc2dec_w, enc2dec_b; // [d x d_dec], [1 x d_dec]
    Matrix<Real> mask_token;           // [1 x d_dec]
    std::vector<BlockParams<Real>> dec;
    Matrix<Real> out_w, out_b; // [d_dec x patch_dim], [1 x patch_dim]

    // Fixed (non-trainable) position handling.
    Matrix<Real> enc_pos;      // [N x d] when rope_encoder is off
    Matrix<Real> dec_pos_full; // [(N+1) x d_dec], zero cls row, when rope_decoder is off
    RopeTable<Real> enc_rope, dec_rope;

    // Visits trainable tensors in exactly param_plan order.
    template <class Fn>
    void for_each_tensor(Fn &&fn) {
        visit(*this, fn);
    }
    template <class Fn>
    void for_each_tensor(Fn &&fn) const {
        visit(*this, fn);
    }

  private:
    template <class Self, class Fn>
    static void visit(Self &self, Fn &&fn) {
        fn("patch_embed.w", self.patch_w, TensorRole::kWeight);
        fn("patch_embed.b", self.patch_b, TensorRole::kBias);
        fn("cls_token", self.cls_token, TensorRole::kToken);
        for (std::size_t i = 0; i < self.enc.size(); ++i)
            for_each_block_tensor(self.enc[i], [&](const char *name, auto &m, TensorRole role) {
                fn("enc." + std::to_string(i) + "." + name, m, role);
            });
        fn("enc_to_dec.w", self.enc2dec_w, TensorRole::kWeight);
        fn("enc_to_dec.b", self.enc2dec_b, TensorRole::kBias);
        fn("mask_token", self.mask_token, TensorRole::kToken);
        for (std::size_t i = 0; i < self.dec.size(); ++i)
            for_each_block_tensor(self.dec[i], [&](const char *name, auto &m, TensorRole role) {
                fn("dec." + std::to_string(i) + "." + name, m, role);
            });
        fn("dec_out.w", self.out_w, TensorRole::kWeight);
        fn("dec_out.b", self.out_b, TensorRole::kBias);
    }
};

// Truncated-normal(0.02) weights, zero biases, unit LN scales, normal(0.02)
// tokens; rng draws follow plan order so builds are seed-deterministic.
template <class Real>
ModelParams<Real> build_model(const ModelConfig &cfg, Rng &rng) {
    cfg.validate();
    const PatchConfig pc = cfg.patch_config();
    const index_t n = pc.n_patches();
    ModelParams<Real> p;
    p.cfg = cfg;
    p.patch_w = Matrix<Real>(pc.patch_dim(), cfg.d_model);
    p.patch_b = Matrix<Real>(1, cfg.d_model);
    p.cls_token = Matrix<Real>(1, cfg.d_model);
    p.enc.resize(static_cast<std::size_t>(cfg.enc_layers));
    for (auto &b : p.enc) {
        shape_block(b, cfg.d_model, cfg.enc_heads);
        b.rope_enabled = cfg.rope_encoder;
        b.swiglu_branch_norm = cfg.swiglu_branch_norm;
    }
    p.enc2dec_w = Matrix<Real>(cfg.d_model, cfg.d_dec);
    p.enc2dec_b = Matrix<Real>(1, cfg.d_dec);
    p.mask_token = Matrix<Real>(1, cfg.d_dec);
    p.dec.resize(static_cast<std::size_t>(cfg.dec_layers));
    for (auto &b : p.dec) {
        shape_block(b, cfg.d_dec, cfg.dec_heads);
        b.rope_enabled = cfg.rope_decoder;
        b.swiglu_branch_norm = cfg.swiglu_branch_norm;
    }
    p.out_w = Matrix<Real>(cfg.d_dec, pc.patch_dim());
    p.out_b = Matrix<Real>(1, pc.patch_dim());
    p.for_each_tensor([&](const std::string &, Matrix<Real> &m, TensorRole role) { init_tensor(m, role, rng); });

    if (!cfg.rope_encoder) p.enc_pos = sinusoidal_2d<Real>(pc.grid_t, pc.grid_f, cfg.d_model);
    if (!cfg.rope_decoder) {
        const Matrix<Real> table = sinusoidal_2d<Real>(pc.grid_t, pc.grid_f, cfg.d_dec);
        p.dec_pos_full = Matrix<Real>(n + 1, cfg.d_dec);
        for (index_t i = 0; i < n; ++i)
            for (index_t j = 0; j < cfg.d_dec; ++j) p.dec_pos_full(i + 1, j) = table(i, j);
    }
    if (cfg.rope_encoder) p.enc_rope = RopeTable<Real>::build(n + 1, cfg.d_model / cfg.enc_heads);
    if (cfg.rope_decoder) p.dec_rope = RopeTable<Real>::build(n + 1, cfg.d_dec / cfg.dec_heads);
    return p;
}

// ─── tape assembly ───────────────────────────────────────────────────────

template <class Real>
struct ModelVars {
    typename Tape<Real>::Var patch_w, patch_b, cls_token;
    std::vector<BlockVars<Real>> enc;
    typename Tape<Real>::Var enc2dec_w, enc2dec_b, mask_token;
    std::vector<BlockVars<Real>> dec;
    typename Tape<Real>::Var out_w, out_b;
};

template <class Real>
ModelVars<Real> register_model(Tape<Real> &tp, const ModelParams<Real> &p, bool requires_grad) {
    ModelVars<Real> v;
    v.patch_w = tp.input(p.patch_w, requires_grad);
    v.patch_b = tp.input(p.patch_b, requires_grad);
    v.cls_token = tp.input(p.cls_token, requires_grad);
    for (const auto &b : p.enc) v.enc.push_back(register_block(tp, b, requires_grad));
    v.enc2dec_w = tp.input(p.enc2dec_w, requires_grad);
    v.enc2dec_b = tp.input(p.enc2dec_b, requires_grad);
    v.mask_token = tp.input(p.mask_token, requires_grad);
    for (const auto &b : p.dec) v.dec.push_back(register_block(tp, b, requires_grad));
    v.out_w = tp.input(p.out_w, requires_grad);
    v.out_b = tp.input(p.out_b, requires_grad);
    return v;
}

// Collects registered vars in plan order (mirrors ModelParams visit order).
template <class Real>
std::vector<typename Tape<Real>::Var> plan_order_vars(const ModelVars<Real> &v) {
    std::vector<typename Tape<Real>::Var> out;
    auto push_block = [&out](const BlockVars<Real> &b) {
        for (auto var : {b.ln1.scale, b.ln1.shift, b.ln2.scale, b.ln2.shift, b.ln3.scale, b.ln3.shift,
                         b.mlp.w1, b.mlp.b1, b.mlp.w2, b.mlp.b2, b.attn.wq, b.attn.bq, b.attn.wk, b.attn.bk,
                         b.attn.wv, b.attn.bv, b.attn.wo, b.attn.bo, b.swiglu.w, b.swiglu.v, b.swiglu.o,
                         b.swiglu.bo})
            out.push_back(var);
    };
    out.push_back(v.patch_w);
    out.push_back(v.patch_b);
    out.push_back(v.cls_token);
    for (const auto &b : v.enc) push_block(b);
    out.push_back(v.enc2dec_w);
    out.push_back(v.enc2dec_b);
    out.push_back(v.mask_token);
    for (const auto &b : v.dec) push_block(b);
    out.push_back(v.out_w);
    out.push_back(v.out_b);
    return out;
}

// Flat rotary positions: cls at 0, patch i at i + 1.
inline std::vector<index_t> all_token_positions(index_t n_patches) {
    std::vector<index_t> pos(static_cast<std::size_t>(n_patches) + 1);
    for (index_t i = 0; i <= n_patches; ++i) pos[static_cast<std::size_t>(i)] = i;
    return pos;
}

inline std::vector<index_t> visible_token_positions(const MaskSpec &spec) {
    std::vector<index_t> pos;
    pos.reserve(spec.visible_idx.size() + 1);
    pos.push_back(0);
    for (index_t v : spec.visible_idx) pos.push_back(v + 1);
    return pos;
}

// Embed + cls prefix + optional masking + encoder stack. Returns the
// encoded sequence var ([1+|visible| x d] or [N+1 x d] without spec).
template <class Real>
typename Tape<Real>::Var encode_graph(Tape<Real> &tp, const ModelVars<Real> &v, const ModelParams<Real> &p,
                                      const Matrix<Real> &patches, const MaskSpec *spec) {
    const index_t n = p.cfg.n_patches();
    require(patches.rows() == n && patches.cols() == p.cfg.patch_dim(), "encode_graph: patch matrix shape");
    auto tokens = tp.add_row(tp.matmul(tp.input(patches), v.patch_w), v.patch_b);
    if (!p.cfg.rope_encoder) tokens = tp.add(tokens, tp.input(p.enc_pos));
    auto seq = tp.concat_rows(v.cls_token, tokens);
    std::vector<index_t> positions;
    if (spec != nullptr) {
        seq = tp.gather_rows(seq, visible_row_indices(*spec));
        positions = visible_token_positions(*spec);
    } else {
        positions = all_token_positions(n);
    }
    RopeAngles<Real> angles;
    if (p.cfg.rope_encoder) angles = gather_rope(p.enc_rope, positions);
    for (const auto &b : v.enc) seq = block_graph(tp, seq, b, p.cfg.rope_encoder ? &angles : nullptr);
    return seq;
}

// Project to decoder width, restore full order with the mask token, run
// the decoder stack, map to patch space, drop cls.
template <class Real>
typename Tape<Real>::Var decode_graph(Tape<Real> &tp, const ModelVars<Real> &v, const ModelParams<Real> &p,
                                      typename Tape<Real>::Var z_enc, const MaskSpec &spec) {
    const index_t n = p.cfg.n_patches();
    auto proj = tp.add_row(tp.matmul(z_enc, v.enc2dec_w), v.enc2dec_b);
    auto pool = tp.concat_rows(proj, v.mask_token);
    auto full = tp.gather_rows(pool, restore_row_indices(spec));
    if (!p.cfg.rope_decoder) full = tp.add(full, tp.input(p.dec_pos_full));
    RopeAngles<Real> angles;
    if (p.cfg.rope_decoder) angles = gather_rope(p.dec_rope, all_token_positions(n));
    for (const auto &b : v.dec) full = block_graph(tp, full, b, p.cfg.rope_decoder ? &angles : nullptr);
    auto y_full = tp.add_row(tp.matmul(full, v.out_w), v.out_b);
    std::vector<index_t> patch_rows(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) patch_rows[static_cast<std::size_t>(i)] = i + 1;
    return tp.gather_rows(y_full, patch_rows);
}

template <class Real>
struct PretrainGraph {
    typename Tape<Real>::Var y;    // [N x patch_dim]
    typename Tape<Real>::Var loss; // scalar
};

template <class Real>
PretrainGraph<Real> pretrain_graph(Tape<Real> &tp, const ModelVars<Real> &v, const ModelParams<Real> &p,
                                   const Matrix<Real> &spectrogram, const MaskSpec &spec) {
    const Matrix<Real> targets = patchify(spectrogram, p.cfg.patch_config());
    auto z = encode_graph(tp, v, p, targets, &spec);
    auto y = decode_graph(tp, v, p, z, spec);
    auto loss = tp.masked_mse(y, targets, spec.masked_idx);
    return PretrainGraph<Real>{y, loss};
}

// ─── plain forward wrappers ──────────────────────────────────────────────

template <class Real>
struct ReconstructionOutput {
    Matrix<Real> y; // [N x patch_dim]
    Real loss = Real(0);
    MaskSpec spec;
};

template <class Real>
ReconstructionOutput<Real> forward_pretrain(const ModelParams<Real> &p, const Matrix<Real> &spectrogram, Rng &rng) {
    ReconstructionOutput<Real> out;
    out.spec = sample_mask(p.cfg.n_patches(), p.cfg.mask_ratio, rng);
    Tape<Real> tp;
    ModelVars<Real> v = register_model(tp, p, false);
    PretrainGraph<Real> g = pretrain_graph(tp, v, p, spectrogram, out.spec);
    out.y = tp.val(g.y);
    out.loss = tp.val(g.loss)(0, 0);
    return out;
}

// Mask-free encoding of the full sequence; rows are [cls ; patches].
template <class Real>
Matrix<Real> encode_all(const ModelParams<Real> &p, const Matrix<Real> &spectrogram) {
    const Matrix<Real> patches = patchify(spectrogram, p.cfg.patch_config());
    Tape<Real> tp;
    ModelVars<Real> v = register_model(tp, p, false);
    return tp.val(encode_graph(tp, v, p, patches, nullptr));
}

} // namespace ampp
