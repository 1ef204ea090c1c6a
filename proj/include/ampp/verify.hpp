// Copyright 2025 the ampp authors
// Self-verification suite. The refimpl namespace re-implements the block
// math with plain loops and no tape, giving an independent evaluation
// path; every check compares the production path against it or against
// closed-form values and reports measured numbers.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ampp/blocks.hpp"
#include "ampp/common.hpp"
#include "ampp/dsp.hpp"
#include "ampp/evalkit.hpp"
#include "ampp/masking.hpp"
#include "ampp/model.hpp"
#include "ampp/patching.hpp"
#include "ampp/synth.hpp"
#include "ampp/trainer.hpp"

namespace ampp {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace refimpl {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double swish(double x) { return x * sigmoid(x); }
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Matrix<double> layer_norm(const Matrix<double> &x, const Matrix<double> *scale, const Matrix<double> *shift,
                                 double eps) {
    Matrix<double> out(x.rows(), x.cols());
    const auto d = static_cast<double>(x.cols());
    for (index_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (index_t j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= d;
        double var = 0.0;
        for (index_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (index_t j = 0; j < x.cols(); ++j) {
            double v = (x(i, j) - mean) * inv;
            if (scale != nullptr) v = v * (*scale)(0, j) + (*shift)(0, j);
            out(i, j) = v;
        }
    }
    return out;
}

inline Matrix<double> linear(const Matrix<double> &x, const Matrix<double> &w, const Matrix<double> *b) {
    Matrix<double> out(x.rows(), w.cols());
    for (index_t i = 0; i < x.rows(); ++i)
        for (index_t k = 0; k < x.cols(); ++k)
            for (index_t j = 0; j < w.cols(); ++j) out(i, j) += x(i, k) * w(k, j);
    if (b != nullptr)
        for (index_t i = 0; i < out.rows(); ++i)
            for (index_t j = 0; j < out.cols(); ++j) out(i, j) += (*b)(0, j);
    return out;
}

inline Matrix<double> mlp_ffn(const Matrix<double> &x, const MlpParams<double> &p) {
    Matrix<double> h = linear(x, p.w1, &p.b1);
    for (index_t i = 0; i < h.size(); ++i) h.data()[i] = gelu(h.data()[i]);
    return linear(h, p.w2, &p.b2);
}

inline Matrix<double> swiglu_ffn(const Matrix<double> &x, const SwigluParams<double> &p) {
    Matrix<double> g = linear(x, p.w, nullptr);
    Matrix<double> v = linear(x, p.v, nullptr);
    for (index_t i = 0; i < g.size(); ++i) g.data()[i] = swish(g.data()[i]) * v.data()[i];
    return linear(g, p.o, &p.bo);
}

// Direct angle evaluation, independent of RopeTable.
inline Matrix<double> rope_rotate(const Matrix<double> &x, const std::vector<index_t> &positions, index_t heads,
                                  double base = 10000.0) {
    const index_t dh = x.cols() / heads;
    Matrix<double> out(x.rows(), x.cols());
    for (index_t i = 0; i < x.rows(); ++i) {
        const auto m = static_cast<double>(positions[static_cast<std::size_t>(i)]);
        for (index_t h = 0; h < heads; ++h)
            for (index_t j = 0; j < dh / 2; ++j) {
                const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
                const double c = std::cos(m * theta), s = std::sin(m * theta);
                const double x0 = x(i, h * dh + 2 * j), x1 = x(i, h * dh + 2 * j + 1);
                out(i, h * dh + 2 * j) = c * x0 - s * x1;
                out(i, h * dh + 2 * j + 1) = s * x0 + c * x1;
            }
    }
    return out;
}

inline Matrix<double> softmax_rows(const Matrix<double> &x) {
    Matrix<double> out(x.rows(), x.cols());
    for (index_t i = 0; i < x.rows(); ++i) {
        double m = x(i, 0);
        for (index_t j = 1; j < x.cols(); ++j) m = std::max(m, x(i, j));
        double sum = 0.0;
        for (index_t j = 0; j < x.cols(); ++j) sum += out(i, j) = std::exp(x(i, j) - m);
        for (index_t j = 0; j < x.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

// Returns attention probabilities of head 0 as well, for shift checks.
inline Matrix<double> mha(const Matrix<double> &x, const AttnParams<double> &p, index_t heads,
                          const std::vector<index_t> *positions, Matrix<double> *head0_probs = nullptr) {
    const index_t dh = x.cols() / heads;
    Matrix<double> q = linear(x, p.wq, &p.bq);
    Matrix<double> k = linear(x, p.wk, &p.bk);
    Matrix<double> v = linear(x, p.wv, &p.bv);
    if (positions != nullptr) {
        q = rope_rotate(q, *positions, heads);
        k = rope_rotate(k, *positions, heads);
    }
    Matrix<double> merged(x.rows(), x.cols());
    for (index_t h = 0; h < heads; ++h) {
        Matrix<double> scores(x.rows(), x.rows());
        for (index_t i = 0; i < x.rows(); ++i)
            for (index_t j = 0; j < x.rows(); ++j) {
                double dot = 0.0;
                for (index_t c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
                scores(i, j) = dot / std::sqrt(static_cast<double>(dh));
            }
        const Matrix<double> probs = softmax_rows(scores);
        if (h == 0 && head0_probs != nullptr) *head0_probs = probs;
        for (index_t i = 0; i < x.rows(); ++i)
            for (index_t j = 0; j < x.rows(); ++j)
                for (index_t c = 0; c < dh; ++c) merged(i, h * dh + c) += probs(i, j) * v(j, h * dh + c);
    }
    return linear(merged, p.wo, &p.bo);
}

// The three block equations evaluated one at a time.
inline Matrix<double> block(const Matrix<double> &x, const BlockParams<double> &bp,
                            const std::vector<index_t> *positions) {
    Matrix<double> a = x;
    {
        Matrix<double> f = mlp_ffn(layer_norm(x, &bp.ln1.scale, &bp.ln1.shift, kLnEps), bp.mlp);
        for (index_t i = 0; i < a.size(); ++i) a.data()[i] += 0.5 * f.data()[i];
    }
    Matrix<double> b = a;
    {
        Matrix<double> f = mha(layer_norm(a, &bp.ln2.scale, &bp.ln2.shift, kLnEps), bp.attn, bp.heads,
                               bp.rope_enabled ? positions : nullptr);
        for (index_t i = 0; i < b.size(); ++i) b.data()[i] += f.data()[i];
    }
    if (bp.swiglu_branch_norm) {
        Matrix<double> f = swiglu_ffn(layer_norm(b, &bp.ln3.scale, &bp.ln3.shift, kLnEps), bp.swiglu);
        for (index_t i = 0; i < b.size(); ++i) b.data()[i] += 0.5 * f.data()[i];
        return layer_norm(b, nullptr, nullptr, kLnEps);
    }
    Matrix<double> f = swiglu_ffn(b, bp.swiglu);
    for (index_t i = 0; i < b.size(); ++i) b.data()[i] += 0.5 * f.data()[i];
    return layer_norm(b, &bp.ln3.scale, &bp.ln3.shift, kLnEps);
}

} // namespace refimpl

// ─── individual checks ───────────────────────────────────────────────────

namespace detail {

inline std::string fmt(const char *f, double a, double b = 0.0, double c = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

inline double rel_diff(const Matrix<double> &a, const Matrix<double> &b) {
    double worst = 0.0;
    for (index_t i = 0; i < a.size(); ++i) {
        const double denom = std::max(std::abs(b.data()[i]), 1e-12);
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
    }
    return worst;
}

} // namespace detail

// Closed form == summed plan exactly, and within 1.5% of the reference
// encoder sizes.
inline CheckResult check_param_counts() {
    CheckResult r{"parameter counts", true, ""};
    for (int i = 0; i < 3; ++i) {
        const ModelConfig cfg = ModelConfig::preset_config(kRefPresets[i]);
        const index_t closed = param_count(cfg, CountScope::kEncoder);
        const index_t planned = plan_param_count(cfg, CountScope::kEncoder);
        const double dev = std::abs(static_cast<double>(closed) - kRefEncoderParams[i]) / kRefEncoderParams[i];
        if (closed != planned || dev > 0.015) r.pass = false;
        r.detail += std::string(kRefPresets[i]) + "=" + std::to_string(closed) +
                    detail::fmt(" (dev %.4f%%) ", dev * 100.0);
    }
    return r;
}

inline CheckResult check_eq_trace(std::uint64_t seed = 11) {
    Rng rng(seed);
    double worst = 0.0;
    for (int literal = 0; literal < 2; ++literal) {
        BlockParams<double> bp = init_block<double>(16, 4, rng, false, literal == 0);
        Matrix<double> x(5, 16);
        for (index_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
        const Matrix<double> got = block_forward(x, bp);
        const Matrix<double> want = refimpl::block(x, bp, nullptr);
        worst = std::max(worst, detail::rel_diff(got, want));
    }
    CheckResult r{"block equation trace", worst < 1e-6, detail::fmt("max rel err %.3e (limit 1e-6)", worst)};
    return r;
}

inline CheckResult check_rope_norms(std::uint64_t seed = 12) {
    Rng rng(seed);
    const index_t heads = 2, d = 16, L = 9;
    RopeTable<double> table = RopeTable<double>::build(64, d / heads);
    Matrix<double> x(L, d);
    for (index_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    std::vector<index_t> pos;
    for (index_t i = 0; i < L; ++i) pos.push_back(3 * i + 1);
    const Matrix<double> y = rope_rotate(x, pos, table, heads);
    double worst = 0.0;
    for (index_t i = 0; i < L; ++i) {
        double nx = 0.0, ny = 0.0;
        for (index_t j = 0; j < d; ++j) {
            nx += x(i, j) * x(i, j);
            ny += y(i, j) * y(i, j);
        }
        worst = std::max(worst, std::abs(std::sqrt(nx) - std::sqrt(ny)));
    }
    return CheckResult{"rotary norm preservation", worst < 1e-12, detail::fmt("max norm drift %.3e", worst)};
}

inline CheckResult check_rope_identity(std::uint64_t seed = 13) {
    Rng rng(seed);
    const index_t heads = 4, d = 32;
    RopeTable<double> table = RopeTable<double>::build(8, d / heads);
    Matrix<double> x(1, d);
    for (index_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const Matrix<double> y = rope_rotate(x, {0}, table, heads);
    const double drift = max_abs_diff(x, y);
    return CheckResult{"rotary position-0 identity", drift == 0.0, detail::fmt("max drift %.3e", drift)};
}

// Attention probabilities under a global position shift.
inline CheckResult check_rope_shift(std::uint64_t seed = 14) {
    Rng rng(seed);
    const index_t heads = 2, d = 16, L = 7, shift = 9;
    AttnParams<double> p;
    BlockParams<double> proto = init_block<double>(d, heads, rng);
    p = proto.attn;
    Matrix<double> x(L, d);
    for (index_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    std::vector<index_t> pos, pos_shift;
    for (index_t i = 0; i < L; ++i) {
        pos.push_back(2 * i);
        pos_shift.push_back(2 * i + shift);
    }
    Matrix<double> probs_a, probs_b;
    refimpl::mha(x, p, heads, &pos, &probs_a);
    refimpl::mha(x, p, heads, &pos_shift, &probs_b);
    double worst = 0.0;
    for (index_t i = 0; i < probs_a.size(); ++i)
        worst = std::max(worst, std::abs(probs_a.data()[i] - probs_b.data()[i]));
    return CheckResult{"rotary shift invariance", worst < 1e-5, detail::fmt("max prob drift %.3e (limit 1e-5)", worst)};
}

inline CheckResult check_mask_counts(std::uint64_t seed = 15) {
    Rng rng(seed);
    const MaskSpec spec = sample_mask(250, 0.8, rng);
    spec.validate();
    const bool ok = spec.visible_idx.size() == 50 && spec.masked_idx.size() == 200;
    return CheckResult{"mask partition 250 -> 50 visible / 200 masked", ok,
                       "visible=" + std::to_string(spec.visible_idx.size()) +
                           " masked=" + std::to_string(spec.masked_idx.size())};
}

inline CheckResult check_mask_restore(std::uint64_t seed = 16) {
    Rng rng(seed);
    const PatchConfig pc = PatchConfig::for_input(200, 80);
    const index_t n = pc.n_patches(), d = 6;
    const MaskSpec spec = sample_mask(n, 0.8, rng);
    TokenSequence<double> seq;
    seq.tokens = Matrix<double>(n + 1, d);
    for (index_t i = 0; i <= n; ++i)
        for (index_t j = 0; j < d; ++j) seq.tokens(i, j) = static_cast<double>(i * 100 + j);
    seq.positions.resize(static_cast<std::size_t>(n) + 1);
    seq.positions[0] = GridPos{0, 0, true};
    const auto grid = grid_positions(pc);
    for (index_t i = 1; i <= n; ++i) seq.positions[static_cast<std::size_t>(i)] = grid[static_cast<std::size_t>(i - 1)];

    const TokenSequence<double> vis = apply_mask(seq, spec);
    Matrix<double> sentinel(1, d);
    for (index_t j = 0; j < d; ++j) sentinel(0, j) = -1.0;
    const TokenSequence<double> rest = restore_with_mask_token(vis, spec, sentinel, pc);

    bool ok = vis.tokens.rows() == static_cast<index_t>(spec.visible_idx.size()) + 1 &&
              rest.tokens.rows() == n + 1;
    for (index_t j = 0; j < d && ok; ++j) ok = rest.tokens(0, j) == seq.tokens(0, j);
    for (index_t i = 0; i < n && ok; ++i) {
        const bool visible = std::find(spec.visible_idx.begin(), spec.visible_idx.end(), i) != spec.visible_idx.end();
        for (index_t j = 0; j < d && ok; ++j) {
            const double want = visible ? seq.tokens(i + 1, j) : -1.0;
            ok = rest.tokens(i + 1, j) == want;
        }
    }
    return CheckResult{"mask drop/restore round trip", ok, ok ? "exact placement at all 251 slots" : "misplaced token"};
}

inline CheckResult check_masked_mse_invariance(std::uint64_t seed = 17) {
    Rng rng(seed);
    const index_t n = 30, d = 8;
    const MaskSpec spec = sample_mask(n, 0.8, rng);
    Matrix<double> y(n, d), targets(n, d);
    for (index_t i = 0; i < y.size(); ++i) {
        y.data()[i] = rng.normal();
        targets.data()[i] = rng.normal();
    }
    Tape<double> tp;
    const double base = tp.val(tp.masked_mse(tp.input(y), targets, spec.masked_idx))(0, 0);
    for (index_t v : spec.visible_idx)
        for (index_t j = 0; j < d; ++j) y(v, j) += rng.normal() * 10.0;
    Tape<double> tp2;
    const double perturbed = tp2.val(tp2.masked_mse(tp2.input(y), targets, spec.masked_idx))(0, 0);
    return CheckResult{"masked loss ignores visible rows", base == perturbed,
                       detail::fmt("loss %.12f unchanged", base)};
}

inline CheckResult check_patch_roundtrip(std::uint64_t seed = 18) {
    Rng rng(seed);
    const PatchConfig pc = PatchConfig::for_input(200, 80);
    Matrix<double> s(200, 80);
    for (index_t i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
    const Matrix<double> p = patchify(s, pc);
    const Matrix<double> back = unpatchify(p, pc);
    const double drift = max_abs_diff(s, back);
    const bool ok = drift == 0.0 && p.rows() == 250 && p.cols() == 64;
    return CheckResult{"patchify/unpatchify round trip", ok, detail::fmt("shape 250x64, drift %.1e", drift)};
}

inline CheckResult check_pipeline_shapes(std::uint64_t seed = 19) {
    Rng rng(seed);
    const Waveform w = synth_tone(440.0, 0.1, 0.0, 0.01, rng);
    const Matrix<float> spect = logmel(w);
    ModelConfig cfg;
    cfg.preset = "shape-check";
    cfg.d_model = 64;
    cfg.enc_layers = 1;
    cfg.enc_heads = 2;
    cfg.d_dec = 64;
    cfg.dec_layers = 1;
    cfg.dec_heads = 2;
    ModelParams<float> params = build_model<float>(cfg, rng);
    Rng mask_rng(seed + 1);
    const MaskSpec spec = sample_mask(cfg.n_patches(), cfg.mask_ratio, mask_rng);
    Tape<float> tp;
    ModelVars<float> vars = register_model(tp, params, false);
    const Matrix<float> patches = patchify(spect, cfg.patch_config());
    auto z = encode_graph(tp, vars, params, patches, &spec);
    auto y = decode_graph(tp, vars, params, z, spec);
    const bool ok = w.samples.size() == 32000 && spect.rows() == 200 && spect.cols() == 80 && patches.rows() == 250 &&
                    patches.cols() == 64 && tp.val(z).rows() == 51 && tp.val(y).rows() == 250 && tp.val(y).cols() == 64;
    return CheckResult{"pipeline shapes 32000 -> [200x80] -> 250x64 -> 51 -> [250x64]", ok,
                       "spect " + std::to_string(spect.rows()) + "x" + std::to_string(spect.cols()) + ", encoded " +
                           std::to_string(tp.val(z).rows()) + ", output " + std::to_string(tp.val(y).rows()) + "x" +
                           std::to_string(tp.val(y).cols())};
}

inline CheckResult check_schedule() {
    OptimConfig cfg;
    cfg.peak_lr = 1e-3;
    cfg.epochs = 100;
    cfg.warmup_epochs = 10;
    cfg.steps_per_epoch = 4;
    const index_t w = cfg.warmup_steps(), t = cfg.total_steps();
    const double peak = cfg.resolved_peak_lr();
    const bool ok = lr_at(w / 2, cfg) == 0.5 * peak && lr_at(w, cfg) == peak &&
                    lr_at(w + (t - w) / 2, cfg) == 0.5 * peak && lr_at(t, cfg) == 0.0;
    return CheckResult{"lr schedule fixed points", ok,
                       detail::fmt("mid-warmup %.2e, peak %.2e, cosine-mid %.2e", lr_at(w / 2, cfg), lr_at(w, cfg),
                                   lr_at(w + (t - w) / 2, cfg))};
}

inline CheckResult check_score_example() {
    ScoreTable table;
    table.models = {"A", "B", "C"};
    table.tasks = {"t1", "t2"};
    table.x = Matrix<double>(3, 2);
    table.x(0, 0) = 90;
    table.x(0, 1) = 60;
    table.x(1, 0) = 70;
    table.x(1, 1) = 40;
    table.x(2, 0) = 80;
    table.x(2, 1) = 60;
    const std::vector<double> s = aggregate_score(table);
    bool ok = s[0] == 100.0 && s[1] == 0.0 && s[2] == 75.0;
    // Per-task positive affine rescaling must not move any score.
    ScoreTable scaled = table;
    for (index_t m = 0; m < 3; ++m) {
        scaled.x(m, 0) = scaled.x(m, 0) * 3.5 + 11.0;
        scaled.x(m, 1) = scaled.x(m, 1) * 0.25 - 2.0;
    }
    const std::vector<double> s2 = aggregate_score(scaled);
    for (int i = 0; i < 3; ++i) ok = ok && std::abs(s[static_cast<std::size_t>(i)] - s2[static_cast<std::size_t>(i)]) < 1e-9;
    return CheckResult{"aggregated score hand example", ok,
                       detail::fmt("s = {%.1f, %.1f, %.1f}", s[0], s[1], s[2])};
}

inline CheckResult check_grad_fidelity(bool rope, double tolerance = 1e-4) {
    const GradCheckReport rep = grad_check(grad_check_config(rope, rope), 200, tolerance);
    return CheckResult{std::string("gradient fidelity (rotary ") + (rope ? "on" : "off") + ")", rep.pass,
                       detail::fmt("max rel err %.3e over %.0f coords (tol %.1e)", rep.max_rel_err,
                                   static_cast<double>(rep.total_coords), tolerance)};
}

struct VerifyOptions {
    double grad_tolerance = 1e-4;
};

inline std::vector<CheckResult> run_verification(const VerifyOptions &opts = VerifyOptions{}) {
    std::vector<CheckResult> out;
    out.push_back(check_param_counts());
    out.push_back(check_eq_trace());
    out.push_back(check_rope_norms());
    out.push_back(check_rope_identity());
    out.push_back(check_rope_shift());
    out.push_back(check_mask_counts());
    out.push_back(check_mask_restore());
    out.push_back(check_masked_mse_invariance());
    out.push_back(check_patch_roundtrip());
    out.push_back(check_pipeline_shapes());
    out.push_back(check_schedule());
    out.push_back(check_score_example());
    out.push_back(check_grad_fidelity(false, opts.grad_tolerance));
    out.push_back(check_grad_fidelity(true, opts.grad_tolerance));
    return out;
}

} // namespace ampp
