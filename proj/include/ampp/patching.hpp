// Copyright 2025 the ampp authors
// Spectrogram <-> patch conversion, linear patch embedding, and the
// fixed 2-D sinusoidal position table. Patch order is time-major:
// patch i covers time block i / grid_f and frequency block i % grid_f.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ampp/common.hpp"
#include "ampp/matrix.hpp"

namespace ampp {

struct PatchConfig {
    index_t patch_t = 4;
    index_t patch_f = 16;
    index_t grid_t = 50;
    index_t grid_f = 5;

    index_t n_patches() const { return grid_t * grid_f; }
    index_t patch_dim() const { return patch_t * patch_f; }
    index_t input_t() const { return grid_t * patch_t; }
    index_t input_f() const { return grid_f * patch_f; }

    static PatchConfig for_input(index_t t, index_t f, index_t patch_t = 4, index_t patch_f = 16) {
        require(patch_t >= 1 && patch_f >= 1, "PatchConfig: patch dims must be positive");
        require(t % patch_t == 0, "PatchConfig: time dim " + std::to_string(t) + " not divisible by patch_t");
        require(f % patch_f == 0, "PatchConfig: freq dim " + std::to_string(f) + " not divisible by patch_f");
        PatchConfig cfg;
        cfg.patch_t = patch_t;
        cfg.patch_f = patch_f;
        cfg.grid_t = t / patch_t;
        cfg.grid_f = f / patch_f;
        return cfg;
    }
};

// Grid coordinate of a token; cls sits outside the patch grid.
struct GridPos {
    index_t time_idx = 0;
    index_t freq_idx = 0;
    bool is_cls = false;
};

// Flattened 1-D position used by rotary attention: cls is 0 and patch i
// maps to i + 1, preserving time-major patch order.
inline index_t flat_position(const GridPos &p, index_t grid_f) {
    return p.is_cls ? 0 : p.time_idx * grid_f + p.freq_idx + 1;
}

inline std::vector<GridPos> grid_positions(const PatchConfig &cfg) {
    std::vector<GridPos> out(static_cast<std::size_t>(cfg.n_patches()));
    for (index_t i = 0; i < cfg.n_patches(); ++i)
        out[static_cast<std::size_t>(i)] = GridPos{i / cfg.grid_f, i % cfg.grid_f, false};
    return out;
}

template <class Real>
struct TokenSequence {
    Matrix<Real> tokens; // [L x d]
    std::vector<GridPos> positions;
};

// [T x F] -> [N x patch_dim]; within a patch, row-major over (time, freq).
template <class Real>
Matrix<Real> patchify(const Matrix<Real> &s, const PatchConfig &cfg) {
    require(s.rows() == cfg.input_t() && s.cols() == cfg.input_f(), "patchify: spectrogram shape mismatch");
    Matrix<Real> out(cfg.n_patches(), cfg.patch_dim());
    for (index_t p = 0; p < cfg.n_patches(); ++p) {
        const index_t bt = (p / cfg.grid_f) * cfg.patch_t;
        const index_t bf = (p % cfg.grid_f) * cfg.patch_f;
        Real *op = out.row(p);
        for (index_t i = 0; i < cfg.patch_t; ++i)
            for (index_t j = 0; j < cfg.patch_f; ++j) op[i * cfg.patch_f + j] = s(bt + i, bf + j);
    }
    return out;
}

template <class Real>
Matrix<Real> unpatchify(const Matrix<Real> &p, const PatchConfig &cfg) {
    require(p.rows() == cfg.n_patches() && p.cols() == cfg.patch_dim(), "unpatchify: patch shape mismatch");
    Matrix<Real> out(cfg.input_t(), cfg.input_f());
    for (index_t n = 0; n < cfg.n_patches(); ++n) {
        const index_t bt = (n / cfg.grid_f) * cfg.patch_t;
        const index_t bf = (n % cfg.grid_f) * cfg.patch_f;
        const Real *pn = p.row(n);
        for (index_t i = 0; i < cfg.patch_t; ++i)
            for (index_t j = 0; j < cfg.patch_f; ++j) out(bt + i, bf + j) = pn[i * cfg.patch_f + j];
    }
    return out;
}

// Fixed 2-D table: first d/2 channels encode the time index, last d/2 the
// frequency index, each half as interleaved sin/cos with base 10000.
// Position (0, 0) therefore reads as the (0, 1) pattern in both halves.
template <class Real>
Matrix<Real> sinusoidal_2d(index_t grid_t, index_t grid_f, index_t d_model) {
    require(d_model % 4 == 0, "sinusoidal_2d: d_model must be divisible by 4");
    require(grid_t >= 1 && grid_f >= 1, "sinusoidal_2d: empty grid");
    const index_t half = d_model / 2;
    Matrix<Real> out(grid_t * grid_f, d_model);
    for (index_t n = 0; n < out.rows(); ++n) {
        const index_t pos[2] = {n / grid_f, n % grid_f};
        for (int axis = 0; axis < 2; ++axis) {
            Real *dst = out.row(n) + axis * half;
            for (index_t j = 0; j < half / 2; ++j) {
                const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(half));
                const double ang = static_cast<double>(pos[axis]) * freq;
                dst[2 * j] = static_cast<Real>(std::sin(ang));
                dst[2 * j + 1] = static_cast<Real>(std::cos(ang));
            }
        }
    }
    return out;
}

enum class PositionalMode { kNone, kSinusoidal2D };

// tokens = p * weight + bias, plus the fixed table unless rotary position
// handling is active downstream (mode kNone).
template <class Real>
TokenSequence<Real> embed_patches(const Matrix<Real> &p, const Matrix<Real> &weight, const Matrix<Real> &bias,
                                  const PatchConfig &cfg, PositionalMode mode) {
    require(p.rows() == cfg.n_patches() && p.cols() == cfg.patch_dim(), "embed_patches: patch shape mismatch");
    require(weight.rows() == cfg.patch_dim(), "embed_patches: weight rows != patch_dim");
    require(bias.rows() == 1 && bias.cols() == weight.cols(), "embed_patches: bias shape");
    TokenSequence<Real> seq;
    seq.tokens = matmul(p, weight);
    for (index_t i = 0; i < seq.tokens.rows(); ++i) {
        Real *ti = seq.tokens.row(i);
        for (index_t j = 0; j < seq.tokens.cols(); ++j) ti[j] += bias(0, j);
    }
    if (mode == PositionalMode::kSinusoidal2D)
        add_in_place(seq.tokens, sinusoidal_2d<Real>(cfg.grid_t, cfg.grid_f, weight.cols()));
    seq.positions = grid_positions(cfg);
    return seq;
}

} // namespace ampp
