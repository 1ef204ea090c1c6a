// Copyright 2025 the ampp authors
// Random patch masking: sample the visible/masked partition, drop masked
// tokens before encoding, and restore full-length sequences with the
// learnable mask token before decoding. cls (slot 0) is never maskable.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ampp/common.hpp"
#include "ampp/matrix.hpp"
#include "ampp/patching.hpp"
#include "ampp/rng.hpp"

namespace ampp {

struct MaskSpec {
    index_t n_patches = 0;
    double mask_ratio = 0.8;
    std::vector<index_t> visible_idx; // sorted, patch index space (no cls)
    std::vector<index_t> masked_idx;  // sorted complement

    void validate() const {
        require(static_cast<index_t>(visible_idx.size() + masked_idx.size()) == n_patches,
                "MaskSpec: partition does not cover the patch set");
        std::vector<bool> seen(static_cast<std::size_t>(n_patches), false);
        for (index_t i : visible_idx) {
            require(0 <= i && i < n_patches && !seen[static_cast<std::size_t>(i)], "MaskSpec: bad visible index");
            seen[static_cast<std::size_t>(i)] = true;
        }
        for (index_t i : masked_idx) {
            require(0 <= i && i < n_patches && !seen[static_cast<std::size_t>(i)], "MaskSpec: bad masked index");
            seen[static_cast<std::size_t>(i)] = true;
        }
    }
};

// Uniform partition via a random permutation; the first
// floor((1 - ratio) * N + 0.5) entries stay visible.
inline MaskSpec sample_mask(index_t n_patches, double mask_ratio, Rng &rng) {
    require(n_patches >= 2, "sample_mask: need at least 2 patches");
    require(mask_ratio > 0.0 && mask_ratio < 1.0, "sample_mask: ratio must be in (0, 1)");
    const auto n_visible = static_cast<index_t>(std::floor((1.0 - mask_ratio) * static_cast<double>(n_patches) + 0.5));
    require(n_visible >= 1 && n_visible < n_patches, "sample_mask: degenerate ratio after rounding");
    const std::vector<index_t> perm = rng.permutation(n_patches);
    MaskSpec spec;
    spec.n_patches = n_patches;
    spec.mask_ratio = mask_ratio;
    spec.visible_idx.assign(perm.begin(), perm.begin() + n_visible);
    spec.masked_idx.assign(perm.begin() + n_visible, perm.end());
    std::sort(spec.visible_idx.begin(), spec.visible_idx.end());
    std::sort(spec.masked_idx.begin(), spec.masked_idx.end());
    return spec;
}

// Row indices into a cls-prefixed [N+1] sequence that survive masking.
inline std::vector<index_t> visible_row_indices(const MaskSpec &spec) {
    std::vector<index_t> rows;
    rows.reserve(spec.visible_idx.size() + 1);
    rows.push_back(0);
    for (index_t v : spec.visible_idx) rows.push_back(v + 1);
    return rows;
}

// Restoration layout: slot 0 is cls; slot i+1 reads the encoded token when
// i is visible, otherwise a shared extra row appended after the encoder
// output (the mask token). Gathering from [z_enc ; mask_token] with these
// indices rebuilds the full sequence in one step.
inline std::vector<index_t> restore_row_indices(const MaskSpec &spec) {
    std::vector<index_t> rows(static_cast<std::size_t>(spec.n_patches) + 1);
    const auto mask_row = static_cast<index_t>(spec.visible_idx.size()) + 1;
    rows[0] = 0;
    for (index_t i = 0; i < spec.n_patches; ++i) rows[static_cast<std::size_t>(i) + 1] = mask_row;
    for (std::size_t k = 0; k < spec.visible_idx.size(); ++k)
        rows[static_cast<std::size_t>(spec.visible_idx[k]) + 1] = static_cast<index_t>(k) + 1;
    return rows;
}

template <class Real>
TokenSequence<Real> apply_mask(const TokenSequence<Real> &seq, const MaskSpec &spec) {
    require(seq.tokens.rows() == spec.n_patches + 1, "apply_mask: expected cls + N tokens");
    require(!seq.positions.empty() && seq.positions[0].is_cls, "apply_mask: cls must sit at slot 0");
    spec.validate();
    const std::vector<index_t> rows = visible_row_indices(spec);
    TokenSequence<Real> out;
    out.tokens = Matrix<Real>(static_cast<index_t>(rows.size()), seq.tokens.cols());
    out.positions.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const index_t src = rows[k];
        for (index_t j = 0; j < seq.tokens.cols(); ++j) out.tokens(static_cast<index_t>(k), j) = seq.tokens(src, j);
        out.positions[k] = seq.positions[static_cast<std::size_t>(src)];
    }
    return out;
}

template <class Real>
TokenSequence<Real> restore_with_mask_token(const TokenSequence<Real> &z_enc, const MaskSpec &spec,
                                            const Matrix<Real> &mask_token, const PatchConfig &cfg) {
    require(mask_token.rows() == 1 && mask_token.cols() == z_enc.tokens.cols(), "restore: mask token must be [1 x d]");
    require(z_enc.tokens.rows() == static_cast<index_t>(spec.visible_idx.size()) + 1,
            "restore: sequence length does not match mask spec");
    spec.validate();
    Matrix<Real> pool(z_enc.tokens.rows() + 1, z_enc.tokens.cols());
    for (index_t i = 0; i < z_enc.tokens.rows(); ++i)
        for (index_t j = 0; j < pool.cols(); ++j) pool(i, j) = z_enc.tokens(i, j);
    for (index_t j = 0; j < pool.cols(); ++j) pool(z_enc.tokens.rows(), j) = mask_token(0, j);

    const std::vector<index_t> rows = restore_row_indices(spec);
    TokenSequence<Real> out;
    out.tokens = Matrix<Real>(spec.n_patches + 1, pool.cols());
    out.positions.resize(static_cast<std::size_t>(spec.n_patches) + 1);
    out.positions[0] = GridPos{0, 0, true};
    const std::vector<GridPos> grid = grid_positions(cfg);
    for (index_t i = 0; i <= spec.n_patches; ++i) {
        for (index_t j = 0; j < pool.cols(); ++j) out.tokens(i, j) = pool(rows[static_cast<std::size_t>(i)], j);
        if (i > 0) out.positions[static_cast<std::size_t>(i)] = grid[static_cast<std::size_t>(i) - 1];
    }
    return out;
}

} // namespace ampp
