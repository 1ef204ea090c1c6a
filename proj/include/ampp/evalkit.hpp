// Copyright 2025 the ampp authors
// Frozen-feature evaluation: chunked feature extraction, a 1-hidden-layer
// MLP probe with a small lr grid, accuracy / mAP metrics, and the
// min-max aggregated score over tasks.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "ampp/autodiff.hpp"
#include "ampp/common.hpp"
#include "ampp/dsp.hpp"
#include "ampp/io.hpp"
#include "ampp/matrix.hpp"
#include "ampp/model.hpp"
#include "ampp/rng.hpp"
#include "ampp/trainer.hpp"

namespace ampp {

// ─── features ────────────────────────────────────────────────────────────

// Consecutive non-overlapping 2-s chunks (final chunk zero-padded), each
// encoded with every patch visible; cls is dropped, patch tokens are
// averaged, then chunk means are averaged. No randomness anywhere.
inline Matrix<float> extract_features(const ModelParams<float> &params, const Waveform &w,
                                      const MelConfig &mel = MelConfig{}) {
    require(!w.samples.empty(), "extract_features: empty waveform");
    require(w.sample_rate == mel.sample_rate, "extract_features: sample rate mismatch");
    const index_t n = static_cast<index_t>(w.samples.size());
    const index_t n_chunks = (n + kCropSamples - 1) / kCropSamples;
    const index_t d = params.cfg.d_model;
    const index_t n_patches = params.cfg.n_patches();
    Matrix<float> acc(1, d);
    for (index_t c = 0; c < n_chunks; ++c) {
        Waveform chunk;
        chunk.sample_rate = w.sample_rate;
        chunk.samples.assign(static_cast<std::size_t>(kCropSamples), 0.0f);
        const index_t lo = c * kCropSamples;
        const index_t hi = std::min(n, lo + kCropSamples);
        std::copy(w.samples.begin() + lo, w.samples.begin() + hi, chunk.samples.begin());
        const Matrix<float> spect = logmel(chunk, mel);
        const Matrix<float> z = encode_all(params, spect); // [N+1 x d]
        for (index_t j = 0; j < d; ++j) {
            float s = 0.0f;
            for (index_t i = 1; i <= n_patches; ++i) s += z(i, j);
            acc(0, j) += s / static_cast<float>(n_patches);
        }
    }
    for (index_t j = 0; j < d; ++j) acc(0, j) /= static_cast<float>(n_chunks);
    return acc;
}

inline Matrix<float> extract_feature_matrix(const ModelParams<float> &params, const std::vector<Waveform> &clips,
                                            const MelConfig &mel = MelConfig{}) {
    require(!clips.empty(), "extract_feature_matrix: no clips");
    Matrix<float> out(static_cast<index_t>(clips.size()), params.cfg.d_model);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const Matrix<float> f = extract_features(params, clips[i], mel);
        for (index_t j = 0; j < out.cols(); ++j) out(static_cast<index_t>(i), j) = f(0, j);
    }
    return out;
}

// ─── probe ───────────────────────────────────────────────────────────────

struct ProbeConfig {
    index_t hidden = 1024;
    std::vector<double> lr_grid = {1e-3, 3.2e-4, 1e-4};
    index_t epochs = 40;
    index_t batch_size = 32;
    double val_fraction = 0.2;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
};

struct Probe {
    Matrix<float> w1, b1; // [d x hidden], [1 x hidden]
    Matrix<float> w2, b2; // [hidden x classes], [1 x classes]
    Matrix<float> mu, sd; // [1 x d] train-split standardization; empty = identity

    index_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

inline Matrix<float> probe_logits(const Probe &p, const Matrix<float> &feats) {
    Matrix<float> x = feats;
    if (p.mu.size() > 0) {
        require(p.mu.cols() == feats.cols() && p.sd.cols() == feats.cols(), "probe_logits: stats width mismatch");
        for (index_t i = 0; i < x.rows(); ++i)
            for (index_t j = 0; j < x.cols(); ++j) x(i, j) = (x(i, j) - p.mu(0, j)) / p.sd(0, j);
    }
    Tape<float> tp;
    auto h = tp.relu(tp.add_row(tp.matmul(tp.input(x), tp.input(p.w1)), tp.input(p.b1)));
    return tp.val(tp.add_row(tp.matmul(h, tp.input(p.w2)), tp.input(p.b2)));
}

inline double probe_accuracy(const Probe &p, const Matrix<float> &feats, const std::vector<index_t> &labels) {
    require(static_cast<index_t>(labels.size()) == feats.rows(), "probe_accuracy: label count");
    const Matrix<float> logits = probe_logits(p, feats);
    index_t hits = 0;
    for (index_t i = 0; i < logits.rows(); ++i) {
        index_t best = 0;
        for (index_t j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        if (best == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

// AP over one ranking: mean of precision@k at each positive. Ties break
// by original order (stable sort), so results are deterministic.
inline double average_precision(const std::vector<double> &scores, const std::vector<int> &relevant) {
    require(scores.size() == relevant.size() && !scores.empty(), "average_precision: size mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    index_t n_pos = 0, hits = 0;
    for (int r : relevant) n_pos += r != 0;
    require(n_pos > 0, "average_precision: no positives");
    double ap = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (relevant[order[k]] != 0) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return ap / static_cast<double>(n_pos);
}

// Mean AP over labels; labels with no positive examples are skipped.
inline double mean_average_precision(const Matrix<float> &scores, const Matrix<float> &labels01) {
    require(scores.same_shape(labels01), "mean_average_precision: shape mismatch");
    double sum = 0.0;
    index_t used = 0;
    for (index_t j = 0; j < scores.cols(); ++j) {
        std::vector<double> s(static_cast<std::size_t>(scores.rows()));
        std::vector<int> r(static_cast<std::size_t>(scores.rows()));
        index_t n_pos = 0;
        for (index_t i = 0; i < scores.rows(); ++i) {
            s[static_cast<std::size_t>(i)] = scores(i, j);
            r[static_cast<std::size_t>(i)] = labels01(i, j) > 0.5f;
            n_pos += r[static_cast<std::size_t>(i)];
        }
        if (n_pos == 0) continue;
        sum += average_precision(s, r);
        ++used;
    }
    require(used > 0, "mean_average_precision: no label has positives");
    return sum / static_cast<double>(used);
}

inline double probe_map(const Probe &p, const Matrix<float> &feats, const Matrix<float> &labels01) {
    return mean_average_precision(probe_logits(p, feats), labels01);
}

namespace detail {

struct ProbeTrainData {
    const Matrix<float> &feats;
    const std::vector<index_t> &labels;
    index_t classes;
};

inline Probe init_probe(index_t d, index_t hidden, index_t classes, Rng &rng) {
    Probe p;
    p.w1 = Matrix<float>(d, hidden);
    p.b1 = Matrix<float>(1, hidden);
    p.w2 = Matrix<float>(hidden, classes);
    p.b2 = Matrix<float>(1, classes);
    init_tensor(p.w1, TensorRole::kWeight, rng);
    init_tensor(p.w2, TensorRole::kWeight, rng);
    return p;
}

inline Matrix<float> gather_feat_rows(const Matrix<float> &feats, const std::vector<index_t> &rows) {
    Matrix<float> out(static_cast<index_t>(rows.size()), feats.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (index_t j = 0; j < feats.cols(); ++j) out(static_cast<index_t>(i), j) = feats(rows[i], j);
    return out;
}

inline Probe fit_probe(const ProbeTrainData &data, const std::vector<index_t> &train_rows, double lr,
                       const ProbeConfig &cfg, Rng rng) {
    Probe p = init_probe(data.feats.cols(), cfg.hidden, data.classes, rng);
    Matrix<float> m1(p.w1.rows(), p.w1.cols()), v1(p.w1.rows(), p.w1.cols());
    Matrix<float> mb1(1, cfg.hidden), vb1(1, cfg.hidden);
    Matrix<float> m2(p.w2.rows(), p.w2.cols()), v2(p.w2.rows(), p.w2.cols());
    Matrix<float> mb2(p.b2.rows(), p.b2.cols()), vb2(p.b2.rows(), p.b2.cols());
    index_t t = 0;
    std::vector<index_t> order = train_rows;
    for (index_t e = 0; e < cfg.epochs; ++e) {
        // In-epoch shuffle keyed to the probe rng keeps runs seed-deterministic.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_u64(i))]);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<index_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(stop));
            std::vector<index_t> batch_labels;
            for (index_t r : rows) batch_labels.push_back(data.labels[static_cast<std::size_t>(r)]);
            Tape<float> tp;
            auto w1 = tp.input(p.w1, true), b1 = tp.input(p.b1, true);
            auto w2 = tp.input(p.w2, true), b2 = tp.input(p.b2, true);
            auto x = tp.input(gather_feat_rows(data.feats, rows));
            auto h = tp.relu(tp.add_row(tp.matmul(x, w1), b1));
            auto logits = tp.add_row(tp.matmul(h, w2), b2);
            auto loss = tp.softmax_cross_entropy(logits, batch_labels);
            tp.backward(loss);
            ++t;
            const auto flr = static_cast<float>(lr);
            const auto wd = static_cast<float>(cfg.weight_decay);
            adamw_update(p.w1, tp.grad(w1), m1, v1, t, flr, 0.9f, 0.95f, 1e-8f, wd);
            adamw_update(p.b1, tp.grad(b1), mb1, vb1, t, flr, 0.9f, 0.95f, 1e-8f, 0.0f);
            adamw_update(p.w2, tp.grad(w2), m2, v2, t, flr, 0.9f, 0.95f, 1e-8f, wd);
            adamw_update(p.b2, tp.grad(b2), mb2, vb2, t, flr, 0.9f, 0.95f, 1e-8f, 0.0f);
        }
    }
    return p;
}

} // namespace detail

struct ProbeResult {
    Probe probe;
    double val_metric = 0.0;
    double best_lr = 0.0;
};

// Grid over lr_grid, winner by validation accuracy (first grid entry wins
// ties). The split and every draw derive from cfg.seed.
inline ProbeResult train_probe(const Matrix<float> &feats, const std::vector<index_t> &labels, index_t classes,
                               const ProbeConfig &cfg) {
    const index_t n = feats.rows();
    require(static_cast<index_t>(labels.size()) == n, "train_probe: label count mismatch");
    require(classes >= 2, "train_probe: need at least 2 classes");
    require(n >= classes, "train_probe: need at least one example per class");
    require(!cfg.lr_grid.empty(), "train_probe: empty lr grid");
    std::vector<bool> seen(static_cast<std::size_t>(classes), false);
    for (index_t y : labels) {
        require(0 <= y && y < classes, "train_probe: label out of range");
        seen[static_cast<std::size_t>(y)] = true;
    }
    index_t distinct = 0;
    for (bool b : seen) distinct += b;
    require(distinct >= 2, "train_probe: degenerate labels (single class present)");

    Rng split_rng(cfg.seed);
    std::vector<index_t> order = split_rng.permutation(n);
    const index_t n_val = std::max<index_t>(1, static_cast<index_t>(std::llround(cfg.val_fraction * static_cast<double>(n))));
    require(n_val < n, "train_probe: validation split leaves no training data");
    std::vector<index_t> val_rows(order.begin(), order.begin() + n_val);
    std::vector<index_t> train_rows(order.begin() + n_val, order.end());

    const Matrix<float> val_feats = detail::gather_feat_rows(feats, val_rows);
    std::vector<index_t> val_labels;
    for (index_t r : val_rows) val_labels.push_back(labels[static_cast<std::size_t>(r)]);

    // Standardize per dimension with train-split statistics; the stats ride
    // along in the probe so later calls see raw features.
    Matrix<float> mu(1, feats.cols()), sd(1, feats.cols());
    for (index_t j = 0; j < feats.cols(); ++j) {
        double m = 0.0;
        for (index_t r : train_rows) m += feats(r, j);
        m /= static_cast<double>(train_rows.size());
        double v = 0.0;
        for (index_t r : train_rows) {
            const double d = feats(r, j) - m;
            v += d * d;
        }
        v /= static_cast<double>(train_rows.size());
        mu(0, j) = static_cast<float>(m);
        sd(0, j) = static_cast<float>(std::sqrt(v + 1e-8));
    }
    Matrix<float> zfeats = feats;
    for (index_t i = 0; i < zfeats.rows(); ++i)
        for (index_t j = 0; j < zfeats.cols(); ++j) zfeats(i, j) = (zfeats(i, j) - mu(0, j)) / sd(0, j);

    detail::ProbeTrainData data{zfeats, labels, classes};
    ProbeResult best;
    bool have = false;
    for (double lr : cfg.lr_grid) {
        Probe p = detail::fit_probe(data, train_rows, lr, cfg, Rng(cfg.seed + 1));
        p.mu = mu;
        p.sd = sd;
        const double acc = probe_accuracy(p, val_feats, val_labels);
        if (!have || acc > best.val_metric) {
            best = ProbeResult{std::move(p), acc, lr};
            have = true;
        }
    }
    return best;
}

// ─── aggregated score ────────────────────────────────────────────────────

struct ScoreTable {
    std::vector<std::string> models;
    std::vector<std::string> tasks;
    Matrix<double> x; // [models x tasks]
};

// s(m) = mean over tasks of (x - min) / (max - min) * 100; a task where
// every model ties contributes 100 to each.
inline std::vector<double> aggregate_score(const ScoreTable &table) {
    const index_t nm = static_cast<index_t>(table.models.size());
    const index_t nt = static_cast<index_t>(table.tasks.size());
    require(nm >= 1 && nt >= 1, "aggregate_score: empty table");
    require(table.x.rows() == nm && table.x.cols() == nt, "aggregate_score: matrix shape mismatch");
    require(table.x.all_finite(), "aggregate_score: non-finite metric");
    std::vector<double> s(static_cast<std::size_t>(nm), 0.0);
    for (index_t t = 0; t < nt; ++t) {
        double lo = table.x(0, t), hi = table.x(0, t);
        for (index_t m = 1; m < nm; ++m) {
            lo = std::min(lo, table.x(m, t));
            hi = std::max(hi, table.x(m, t));
        }
        for (index_t m = 0; m < nm; ++m) {
            const double norm = hi > lo ? (table.x(m, t) - lo) / (hi - lo) * 100.0 : 100.0;
            s[static_cast<std::size_t>(m)] += norm;
        }
    }
    for (double &v : s) v /= static_cast<double>(nt);
    return s;
}

// CSV rows model,task,metric_value (header optional); every (model, task)
// cell must be present exactly once.
inline ScoreTable read_score_csv(const std::string &path) {
    const auto rows = read_csv(path, false);
    ScoreTable table;
    std::map<std::string, index_t> mi, ti;
    std::vector<std::tuple<std::string, std::string, double>> cells;
    for (const auto &row : rows) {
        require(row.size() == 3, "read_score_csv: expected model,task,metric_value rows");
        if (row[0] == "model" && row[1] == "task") continue; // header
        double value = 0.0;
        try {
            value = std::stod(row[2]);
        } catch (const std::exception &) {
            throw Error("read_score_csv: bad metric value '" + row[2] + "'");
        }
        if (mi.emplace(row[0], static_cast<index_t>(table.models.size())).second) table.models.push_back(row[0]);
        if (ti.emplace(row[1], static_cast<index_t>(table.tasks.size())).second) table.tasks.push_back(row[1]);
        cells.emplace_back(row[0], row[1], value);
    }
    require(!cells.empty(), "read_score_csv: no data rows in " + path);
    table.x = Matrix<double>(static_cast<index_t>(table.models.size()), static_cast<index_t>(table.tasks.size()));
    Matrix<double> filled(table.x.rows(), table.x.cols());
    for (const auto &[m, t, v] : cells) {
        const index_t r = mi.at(m), c = ti.at(t);
        require(filled(r, c) == 0.0, "read_score_csv: duplicate cell " + m + "," + t);
        filled(r, c) = 1.0;
        table.x(r, c) = v;
    }
    for (index_t r = 0; r < filled.rows(); ++r)
        for (index_t c = 0; c < filled.cols(); ++c)
            require(filled(r, c) == 1.0,
                    "read_score_csv: missing cell " + table.models[static_cast<std::size_t>(r)] + "," +
                        table.tasks[static_cast<std::size_t>(c)]);
    return table;
}

inline void write_score_csv(const std::string &path, const std::vector<std::string> &models,
                            const std::vector<double> &s) {
    require(models.size() == s.size(), "write_score_csv: size mismatch");
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_score_csv: cannot open " + path);
    f << "model,s_m\n";
    char buf[64];
    for (std::size_t i = 0; i < models.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.4f", s[i]);
        f << models[i] << ',' << buf << '\n';
    }
    require(f.good(), "write_score_csv: short write");
}

} // namespace ampp
