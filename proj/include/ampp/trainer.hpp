// Copyright 2025 the ampp authors
// AdamW with linear-warmup + cosine-decay scheduling, the pretraining
// loop, checkpoint persistence, and finite-difference gradient checks.
// Training is f32 end to end, so checkpoints are lossless and resume is
// bit-exact; gradient checks run in f64.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ampp/common.hpp"
#include "ampp/matrix.hpp"
#include "ampp/model.hpp"
#include "ampp/rng.hpp"

namespace ampp {

// ─── schedule ────────────────────────────────────────────────────────────

struct OptimConfig {
    double peak_lr = 0.0; // 0 selects the default 3e-4 * batch_size / 1024
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    index_t batch_size = 32;
    index_t epochs = 100;
    index_t warmup_epochs = 10;
    index_t steps_per_epoch = 1;

    void validate() const {
        require(batch_size >= 1 && epochs >= 1 && steps_per_epoch >= 1, "OptimConfig: counts must be positive");
        require(warmup_epochs >= 0 && warmup_epochs < epochs, "OptimConfig: need warmup_epochs < epochs");
        require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, "OptimConfig: betas in (0, 1)");
        require(eps > 0 && weight_decay >= 0, "OptimConfig: eps > 0, weight_decay >= 0");
    }
    double resolved_peak_lr() const {
        return peak_lr > 0 ? peak_lr : 3e-4 * static_cast<double>(batch_size) / 1024.0;
    }
    index_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }
    index_t total_steps() const { return epochs * steps_per_epoch; }
};

// Linear ramp to peak over W steps, then cosine decay reaching exactly 0
// at the final step T.
inline double lr_at(index_t step, const OptimConfig &cfg) {
    cfg.validate();
    require(step >= 0, "lr_at: negative step");
    const index_t w = cfg.warmup_steps();
    const index_t t = cfg.total_steps();
    const double peak = cfg.resolved_peak_lr();
    if (step < w) return peak * static_cast<double>(step) / static_cast<double>(w);
    if (step >= t) return 0.0;
    const double frac = static_cast<double>(step - w) / static_cast<double>(t - w);
    return peak * 0.5 * (1.0 + std::cos(M_PI * frac));
}

// ─── optimizer ───────────────────────────────────────────────────────────

template <class Real>
struct OptimState {
    std::vector<Matrix<Real>> m, v; // plan order
    index_t step = 0;
};

template <class Real>
OptimState<Real> init_optim_state(const ModelConfig &cfg) {
    OptimState<Real> s;
    for (const TensorSpec &t : param_plan(cfg)) {
        s.m.emplace_back(t.rows, t.cols);
        s.v.emplace_back(t.rows, t.cols);
    }
    return s;
}

// One decoupled-decay Adam update on a single tensor; t is 1-based.
template <class Real>
void adamw_update(Matrix<Real> &p, const Matrix<Real> &g, Matrix<Real> &m, Matrix<Real> &v, index_t t, Real lr,
                  Real beta1, Real beta2, Real eps, Real wd) {
    const Real c1 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const Real c2 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    for (index_t i = 0; i < p.size(); ++i) {
        const Real gi = g.data()[i];
        m.data()[i] = beta1 * m.data()[i] + (Real(1) - beta1) * gi;
        v.data()[i] = beta2 * v.data()[i] + (Real(1) - beta2) * gi * gi;
        const Real mhat = m.data()[i] / c1;
        const Real vhat = v.data()[i] / c2;
        p.data()[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.data()[i]);
    }
}

// Weight decay touches 2-D weight matrices only; LN parameters, biases,
// and the cls/mask tokens are exempt.
template <class Real>
void adamw_step(ModelParams<Real> &params, const std::vector<Matrix<Real>> &grads, OptimState<Real> &state,
                double lr, const OptimConfig &cfg) {
    std::size_t k = 0;
    const index_t t = state.step + 1;
    params.for_each_tensor([&](const std::string &name, Matrix<Real> &p, TensorRole role) {
        require(k < grads.size(), "adamw_step: gradient list shorter than plan");
        const Matrix<Real> &g = grads[k];
        require(g.same_shape(p), "adamw_step: gradient shape mismatch at " + name);
        require(g.all_finite(), "adamw_step: non-finite gradient in " + name);
        const Real wd = role == TensorRole::kWeight ? static_cast<Real>(cfg.weight_decay) : Real(0);
        adamw_update(p, g, state.m[k], state.v[k], t, static_cast<Real>(lr), static_cast<Real>(cfg.beta1),
                     static_cast<Real>(cfg.beta2), static_cast<Real>(cfg.eps), wd);
        ++k;
    });
    require(k == grads.size(), "adamw_step: gradient list longer than plan");
    state.step = t;
}

// ─── batch gradients ─────────────────────────────────────────────────────

template <class Real>
struct BatchResult {
    std::vector<Matrix<Real>> grads; // plan order, averaged over the batch
    double mean_loss = 0.0;
};

// Per-sample graphs are independent; gradients reduce in sample order, so
// the result is bit-identical for any thread count.
template <class Real>
BatchResult<Real> batch_gradients(const ModelParams<Real> &params, const std::vector<const Matrix<Real> *> &batch,
                                  const std::vector<MaskSpec> &specs, index_t threads) {
    require(!batch.empty() && batch.size() == specs.size(), "batch_gradients: batch/spec mismatch");
    const std::size_t n = batch.size();
    std::vector<std::vector<Matrix<Real>>> sample_grads(n);
    std::vector<Real> sample_loss(n, Real(0));
    auto run_sample = [&](std::size_t i) {
        Tape<Real> tp;
        ModelVars<Real> vars = register_model(tp, params, true);
        PretrainGraph<Real> g = pretrain_graph(tp, vars, params, *batch[i], specs[i]);
        tp.backward(g.loss);
        sample_loss[i] = tp.val(g.loss)(0, 0);
        std::vector<Matrix<Real>> grads;
        for (auto var : plan_order_vars(vars)) grads.push_back(tp.grad(var));
        sample_grads[i] = std::move(grads);
    };
    const std::size_t workers = static_cast<std::size_t>(std::max<index_t>(1, threads));
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) run_sample(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, n); ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < n; i += std::min(workers, n)) run_sample(i);
            });
        for (auto &th : pool) th.join();
    }
    BatchResult<Real> out;
    out.grads = std::move(sample_grads[0]);
    double loss_sum = static_cast<double>(sample_loss[0]);
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t k = 0; k < out.grads.size(); ++k) add_in_place(out.grads[k], sample_grads[i][k]);
        sample_grads[i].clear();
        loss_sum += static_cast<double>(sample_loss[i]);
    }
    const Real inv = Real(1) / static_cast<Real>(n);
    for (auto &g : out.grads)
        for (index_t i = 0; i < g.size(); ++i) g.data()[i] *= inv;
    out.mean_loss = loss_sum / static_cast<double>(n);
    return out;
}

// ─── checkpoints ─────────────────────────────────────────────────────────

inline constexpr char kCheckpointMagic[4] = {'A', 'M', 'P', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json model_config_json(const ModelConfig &c) {
    return nlohmann::json{{"d_model", c.d_model},         {"enc_layers", c.enc_layers},
                          {"enc_heads", c.enc_heads},     {"d_dec", c.d_dec},
                          {"dec_layers", c.dec_layers},   {"dec_heads", c.dec_heads},
                          {"input_t", c.input_t},         {"input_f", c.input_f},
                          {"patch_t", c.patch_t},         {"patch_f", c.patch_f},
                          {"mask_ratio", c.mask_ratio},   {"rope_encoder", c.rope_encoder},
                          {"rope_decoder", c.rope_decoder}, {"swiglu_branch_norm", c.swiglu_branch_norm},
                          {"preset", c.preset}};
}

inline ModelConfig model_config_from_json(const nlohmann::json &j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<index_t>();
    c.enc_layers = j.at("enc_layers").get<index_t>();
    c.enc_heads = j.at("enc_heads").get<index_t>();
    c.d_dec = j.at("d_dec").get<index_t>();
    c.dec_layers = j.at("dec_layers").get<index_t>();
    c.dec_heads = j.at("dec_heads").get<index_t>();
    c.input_t = j.at("input_t").get<index_t>();
    c.input_f = j.at("input_f").get<index_t>();
    c.patch_t = j.at("patch_t").get<index_t>();
    c.patch_f = j.at("patch_f").get<index_t>();
    c.mask_ratio = j.at("mask_ratio").get<double>();
    c.rope_encoder = j.at("rope_encoder").get<bool>();
    c.rope_decoder = j.at("rope_decoder").get<bool>();
    c.swiglu_branch_norm = j.at("swiglu_branch_norm").get<bool>();
    c.preset = j.value("preset", std::string("custom"));
    return c;
}

inline nlohmann::json optim_config_json(const OptimConfig &c) {
    return nlohmann::json{{"peak_lr", c.peak_lr},       {"weight_decay", c.weight_decay},
                          {"beta1", c.beta1},           {"beta2", c.beta2},
                          {"eps", c.eps},               {"batch_size", c.batch_size},
                          {"epochs", c.epochs},         {"warmup_epochs", c.warmup_epochs},
                          {"steps_per_epoch", c.steps_per_epoch}};
}

inline OptimConfig optim_config_from_json(const nlohmann::json &j) {
    OptimConfig c;
    c.peak_lr = j.at("peak_lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.batch_size = j.at("batch_size").get<index_t>();
    c.epochs = j.at("epochs").get<index_t>();
    c.warmup_epochs = j.at("warmup_epochs").get<index_t>();
    c.steps_per_epoch = j.at("steps_per_epoch").get<index_t>();
    return c;
}

// Layout: "AMPP" | u32 version | u32 manifest length | manifest JSON |
// raw little-endian f32 blob. The blob holds every trainable tensor once,
// then the Adam moments under adam_m./adam_v. prefixes.
inline void save_checkpoint(const std::string &path, const ModelParams<float> &params,
                            const OptimState<float> &state, const Rng &rng, const OptimConfig &ocfg) {
    const std::vector<TensorSpec> plan = param_plan(params.cfg);
    require(plan.size() == state.m.size() && plan.size() == state.v.size(), "save_checkpoint: state/plan mismatch");

    nlohmann::json tensors = nlohmann::json::array();
    std::vector<const Matrix<float> *> blobs;
    std::uint64_t offset = 0;
    auto add_entry = [&](const std::string &name, const Matrix<float> &m) {
        const std::uint64_t nbytes = static_cast<std::uint64_t>(m.size()) * sizeof(float);
        tensors.push_back(nlohmann::json{{"name", name},
                                         {"dtype", "f32"},
                                         {"shape", {m.rows(), m.cols()}},
                                         {"offset", offset},
                                         {"nbytes", nbytes}});
        blobs.push_back(&m);
        offset += nbytes;
    };
    std::size_t k = 0;
    params.for_each_tensor([&](const std::string &name, const Matrix<float> &m, TensorRole) {
        require(m.rows() == plan[k].rows && m.cols() == plan[k].cols, "save_checkpoint: plan drift at " + name);
        add_entry(name, m);
        ++k;
    });
    k = 0;
    params.for_each_tensor([&](const std::string &name, const Matrix<float> &, TensorRole) {
        add_entry("adam_m." + name, state.m[k]);
        ++k;
    });
    k = 0;
    params.for_each_tensor([&](const std::string &name, const Matrix<float> &, TensorRole) {
        add_entry("adam_v." + name, state.v[k]);
        ++k;
    });

    nlohmann::json manifest{{"format", "ampp-checkpoint"},
                            {"step", state.step},
                            {"rng", rng.serialize()},
                            {"model_config", model_config_json(params.cfg)},
                            {"optim_config", optim_config_json(ocfg)},
                            {"tensors", std::move(tensors)}};
    const std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, 4);
    const std::uint32_t header[2] = {kCheckpointVersion, static_cast<std::uint32_t>(mtext.size())};
    f.write(reinterpret_cast<const char *>(header), 8);
    f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const Matrix<float> *m : blobs)
        f.write(reinterpret_cast<const char *>(m->data()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m->size())));
    require(f.good(), "save_checkpoint: short write to " + path);
}

struct LoadedCheckpoint {
    ModelParams<float> params;
    OptimState<float> state;
    Rng rng;
    OptimConfig ocfg;
    index_t step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string &path, const ModelConfig *expected = nullptr) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    require(f.gcount() == 4 && std::equal(magic, magic + 4, kCheckpointMagic), "load_checkpoint: bad magic in " + path);
    std::uint32_t header[2];
    f.read(reinterpret_cast<char *>(header), 8);
    require(f.gcount() == 8, "load_checkpoint: truncated header");
    require(header[0] == kCheckpointVersion,
            "load_checkpoint: unknown format version " + std::to_string(header[0]));
    std::string mtext(header[1], '\0');
    f.read(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    require(f.gcount() == static_cast<std::streamsize>(mtext.size()), "load_checkpoint: truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception &e) {
        throw Error("load_checkpoint: manifest parse failure: " + std::string(e.what()));
    }
    require(manifest.value("format", "") == "ampp-checkpoint", "load_checkpoint: wrong format tag");

    const ModelConfig cfg = model_config_from_json(manifest.at("model_config"));
    if (expected != nullptr) {
        const auto a = param_plan(*expected);
        const auto b = param_plan(cfg);
        require(a.size() == b.size(), "load_checkpoint: tensor count differs from expected config");
        for (std::size_t i = 0; i < a.size(); ++i)
            require(a[i].name == b[i].name && a[i].rows == b[i].rows && a[i].cols == b[i].cols,
                    "load_checkpoint: shape mismatch at " + a[i].name + " (checkpoint " +
                        std::to_string(b[i].rows) + "x" + std::to_string(b[i].cols) + ")");
    }

    LoadedCheckpoint out;
    Rng scratch(0); // placeholder engine; parameters are overwritten below
    out.params = build_model<float>(cfg, scratch);
    out.state = init_optim_state<float>(cfg);
    out.ocfg = optim_config_from_json(manifest.at("optim_config"));
    out.step = manifest.at("step").get<index_t>();
    out.state.step = out.step;
    out.rng = Rng::deserialize(manifest.at("rng").get<std::string>());

    const std::vector<TensorSpec> plan = param_plan(cfg);
    const auto &tensors = manifest.at("tensors");
    require(tensors.size() == 3 * plan.size(), "load_checkpoint: manifest tensor count mismatch");
    std::size_t idx = 0;
    auto read_into = [&](const std::string &want_name, Matrix<float> &dst) {
        const auto &t = tensors.at(idx++);
        require(t.at("name").get<std::string>() == want_name, "load_checkpoint: tensor order mismatch at " + want_name);
        require(t.at("dtype").get<std::string>() == "f32", "load_checkpoint: unsupported dtype at " + want_name);
        const auto shape = t.at("shape");
        require(shape.at(0).get<index_t>() == dst.rows() && shape.at(1).get<index_t>() == dst.cols(),
                "load_checkpoint: shape mismatch at " + want_name);
        const auto nbytes = static_cast<std::streamsize>(t.at("nbytes").get<std::uint64_t>());
        require(nbytes == static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(dst.size())),
                "load_checkpoint: byte count mismatch at " + want_name);
        f.read(reinterpret_cast<char *>(dst.data()), nbytes);
        require(f.gcount() == nbytes, "load_checkpoint: truncated blob at " + want_name);
    };
    out.params.for_each_tensor([&](const std::string &name, Matrix<float> &m, TensorRole) { read_into(name, m); });
    std::size_t k = 0;
    out.params.for_each_tensor([&](const std::string &name, Matrix<float> &, TensorRole) {
        read_into("adam_m." + name, out.state.m[k]);
        ++k;
    });
    k = 0;
    out.params.for_each_tensor([&](const std::string &name, Matrix<float> &, TensorRole) {
        read_into("adam_v." + name, out.state.v[k]);
        ++k;
    });
    return out;
}

// ─── pretraining loop ────────────────────────────────────────────────────

struct PretrainOptions {
    index_t steps = 0;            // 0 runs the full schedule (epochs * steps_per_epoch)
    index_t checkpoint_every = 0; // 0 keeps only the final checkpoint
    std::string out_dir;          // empty disables checkpoints and the CSV log
    index_t threads = 1;
    bool quiet = true;
    // One deterministic mask per dataset sample (seeded by sample index)
    // instead of a fresh mask per slot; turns the run into pure memorization.
    bool fixed_sample_masks = false;
};

struct StepRecord {
    index_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct PretrainResult {
    std::vector<StepRecord> history;
    std::string final_checkpoint;
};

struct TrainerSession {
    ModelParams<float> params;
    OptimState<float> state;
    Rng rng{0};
    OptimConfig ocfg;
};

inline TrainerSession init_session(const ModelConfig &mcfg, const OptimConfig &ocfg, std::uint64_t seed) {
    ocfg.validate();
    TrainerSession s;
    s.rng = Rng(seed);
    s.params = build_model<float>(mcfg, s.rng);
    s.state = init_optim_state<float>(mcfg);
    s.ocfg = ocfg;
    return s;
}

inline TrainerSession resume_session(const std::string &checkpoint_path, const ModelConfig *expected = nullptr) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path, expected);
    TrainerSession s;
    s.params = std::move(ck.params);
    s.state = std::move(ck.state);
    s.rng = ck.rng;
    s.ocfg = ck.ocfg;
    return s;
}

inline std::string checkpoint_path(const std::string &out_dir, index_t step) {
    return out_dir + "/ckpt_step" + std::to_string(step) + ".ampp";
}

// Batches are drawn i.i.d. from the session RNG (sample index then mask,
// per slot, in order), so the serialized RNG state fully determines the
// rest of the run regardless of where training was interrupted.
inline PretrainResult pretrain(TrainerSession &s, const std::vector<Matrix<float>> &data,
                               const PretrainOptions &opts) {
    require(!data.empty(), "pretrain: empty dataset");
    const ModelConfig &mcfg = s.params.cfg;
    for (const auto &d : data)
        require(d.rows() == mcfg.input_t && d.cols() == mcfg.input_f, "pretrain: spectrogram shape mismatch");
    const index_t n_patches = mcfg.n_patches();
    const index_t target_steps = opts.steps > 0 ? opts.steps : s.ocfg.total_steps();

    std::vector<MaskSpec> per_sample;
    if (opts.fixed_sample_masks)
        for (std::size_t i = 0; i < data.size(); ++i) {
            Rng mrng(static_cast<std::uint64_t>(i));
            per_sample.push_back(sample_mask(n_patches, mcfg.mask_ratio, mrng));
        }

    std::ofstream log;
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        const std::string log_path = opts.out_dir + "/train_log.csv";
        const bool fresh = !std::filesystem::exists(log_path) || std::filesystem::file_size(log_path) == 0;
        log.open(log_path, std::ios::app);
        require(log.good(), "pretrain: cannot open " + log_path);
        if (fresh) log << "step,epoch,lr,loss\n";
    }

    PretrainResult result;
    while (s.state.step < target_steps) {
        const index_t step = s.state.step;
        std::vector<const Matrix<float> *> batch;
        std::vector<MaskSpec> specs;
        for (index_t b = 0; b < s.ocfg.batch_size; ++b) {
            const auto pick = static_cast<std::size_t>(s.rng.uniform_u64(data.size()));
            batch.push_back(&data[pick]);
            specs.push_back(opts.fixed_sample_masks ? per_sample[pick]
                                                    : sample_mask(n_patches, mcfg.mask_ratio, s.rng));
        }
        BatchResult<float> br = batch_gradients(s.params, batch, specs, opts.threads);
        const double lr = lr_at(step, s.ocfg);
        adamw_step(s.params, br.grads, s.state, lr, s.ocfg);
        result.history.push_back(StepRecord{step, lr, br.mean_loss});
        if (log.is_open()) {
            log << step << ',' << (step / s.ocfg.steps_per_epoch) << ',' << lr << ',' << br.mean_loss << '\n';
            log.flush();
        }
        if (!opts.out_dir.empty()) {
            const bool periodic = opts.checkpoint_every > 0 && s.state.step % opts.checkpoint_every == 0;
            if (periodic || s.state.step == target_steps) {
                result.final_checkpoint = checkpoint_path(opts.out_dir, s.state.step);
                save_checkpoint(result.final_checkpoint, s.params, s.state, s.rng, s.ocfg);
            }
        }
    }
    return result;
}

// ─── gradient checking ───────────────────────────────────────────────────

struct GradCheckReport {
    struct TensorReport {
        std::string name;
        double max_rel_err = 0.0;
        index_t coords = 0;
    };
    std::vector<TensorReport> tensors;
    double max_rel_err = 0.0;
    index_t total_coords = 0;
    double tolerance = 1e-4;
    bool pass = false;
};

// The reduced shape contract: 12 patches (48 x 16 input), width 8, two
// heads, 2 + 2 layers. Small enough for f64 central differences.
inline ModelConfig grad_check_config(bool rope_encoder, bool rope_decoder) {
    ModelConfig cfg;
    cfg.preset = "gradcheck";
    cfg.d_model = 8;
    cfg.enc_layers = 2;
    cfg.enc_heads = 2;
    cfg.d_dec = 8;
    cfg.dec_layers = 2;
    cfg.dec_heads = 2;
    cfg.input_t = 48;
    cfg.input_f = 16;
    cfg.rope_encoder = rope_encoder;
    cfg.rope_decoder = rope_decoder;
    cfg.validate();
    return cfg;
}

template <class Real>
Real pretrain_loss_value(const ModelParams<Real> &params, const Matrix<Real> &spect, const MaskSpec &spec) {
    Tape<Real> tp;
    ModelVars<Real> vars = register_model(tp, params, false);
    return tp.val(pretrain_graph(tp, vars, params, spect, spec).loss)(0, 0);
}

// Central differences (step 1e-4) against the tape gradients on a fixed
// mask. Coordinates with both |analytic| and |numeric| below 1e-7 count
// as agreeing: that is measurement noise for a true-zero gradient.
inline GradCheckReport grad_check(const ModelConfig &cfg, index_t min_coords = 200, double tolerance = 1e-4,
                                  std::uint64_t seed = 1234, const std::string &corrupt_tensor = "") {
    cfg.validate();
    Rng rng(seed);
    ModelParams<double> params = build_model<double>(cfg, rng);
    Matrix<double> spect(cfg.input_t, cfg.input_f);
    for (index_t i = 0; i < spect.size(); ++i) spect.data()[i] = rng.normal();
    const MaskSpec spec = sample_mask(cfg.n_patches(), cfg.mask_ratio, rng);

    std::vector<Matrix<double>> analytic;
    {
        Tape<double> tp;
        ModelVars<double> vars = register_model(tp, params, true);
        PretrainGraph<double> g = pretrain_graph(tp, vars, params, spect, spec);
        tp.backward(g.loss);
        for (auto var : plan_order_vars(vars)) analytic.push_back(tp.grad(var));
    }

    std::vector<std::pair<std::string, Matrix<double> *>> tensors;
    params.for_each_tensor(
        [&](const std::string &name, Matrix<double> &m, TensorRole) { tensors.emplace_back(name, &m); });
    require(tensors.size() == analytic.size(), "grad_check: plan drift");
    if (!corrupt_tensor.empty()) {
        bool found = false;
        for (std::size_t k = 0; k < tensors.size(); ++k)
            if (tensors[k].first == corrupt_tensor) {
                for (index_t i = 0; i < analytic[k].size(); ++i) analytic[k].data()[i] += 1e-2;
                found = true;
            }
        require(found, "grad_check: unknown tensor " + corrupt_tensor);
    }

    const double h = 1e-4;
    const auto per_tensor = static_cast<index_t>((min_coords + static_cast<index_t>(tensors.size()) - 1) /
                                                 static_cast<index_t>(tensors.size()));
    GradCheckReport report;
    report.tolerance = tolerance;
    report.pass = true;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        Matrix<double> &m = *tensors[k].second;
        GradCheckReport::TensorReport tr;
        tr.name = tensors[k].first;
        const index_t picks = std::min<index_t>(m.size(), std::max<index_t>(per_tensor, 1));
        for (index_t c = 0; c < picks; ++c) {
            const auto i = static_cast<index_t>(rng.uniform_u64(static_cast<std::uint64_t>(m.size())));
            const double saved = m.data()[i];
            m.data()[i] = saved + h;
            const double fp = pretrain_loss_value(params, spect, spec);
            m.data()[i] = saved - h;
            const double fm = pretrain_loss_value(params, spect, spec);
            m.data()[i] = saved;
            const double g_fd = (fp - fm) / (2.0 * h);
            const double g_an = analytic[k](i / m.cols(), i % m.cols());
            const double rel = std::abs(g_an - g_fd) / std::max(std::abs(g_fd), 1e-8);
            const bool both_tiny = std::abs(g_an) < 1e-7 && std::abs(g_fd) < 1e-7;
            if (!both_tiny) tr.max_rel_err = std::max(tr.max_rel_err, rel);
            if (!both_tiny && rel >= tolerance) report.pass = false;
            ++tr.coords;
        }
        report.max_rel_err = std::max(report.max_rel_err, tr.max_rel_err);
        report.total_coords += tr.coords;
        report.tensors.push_back(std::move(tr));
    }
    return report;
}

} // namespace ampp
