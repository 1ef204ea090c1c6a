// Copyright 2025 the ampp authors
//
// Command line front end. Every run is reproducible from (config, seed):
// flags override config-file values, AMPP_SEED fills in when --seed is
// absent, and the fully resolved configuration is echoed into the output
// directory. Exit code 2 marks missing or malformed inputs.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "ampp/dsp.hpp"
#include "ampp/evalkit.hpp"
#include "ampp/io.hpp"
#include "ampp/model.hpp"
#include "ampp/synth.hpp"
#include "ampp/trainer.hpp"
#include "ampp/verify.hpp"

namespace ampp::cli {

namespace fs = std::filesystem;

// ─── shared helpers ──────────────────────────────────────────────────────

inline std::vector<std::string> list_wavs(const std::string &dir) {
    std::vector<std::string> out;
    for (const auto &entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".wav") out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::string stem_of(const std::string &path) { return fs::path(path).stem().string(); }

inline void write_text(const std::string &path, const std::string &text) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "cannot open " + path);
    f << text;
    require(f.good(), "short write to " + path);
}

// The echo makes output directories self-describing and re-runnable.
inline void echo_config(CLI::App *sub, const std::string &out_dir) {
    fs::create_directories(out_dir);
    write_text(out_dir + "/config.resolved.ini", sub->config_to_str(true, false));
}

inline int fail_input(const std::string &msg) {
    std::cerr << "error: " << msg << "\n";
    return 2;
}

struct CommonArgs {
    std::string out_dir = "run";
    std::uint64_t seed = 0;
    index_t threads = 1;
};

inline void add_common(CLI::App *sub, CommonArgs &c) {
    sub->add_option("--out", c.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", c.seed, "rng seed (env AMPP_SEED when omitted)")
        ->envname("AMPP_SEED")
        ->capture_default_str();
    sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    sub->set_config("--config", "", "key=value config file; flags take precedence");
    sub->allow_config_extras(false);
}

// ─── pretrain ────────────────────────────────────────────────────────────

struct PretrainArgs {
    CommonArgs common;
    std::string preset = "tiny";
    std::string data_dir;
    std::string resume;
    index_t steps = 0;
    index_t batch = 8;
    index_t epochs = 100;
    index_t warmup_epochs = 10;
    double peak_lr = 0.0;
    double mask_ratio = 0.8;
    index_t dec_dim = 0;    // 0 keeps the preset value
    index_t d_model = 0;    // shape overrides for reduced desk runs
    index_t enc_layers = 0;
    index_t enc_heads = 0;
    index_t dec_layers = -1;
    bool rope_encoder = false;
    bool rope_decoder = false;
    index_t checkpoint_every = 0;
};

inline ModelConfig resolve_model_config(const PretrainArgs &a) {
    ModelConfig cfg = ModelConfig::preset_config(a.preset);
    cfg.mask_ratio = a.mask_ratio;
    cfg.rope_encoder = a.rope_encoder;
    cfg.rope_decoder = a.rope_decoder;
    bool custom = false;
    if (a.d_model != 0) {
        cfg.d_model = a.d_model;
        cfg.enc_heads = std::max<index_t>(1, a.d_model / 64);
        custom = true;
    }
    if (a.enc_heads != 0) {
        cfg.enc_heads = a.enc_heads;
        custom = true;
    }
    if (a.enc_layers != 0) {
        cfg.enc_layers = a.enc_layers;
        custom = true;
    }
    if (a.dec_layers >= 0) {
        cfg.dec_layers = a.dec_layers;
        custom = true;
    }
    if (a.dec_dim != 0) {
        cfg.d_dec = a.dec_dim;
        cfg.dec_heads = std::max<index_t>(1, a.dec_dim / 64);
        custom = custom || a.dec_dim != ModelConfig::preset_config(a.preset).d_dec;
    }
    if (custom) cfg.preset = "custom";
    cfg.validate();
    return cfg;
}

inline void report_param_count(const ModelConfig &cfg) {
    const index_t n = param_count(cfg, CountScope::kEncoder);
    std::printf("encoder parameters: %lld (%.1fM), full model: %lld\n", static_cast<long long>(n),
                static_cast<double>(n) / 1e6, static_cast<long long>(param_count(cfg, CountScope::kFull)));
    for (int i = 0; i < 3; ++i)
        if (cfg.preset == kRefPresets[i]) {
            const double dev = std::abs(static_cast<double>(n) - kRefEncoderParams[i]) / kRefEncoderParams[i];
            if (dev > 0.015)
                std::printf("warning: %s encoder parameter count deviates %.2f%% from the reference %.1fM\n",
                            cfg.preset.c_str(), dev * 100.0, kRefEncoderParams[i] / 1e6);
        }
}

// Crops come from a stream separate from the training rng so that a
// resumed run rebuilds the identical dataset from the same seed.
inline std::vector<Matrix<float>> load_spectrograms(const std::vector<std::string> &wavs, std::uint64_t seed) {
    Rng crop_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Matrix<float>> out;
    out.reserve(wavs.size());
    for (const auto &path : wavs) {
        const Waveform w = load_wav(path);
        out.push_back(logmel(crop_2s(w, crop_rng)));
    }
    return out;
}

inline int cmd_pretrain(CLI::App *sub, const PretrainArgs &a) {
    if (!fs::is_directory(a.data_dir)) return fail_input("data directory not found: " + a.data_dir);
    const std::vector<std::string> wavs = list_wavs(a.data_dir);
    if (wavs.empty()) return fail_input("no .wav files in data directory: " + a.data_dir);
    if (!a.resume.empty() && !fs::exists(a.resume)) return fail_input("checkpoint not found: " + a.resume);

    const ModelConfig mcfg = resolve_model_config(a);
    OptimConfig ocfg;
    ocfg.batch_size = a.batch;
    ocfg.epochs = a.epochs;
    ocfg.warmup_epochs = a.warmup_epochs;
    ocfg.peak_lr = a.peak_lr;
    ocfg.steps_per_epoch = std::max<index_t>(1, static_cast<index_t>(wavs.size()) / a.batch);
    ocfg.validate();
    report_param_count(mcfg);

    const std::vector<Matrix<float>> data = load_spectrograms(wavs, a.common.seed);
    std::printf("dataset: %zu clips from %s\n", wavs.size(), a.data_dir.c_str());

    TrainerSession session =
        a.resume.empty() ? init_session(mcfg, ocfg, a.common.seed) : resume_session(a.resume, &mcfg);
    PretrainOptions opts;
    opts.steps = a.steps;
    opts.checkpoint_every = a.checkpoint_every;
    opts.out_dir = a.common.out_dir;
    opts.threads = a.common.threads;
    opts.quiet = false;
    fs::create_directories(a.common.out_dir);
    const PretrainResult result = pretrain(session, data, opts);
    if (!result.history.empty())
        std::printf("done: %zu steps, first loss %.6f, final loss %.6f\n", result.history.size(),
                    result.history.front().loss, result.history.back().loss);
    std::printf("final checkpoint: %s\n", result.final_checkpoint.c_str());
    echo_config(sub, a.common.out_dir);
    return 0;
}

// ─── extract ─────────────────────────────────────────────────────────────

struct ExtractArgs {
    CommonArgs common;
    std::string checkpoint;
    std::string data_dir;
};

inline int cmd_extract(const ExtractArgs &a, CLI::App *sub) {
    if (!fs::exists(a.checkpoint)) return fail_input("checkpoint not found: " + a.checkpoint);
    if (!fs::is_directory(a.data_dir)) return fail_input("wav directory not found: " + a.data_dir);
    const std::vector<std::string> wavs = list_wavs(a.data_dir);
    if (wavs.empty()) return fail_input("no .wav files in wav directory: " + a.data_dir);

    LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
    std::vector<Waveform> clips;
    clips.reserve(wavs.size());
    for (const auto &p : wavs) clips.push_back(load_wav(p));

    // Per-clip extraction is pure, so the fan-out cannot change results.
    const index_t n = static_cast<index_t>(clips.size());
    std::vector<Matrix<float>> rows(static_cast<std::size_t>(n));
    std::atomic<index_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const index_t i = next.fetch_add(1);
            if (i >= n) break;
            rows[static_cast<std::size_t>(i)] = extract_features(ckpt.params, clips[static_cast<std::size_t>(i)]);
        }
    };
    std::vector<std::thread> pool;
    const index_t fan = std::min<index_t>(a.common.threads, n);
    for (index_t t = 1; t < fan; ++t) pool.emplace_back(worker);
    worker();
    for (auto &t : pool) t.join();

    Matrix<float> feats(n, rows[0].cols());
    std::vector<std::string> ids;
    for (index_t i = 0; i < n; ++i) {
        for (index_t j = 0; j < feats.cols(); ++j) feats(i, j) = rows[static_cast<std::size_t>(i)](0, j);
        ids.push_back(stem_of(wavs[static_cast<std::size_t>(i)]));
    }
    fs::create_directories(a.common.out_dir);
    write_matrix_f32(a.common.out_dir + "/features.f32", feats);
    write_id_list(a.common.out_dir + "/features.ids", ids);
    std::printf("wrote %lld x %lld features for %zu clips to %s\n", static_cast<long long>(feats.rows()),
                static_cast<long long>(feats.cols()), ids.size(), a.common.out_dir.c_str());
    echo_config(sub, a.common.out_dir);
    return 0;
}

// ─── probe ───────────────────────────────────────────────────────────────

struct ProbeArgs {
    CommonArgs common;
    std::string features;
    std::string ids;
    std::string labels_csv;
    std::string model_name = "model";
    std::string task_name = "task";
    index_t epochs = 40;
};

inline int cmd_probe(const ProbeArgs &a, CLI::App *sub) {
    if (!fs::exists(a.features)) return fail_input("features file not found: " + a.features);
    const std::string ids_path = a.ids.empty() ? a.features + ".ids" : a.ids;
    if (!fs::exists(ids_path)) return fail_input("id list not found: " + ids_path);
    if (!fs::exists(a.labels_csv)) return fail_input("label csv not found: " + a.labels_csv);

    const Matrix<float> feats = read_matrix_f32(a.features);
    const std::vector<std::string> ids = read_id_list(ids_path);
    if (static_cast<index_t>(ids.size()) != feats.rows())
        return fail_input("id list has " + std::to_string(ids.size()) + " entries for " +
                          std::to_string(feats.rows()) + " feature rows");

    std::map<std::string, index_t> label_of;
    for (const auto &row : read_csv(a.labels_csv, true)) {
        if (row.size() != 2) return fail_input("label csv must have rows `id,label`: " + a.labels_csv);
        try {
            label_of[row[0]] = static_cast<index_t>(std::stoll(row[1]));
        } catch (const std::exception &) {
            return fail_input("non-integer label '" + row[1] + "' in " + a.labels_csv);
        }
    }
    std::vector<index_t> labels;
    index_t classes = 0;
    for (const auto &id : ids) {
        const auto it = label_of.find(id);
        if (it == label_of.end()) return fail_input("no label for clip id '" + id + "' in " + a.labels_csv);
        if (it->second < 0) return fail_input("negative label for clip id '" + id + "'");
        labels.push_back(it->second);
        classes = std::max(classes, it->second + 1);
    }

    ProbeConfig pcfg;
    pcfg.epochs = a.epochs;
    pcfg.seed = a.common.seed;
    const ProbeResult result = train_probe(feats, labels, classes, pcfg);
    std::printf("probe: %lld classes, val accuracy %.4f (lr %.1e)\n", static_cast<long long>(classes),
                result.val_metric, result.best_lr);

    fs::create_directories(a.common.out_dir);
    const std::string metrics = a.common.out_dir + "/metrics.csv";
    const bool fresh = !fs::exists(metrics);
    std::ofstream f(metrics, std::ios::app);
    require(f.good(), "cannot open " + metrics);
    if (fresh) f << "model,task,metric_value\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", result.val_metric);
    f << a.model_name << ',' << a.task_name << ',' << buf << '\n';
    require(f.good(), "short write to " + metrics);
    echo_config(sub, a.common.out_dir);
    return 0;
}

// ─── synth ───────────────────────────────────────────────────────────────

struct SynthArgs {
    CommonArgs common;
    std::string task = "toyset";
    index_t classes = 8;
    index_t per_class = 24;
};

// Writes the bundled synthetic datasets: wav clips plus an `id,label` csv.
inline int cmd_synth(const SynthArgs &a, CLI::App *sub) {
    Rng rng(a.common.seed);
    SynthTask task;
    if (a.task == "toyset") {
        PitchTaskConfig cfg;
        cfg.n_classes = a.classes;
        task.clips = toyset_clips(cfg, a.common.seed == 0 ? 7 : a.common.seed);
        task.n_classes = a.classes;
        for (index_t i = 0; i < static_cast<index_t>(task.clips.size()); ++i) task.labels.push_back(i);
    } else if (a.task == "pitch") {
        PitchTaskConfig cfg;
        cfg.n_classes = a.classes;
        cfg.per_class = a.per_class;
        task = pitch_task(cfg, rng);
    } else if (a.task == "amplitude") {
        task = amplitude_task(a.classes, a.per_class, rng);
    } else if (a.task == "speakers") {
        task = speaker_count_task(a.classes, a.per_class, rng);
    } else {
        return fail_input("unknown task: " + a.task);
    }
    fs::create_directories(a.common.out_dir);
    std::ofstream labels(a.common.out_dir + "/labels.csv", std::ios::trunc);
    require(labels.good(), "cannot open labels.csv under " + a.common.out_dir);
    labels << "id,label\n";
    char name[32];
    for (std::size_t i = 0; i < task.clips.size(); ++i) {
        std::snprintf(name, sizeof(name), "clip_%04zu", i);
        write_wav(a.common.out_dir + "/" + name + ".wav", task.clips[i].samples, task.clips[i].sample_rate);
        labels << name << ',' << task.labels[i] << '\n';
    }
    require(labels.good(), "short write to labels.csv");
    std::printf("wrote %zu clips + labels.csv to %s\n", task.clips.size(), a.common.out_dir.c_str());
    echo_config(sub, a.common.out_dir);
    return 0;
}

// ─── score ───────────────────────────────────────────────────────────────

struct ScoreArgs {
    CommonArgs common;
    std::string input_csv;
};

inline int cmd_score(const ScoreArgs &a, CLI::App *sub) {
    if (!fs::exists(a.input_csv)) return fail_input("metrics csv not found: " + a.input_csv);
    const ScoreTable table = read_score_csv(a.input_csv);
    const std::vector<double> s = aggregate_score(table);
    for (std::size_t i = 0; i < table.models.size(); ++i)
        std::printf("%s: s = %.4f\n", table.models[i].c_str(), s[i]);
    fs::create_directories(a.common.out_dir);
    write_score_csv(a.common.out_dir + "/scores.csv", table.models, s);
    echo_config(sub, a.common.out_dir);
    return 0;
}

// ─── verify ──────────────────────────────────────────────────────────────

inline int cmd_verify(double tolerance) {
    VerifyOptions opts;
    opts.grad_tolerance = tolerance;
    const std::vector<CheckResult> results = run_verification(opts);
    int failures = 0;
    for (const auto &r : results) {
        std::printf("[%s] %-46s %s\n", r.pass ? " OK " : "FAIL", r.name.c_str(), r.detail.c_str());
        failures += r.pass ? 0 : 1;
    }
    std::printf("%d/%zu checks passed\n", static_cast<int>(results.size()) - failures, results.size());
    return failures == 0 ? 0 : 1;
}

// ─── entry point ─────────────────────────────────────────────────────────

inline int run(int argc, char **argv) {
    CLI::App app{"masked autoencoder toolkit for audio spectrograms"};
    app.require_subcommand(1);

    PretrainArgs pa;
    CLI::App *pre = app.add_subcommand("pretrain", "pretrain a model on a directory of wav clips");
    add_common(pre, pa.common);
    pre->add_option("--preset", pa.preset, "model preset")
        ->check(CLI::IsMember({"tiny", "base", "large"}))
        ->capture_default_str();
    pre->add_option("--data", pa.data_dir, "directory of 16 kHz mono wav clips")->required();
    pre->add_option("--steps", pa.steps, "step cap, 0 runs the full schedule")->capture_default_str();
    pre->add_option("--batch", pa.batch, "batch size")->check(CLI::PositiveNumber)->capture_default_str();
    pre->add_option("--epochs", pa.epochs, "schedule length in epochs")->capture_default_str();
    pre->add_option("--warmup-epochs", pa.warmup_epochs, "linear warmup epochs")->capture_default_str();
    pre->add_option("--peak-lr", pa.peak_lr, "peak learning rate, 0 selects 3e-4*batch/1024")->capture_default_str();
    pre->add_option("--mask-ratio", pa.mask_ratio, "fraction of patches masked")->capture_default_str();
    pre->add_option("--dec-dim", pa.dec_dim, "decoder width override (the studied sweep is 384/512/768)")
        ->check(CLI::PositiveNumber);
    pre->add_option("--d-model", pa.d_model, "encoder width override for reduced runs")->check(CLI::PositiveNumber);
    pre->add_option("--enc-layers", pa.enc_layers, "encoder depth override")->check(CLI::PositiveNumber);
    pre->add_option("--enc-heads", pa.enc_heads, "encoder head count override")->check(CLI::PositiveNumber);
    pre->add_option("--dec-layers", pa.dec_layers, "decoder depth override (0 disables decoder blocks)")
        ->check(CLI::NonNegativeNumber);
    pre->add_flag("--rope-encoder", pa.rope_encoder, "rotary positions in the encoder");
    pre->add_flag("--rope-decoder", pa.rope_decoder, "rotary positions in the decoder");
    pre->add_option("--checkpoint-every", pa.checkpoint_every, "periodic checkpoint interval in steps")
        ->capture_default_str();
    pre->add_option("--resume", pa.resume, "resume from a checkpoint file");

    ExtractArgs ea;
    CLI::App *ext = app.add_subcommand("extract", "extract frozen features for a directory of wav clips");
    add_common(ext, ea.common);
    ext->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
    ext->add_option("--data", ea.data_dir, "directory of wav clips")->required();

    ProbeArgs ba;
    CLI::App *prb = app.add_subcommand("probe", "train an MLP probe on extracted features");
    add_common(prb, ba.common);
    prb->add_option("--features", ba.features, "feature matrix file")->required();
    prb->add_option("--ids", ba.ids, "clip id sidecar (defaults to <features>.ids)");
    prb->add_option("--labels", ba.labels_csv, "label csv `id,label`")->required();
    prb->add_option("--model-name", ba.model_name, "model column value")->capture_default_str();
    prb->add_option("--task-name", ba.task_name, "task column value")->capture_default_str();
    prb->add_option("--epochs", ba.epochs, "probe training epochs")->capture_default_str();

    SynthArgs ya;
    CLI::App *syn = app.add_subcommand("synth", "write a bundled synthetic dataset (wav clips + labels.csv)");
    add_common(syn, ya.common);
    syn->add_option("--task", ya.task, "toyset | pitch | amplitude | speakers")
        ->check(CLI::IsMember({"toyset", "pitch", "amplitude", "speakers"}))
        ->capture_default_str();
    syn->add_option("--classes", ya.classes, "number of classes")->check(CLI::PositiveNumber)->capture_default_str();
    syn->add_option("--per-class", ya.per_class, "clips per class")->check(CLI::PositiveNumber)->capture_default_str();

    ScoreArgs sa;
    CLI::App *sco = app.add_subcommand("score", "aggregate `model,task,metric_value` rows into s(m)");
    add_common(sco, sa.common);
    sco->add_option("--input", sa.input_csv, "metrics csv")->required();

    double tolerance = 1e-4;
    CLI::App *ver = app.add_subcommand("verify", "run the invariant suite");
    ver->add_option("--tolerance", tolerance, "gradient check tolerance")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e);
    }

    try {
        if (pre->parsed()) return cmd_pretrain(pre, pa);
        if (ext->parsed()) return cmd_extract(ea, ext);
        if (prb->parsed()) return cmd_probe(ba, prb);
        if (syn->parsed()) return cmd_synth(ya, syn);
        if (sco->parsed()) return cmd_score(sa, sco);
        if (ver->parsed()) return cmd_verify(tolerance);
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return ext->parsed() || prb->parsed() || sco->parsed() ? 2 : 1;
    }
    return 0;
}

} // namespace ampp::cli
