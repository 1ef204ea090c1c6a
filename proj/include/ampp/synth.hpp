// Copyright 2025 the ampp authors
// Bundled synthetic audio tasks for desk-scale probe benchmarks: opening
// pitch of two-note clips, amplitude class of noise bursts, and count of
// simultaneous tones. All clips are 2 s at 16 kHz.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <vector>

#include "ampp/common.hpp"
#include "ampp/dsp.hpp"
#include "ampp/rng.hpp"

namespace ampp {

inline Waveform synth_tone(double freq_hz, double amplitude, double phase, double noise_std, Rng &rng,
                           index_t n_samples = kCropSamples, int sample_rate = 16000) {
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<std::size_t>(n_samples));
    const double step = 2.0 * M_PI * freq_hz / sample_rate;
    for (index_t i = 0; i < n_samples; ++i) {
        double v = amplitude * std::sin(phase + step * static_cast<double>(i));
        if (noise_std > 0.0) v += noise_std * rng.normal();
        w.samples[static_cast<std::size_t>(i)] = static_cast<float>(v);
    }
    return w;
}

inline Waveform synth_noise(double amplitude, Rng &rng, index_t n_samples = kCropSamples, int sample_rate = 16000) {
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<std::size_t>(n_samples));
    for (index_t i = 0; i < n_samples; ++i)
        w.samples[static_cast<std::size_t>(i)] = static_cast<float>(amplitude * rng.normal());
    return w;
}

struct SynthTask {
    std::vector<Waveform> clips;
    std::vector<index_t> labels;
    index_t n_classes = 0;
};

struct PitchTaskConfig {
    index_t n_classes = 8;
    index_t per_class = 24;
    double base_freq = 300.0;     // class c sits 3 semitones above class c-1
    double semitones_apart = 3.0;
    double amp_db_jitter = 12.0;  // uniform in [-jitter, +jitter] dB around amp_ref
    double amp_ref = 0.1;
    double noise_std = 0.02;
};

inline double pitch_class_freq(const PitchTaskConfig &cfg, index_t cls) {
    return cfg.base_freq * std::pow(2.0, cfg.semitones_apart * static_cast<double>(cls) / 12.0);
}

// Two-note clips on the class frequency grid: the labeled pitch fills the
// first half, a distractor from another class the second, both at the same
// random level over a noise floor. The long-term spectrum only exposes the
// unordered note pair, so the label is readable only from which pitch
// sounds when, not from clip-level averages.
inline SynthTask pitch_task(const PitchTaskConfig &cfg, Rng &rng) {
    require(cfg.n_classes >= 2 && cfg.per_class >= 1, "pitch_task: degenerate size");
    SynthTask task;
    task.n_classes = cfg.n_classes;
    const index_t half = kCropSamples / 2;
    for (index_t c = 0; c < cfg.n_classes; ++c) {
        const double freq = pitch_class_freq(cfg, c);
        for (index_t k = 0; k < cfg.per_class; ++k) {
            const double db = (rng.uniform() * 2.0 - 1.0) * cfg.amp_db_jitter;
            const double amp = cfg.amp_ref * std::pow(10.0, db / 20.0);
            const auto hop = static_cast<index_t>(rng.uniform_u64(static_cast<std::uint64_t>(cfg.n_classes - 1)));
            const double other = pitch_class_freq(cfg, (c + 1 + hop) % cfg.n_classes);
            Waveform w = synth_tone(freq, amp, rng.uniform() * 2.0 * M_PI, cfg.noise_std, rng, half);
            const Waveform tail =
                synth_tone(other, amp, rng.uniform() * 2.0 * M_PI, cfg.noise_std, rng, kCropSamples - half);
            w.samples.insert(w.samples.end(), tail.samples.begin(), tail.samples.end());
            task.clips.push_back(std::move(w));
            task.labels.push_back(c);
        }
    }
    return task;
}

// Noise bursts at log-spaced levels; label = level index.
inline SynthTask amplitude_task(index_t n_levels, index_t per_class, Rng &rng, double lo_db = -36.0,
                                double hi_db = -6.0) {
    require(n_levels >= 2 && per_class >= 1, "amplitude_task: degenerate size");
    SynthTask task;
    task.n_classes = n_levels;
    for (index_t c = 0; c < n_levels; ++c) {
        const double db = lo_db + (hi_db - lo_db) * static_cast<double>(c) / static_cast<double>(n_levels - 1);
        const double amp = std::pow(10.0, db / 20.0);
        for (index_t k = 0; k < per_class; ++k) {
            task.clips.push_back(synth_noise(amp, rng));
            task.labels.push_back(c);
        }
    }
    return task;
}

// 1..max_count simultaneous tones at random distinct frequencies;
// label = count - 1.
inline SynthTask speaker_count_task(index_t max_count, index_t per_class, Rng &rng, double fmin = 200.0,
                                    double fmax = 2000.0) {
    require(max_count >= 2 && per_class >= 1, "speaker_count_task: degenerate size");
    SynthTask task;
    task.n_classes = max_count;
    for (index_t c = 1; c <= max_count; ++c) {
        for (index_t k = 0; k < per_class; ++k) {
            Waveform mix;
            mix.sample_rate = 16000;
            mix.samples.assign(static_cast<std::size_t>(kCropSamples), 0.0f);
            for (index_t v = 0; v < c; ++v) {
                const double freq = fmin * std::pow(fmax / fmin, rng.uniform());
                const double phase = rng.uniform() * 2.0 * M_PI;
                const Waveform tone = synth_tone(freq, 0.08, phase, 0.0, rng);
                for (std::size_t i = 0; i < mix.samples.size(); ++i) mix.samples[i] += tone.samples[i];
            }
            for (std::size_t i = 0; i < mix.samples.size(); ++i)
                mix.samples[i] += static_cast<float>(0.01 * rng.normal());
            task.clips.push_back(std::move(mix));
            task.labels.push_back(c - 1);
        }
    }
    return task;
}

// The fixed 8-clip pretraining toyset: clip c walks the full pitch scale
// once starting on degree c, so every clip shares the same long-term
// spectrum and only the note order differs. Reconstructing masked notes
// therefore requires reading pitch at a position, not clip-level stats.
inline std::vector<Waveform> toyset_clips(const PitchTaskConfig &cfg, std::uint64_t seed = 7) {
    Rng rng(seed);
    std::vector<Waveform> clips;
    const index_t seg = kCropSamples / cfg.n_classes;
    for (index_t c = 0; c < cfg.n_classes; ++c) {
        Waveform w;
        w.sample_rate = 16000;
        w.samples.reserve(static_cast<std::size_t>(kCropSamples));
        double phase = rng.uniform() * 2.0 * M_PI;
        for (index_t s = 0; s < cfg.n_classes; ++s) {
            const index_t n = s + 1 == cfg.n_classes ? kCropSamples - seg * s : seg;
            const double freq = pitch_class_freq(cfg, (c + s) % cfg.n_classes);
            const Waveform note = synth_tone(freq, cfg.amp_ref, phase, 0.0, rng, n);
            w.samples.insert(w.samples.end(), note.samples.begin(), note.samples.end());
            // carry phase across the boundary so notes join without clicks
            phase = std::fmod(phase + 2.0 * M_PI * freq / 16000.0 * static_cast<double>(n), 2.0 * M_PI);
        }
        clips.push_back(std::move(w));
    }
    return clips;
}

} // namespace ampp
