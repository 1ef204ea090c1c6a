// Copyright 2025 the ampp authors
// WAV input and the log-mel frontend. 16 kHz mono PCM16 only; no
// resampling, unsupported formats are rejected outright.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ampp/common.hpp"
#include "ampp/matrix.hpp"
#include "ampp/rng.hpp"

namespace ampp {

struct Waveform {
    std::vector<float> samples; // amplitudes in [-1, 1]
    int sample_rate = 16000;
};

inline constexpr index_t kCropSamples = 32000; // 2 s at 16 kHz

// ─── WAV io ──────────────────────────────────────────────────────────────

namespace detail {

inline std::uint32_t read_u32le(const unsigned char *p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16le(const unsigned char *p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32le(std::string &s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16le(std::string &s, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

} // namespace detail

// Strict reader: RIFF/WAVE, PCM 16-bit, mono, 16000 Hz. Anything else errors.
inline Waveform load_wav(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "load_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(bytes.size() >= 12, "load_wav: file too small: " + path);
    require(std::memcmp(bytes.data(), "RIFF", 4) == 0 && std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
            "load_wav: not a RIFF/WAVE file: " + path);

    bool have_fmt = false;
    std::uint16_t audio_format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char *data_ptr = nullptr;
    std::uint32_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char *tag = reinterpret_cast<const char *>(bytes.data() + pos);
        const std::uint32_t len = detail::read_u32le(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        require(body + len <= bytes.size(), "load_wav: truncated chunk in " + path);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            require(len >= 16, "load_wav: malformed fmt chunk");
            audio_format = detail::read_u16le(bytes.data() + body);
            channels = detail::read_u16le(bytes.data() + body + 2);
            rate = detail::read_u32le(bytes.data() + body + 4);
            bits = detail::read_u16le(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data_ptr = bytes.data() + body;
            data_len = len;
        }
        pos = body + len + (len & 1); // chunks are word-aligned
    }
    require(have_fmt && data_ptr != nullptr, "load_wav: missing fmt or data chunk: " + path);
    require(audio_format == 1, "load_wav: PCM required (got format " + std::to_string(audio_format) + ")");
    require(channels == 1, "load_wav: mono required (got " + std::to_string(channels) + " channels)");
    require(bits == 16, "load_wav: 16-bit samples required (got " + std::to_string(bits) + ")");
    require(rate == 16000, "load_wav: 16000 Hz required (got " + std::to_string(rate) + "); no resampling");

    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const std::int16_t v = static_cast<std::int16_t>(detail::read_u16le(data_ptr + 2 * i));
        w.samples[i] = static_cast<float>(v) / 32768.0f;
    }
    return w;
}

inline void write_wav(const std::string &path, const std::vector<float> &samples, int sample_rate = 16000) {
    std::string body;
    body.reserve(44 + samples.size() * 2);
    const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
    body += "RIFF";
    detail::put_u32le(body, 36 + data_len);
    body += "WAVEfmt ";
    detail::put_u32le(body, 16);
    detail::put_u16le(body, 1); // PCM
    detail::put_u16le(body, 1); // mono
    detail::put_u32le(body, static_cast<std::uint32_t>(sample_rate));
    detail::put_u32le(body, static_cast<std::uint32_t>(sample_rate * 2)); // byte rate
    detail::put_u16le(body, 2);                                           // block align
    detail::put_u16le(body, 16);                                          // bits
    body += "data";
    detail::put_u32le(body, data_len);
    for (float s : samples) {
        const float c = std::clamp(s, -1.0f, 32767.0f / 32768.0f);
        const auto v = static_cast<std::int16_t>(std::lround(c * 32768.0f));
        detail::put_u16le(body, static_cast<std::uint16_t>(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "write_wav: cannot open " + path);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    require(f.good(), "write_wav: short write to " + path);
}

// ─── 2-second crop ───────────────────────────────────────────────────────

// Shorter inputs are right-padded with zeros and consume no randomness;
// longer inputs take a uniform start offset in [0, len - 32000].
inline Waveform crop_2s(const Waveform &w, Rng &rng) {
    Waveform out;
    out.sample_rate = w.sample_rate;
    const index_t n = static_cast<index_t>(w.samples.size());
    if (n <= kCropSamples) {
        out.samples = w.samples;
        out.samples.resize(static_cast<std::size_t>(kCropSamples), 0.0f);
        return out;
    }
    const auto span = static_cast<std::uint64_t>(n - kCropSamples);
    const auto off = static_cast<std::size_t>(rng.uniform_u64(span + 1));
    out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(off),
                       w.samples.begin() + static_cast<std::ptrdiff_t>(off + kCropSamples));
    return out;
}

// ─── log-mel frontend ────────────────────────────────────────────────────

struct MelConfig {
    int sample_rate = 16000;
    int n_mels = 80;
    double win_ms = 25.0;
    double hop_ms = 10.0;
    int fft_size = 512;
    double fmin_hz = 0.0;
    double fmax_hz = 8000.0;
    double log_floor = 1e-5;

    int win_length() const { return static_cast<int>(std::lround(win_ms * sample_rate / 1000.0)); } // 400
    int hop_length() const { return static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0)); } // 160
    int n_bins() const { return fft_size / 2 + 1; }

    void validate() const {
        require(sample_rate == 16000, "MelConfig: sample_rate must be 16000");
        require(n_mels >= 1, "MelConfig: n_mels >= 1");
        require(win_ms > hop_ms && hop_ms > 0, "MelConfig: need win_ms > hop_ms > 0");
        require(fmin_hz < fmax_hz && fmax_hz <= sample_rate / 2.0, "MelConfig: bad frequency range");
        require(log_floor > 0, "MelConfig: log_floor must be positive");
        require(fft_size >= win_length() && (fft_size & (fft_size - 1)) == 0, "MelConfig: fft_size must be a power of two >= window");
    }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Unnormalized triangular filters on the HTK mel scale, [n_mels x n_bins].
inline Matrix<double> mel_filterbank(const MelConfig &cfg) {
    cfg.validate();
    const int n_bins = cfg.n_bins();
    const double mel_lo = hz_to_mel(cfg.fmin_hz), mel_hi = hz_to_mel(cfg.fmax_hz);
    std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
    for (int m = 0; m < cfg.n_mels + 2; ++m)
        edges[static_cast<std::size_t>(m)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1));
    Matrix<double> fb(cfg.n_mels, n_bins);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = edges[static_cast<std::size_t>(m)];
        const double mid = edges[static_cast<std::size_t>(m) + 1];
        const double hi = edges[static_cast<std::size_t>(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (f > lo && f < hi) w = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            fb(m, k) = w;
        }
    }
    return fb;
}

namespace detail {

// In-place radix-2 FFT; size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>> &a) {
    const std::size_t n = a.size();
    require(n != 0 && (n & (n - 1)) == 0, "fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

} // namespace detail

// Centered STFT -> power spectrum -> mel triangles -> ln(. + floor).
// Frames start every hop in the reflect-padded signal; the count is
// floor(n / hop), so 32000 samples yield exactly 200 frames.
inline Matrix<float> logmel(const Waveform &w, const MelConfig &cfg = MelConfig{}) {
    cfg.validate();
    require(w.sample_rate == cfg.sample_rate, "logmel: sample rate mismatch");
    const index_t n = static_cast<index_t>(w.samples.size());
    const index_t pad = cfg.fft_size / 2;
    require(n > pad, "logmel: input too short (need more than " + std::to_string(pad) + " samples)");
    const index_t hop = cfg.hop_length();
    const index_t win = cfg.win_length();
    const index_t frames = n / hop;
    require(frames >= 1, "logmel: input too short for one frame");

    // Reflect padding (edge sample not repeated).
    std::vector<double> padded(static_cast<std::size_t>(n + 2 * pad));
    for (index_t i = 0; i < n; ++i) padded[static_cast<std::size_t>(pad + i)] = w.samples[static_cast<std::size_t>(i)];
    for (index_t k = 1; k <= pad; ++k) {
        padded[static_cast<std::size_t>(pad - k)] = w.samples[static_cast<std::size_t>(k)];
        padded[static_cast<std::size_t>(pad + n - 1 + k)] = w.samples[static_cast<std::size_t>(n - 1 - k)];
    }

    // Symmetric Hann window centered in the FFT buffer.
    std::vector<double> window(static_cast<std::size_t>(cfg.fft_size), 0.0);
    const index_t off = (cfg.fft_size - win) / 2;
    for (index_t i = 0; i < win; ++i)
        window[static_cast<std::size_t>(off + i)] =
            0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(win - 1));

    const Matrix<double> fb = mel_filterbank(cfg);
    const int n_bins = cfg.n_bins();
    Matrix<float> out(frames, cfg.n_mels);
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
    std::vector<double> power(static_cast<std::size_t>(n_bins));
    for (index_t t = 0; t < frames; ++t) {
        for (index_t j = 0; j < cfg.fft_size; ++j)
            buf[static_cast<std::size_t>(j)] = padded[static_cast<std::size_t>(t * hop + j)] * window[static_cast<std::size_t>(j)];
        detail::fft_inplace(buf);
        for (int k = 0; k < n_bins; ++k) power[static_cast<std::size_t>(k)] = std::norm(buf[static_cast<std::size_t>(k)]);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            const double *fm = fb.row(m);
            for (int k = 0; k < n_bins; ++k) acc += fm[k] * power[static_cast<std::size_t>(k)];
            out(t, m) = static_cast<float>(std::log(acc + cfg.log_floor));
        }
    }
    return out;
}

} // namespace ampp
