// Copyright 2025 the ampp authors
//
// Spectrogram numbers are frozen from an independent numpy reference
// implementing the same contract (reflect-centered 400/160/512 STFT, HTK
// mel, 80 unnormalized triangles on 0..8 kHz, ln(. + 1e-5)).
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ampp/dsp.hpp"
#include "ampp/synth.hpp"

using namespace ampp;
namespace fs = std::filesystem;

namespace {

Waveform sine(double freq, double amp, index_t n = 32000) {
    Waveform w;
    w.samples.resize(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i)
        w.samples[static_cast<std::size_t>(i)] =
            static_cast<float>(amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / 16000.0));
    return w;
}

std::string temp_wav(const char *name) {
    const auto dir = fs::temp_directory_path() / "ampp_dsp_test";
    fs::create_directories(dir);
    return (dir / name).string();
}

} // namespace

TEST_CASE("wav write/load round trip") {
    const Waveform w = sine(440.0, 0.25, 4000);
    const std::string path = temp_wav("tone.wav");
    write_wav(path, w.samples, 16000);
    const Waveform back = load_wav(path);
    REQUIRE(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == w.samples.size());
    // PCM16 quantization error stays below one step of 1/32768.
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        REQUIRE(std::abs(back.samples[i] - w.samples[i]) <= 1.0f / 32768.0f);
}

TEST_CASE("wav loader rejects wrong formats") {
    // Handcraft a 44-byte stereo PCM16 RIFF header with no samples.
    auto patch_u16 = [](std::string &s, std::size_t at, unsigned v) {
        s[at] = static_cast<char>(v & 0xff);
        s[at + 1] = static_cast<char>((v >> 8) & 0xff);
    };
    auto patch_u32 = [](std::string &s, std::size_t at, unsigned long v) {
        for (int k = 0; k < 4; ++k) s[at + static_cast<std::size_t>(k)] = static_cast<char>((v >> (8 * k)) & 0xff);
    };
    std::string hdr(44, '\0');
    hdr.replace(0, 4, "RIFF");
    patch_u32(hdr, 4, 36);
    hdr.replace(8, 4, "WAVE");
    hdr.replace(12, 4, "fmt ");
    patch_u32(hdr, 16, 16);
    patch_u16(hdr, 20, 1);  // PCM
    patch_u16(hdr, 22, 2);  // stereo: must be rejected
    patch_u32(hdr, 24, 16000);
    patch_u32(hdr, 28, 16000 * 4);
    patch_u16(hdr, 32, 4);
    patch_u16(hdr, 34, 16);
    hdr.replace(36, 4, "data");
    patch_u32(hdr, 40, 0);

    const std::string path = temp_wav("stereo.wav");
    std::ofstream(path, std::ios::binary) << hdr;
    REQUIRE_THROWS_WITH(load_wav(path), Catch::Matchers::ContainsSubstring("mono"));

    patch_u16(hdr, 22, 1);
    patch_u32(hdr, 24, 44100); // wrong rate: no resampling
    patch_u32(hdr, 28, 44100 * 2);
    patch_u16(hdr, 32, 2);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << hdr;
    REQUIRE_THROWS_WITH(load_wav(path), Catch::Matchers::ContainsSubstring("16000"));
}

TEST_CASE("crop_2s pads short clips without consuming randomness") {
    Rng rng(123);
    Waveform w = sine(100.0, 0.5, 31995);
    const Waveform c = crop_2s(w, rng);
    REQUIRE(c.samples.size() == 32000);
    for (index_t i = 0; i < 31995; ++i) REQUIRE(c.samples[static_cast<std::size_t>(i)] == w.samples[static_cast<std::size_t>(i)]);
    for (index_t i = 31995; i < 32000; ++i) REQUIRE(c.samples[static_cast<std::size_t>(i)] == 0.0f);
    // No draw happened: the stream continues exactly like a fresh one.
    Rng fresh(123);
    REQUIRE(rng.uniform_u64(1000000) == fresh.uniform_u64(1000000));
}

TEST_CASE("crop_2s exact length is identity and long clips crop in range") {
    Rng rng(9);
    Waveform w = sine(100.0, 0.5, 32000);
    const Waveform c = crop_2s(w, rng);
    REQUIRE(c.samples == w.samples);

    Waveform longw = sine(100.0, 0.5, 50000);
    Rng r1(7), r2(7), r3(8);
    const Waveform a = crop_2s(longw, r1);
    const Waveform b = crop_2s(longw, r2);
    REQUIRE(a.samples.size() == 32000);
    REQUIRE(a.samples == b.samples); // same seed, same crop
    // The crop is a contiguous slice: find its offset and check bounds.
    bool found = false;
    for (index_t off = 0; off <= 18000 && !found; ++off) {
        if (a.samples[0] == longw.samples[static_cast<std::size_t>(off)] &&
            a.samples[1] == longw.samples[static_cast<std::size_t>(off) + 1] &&
            std::equal(a.samples.begin(), a.samples.end(), longw.samples.begin() + off))
            found = true;
    }
    REQUIRE(found);
    (void)r3;
}

TEST_CASE("mel filterbank frozen values") {
    const Matrix<double> fb = mel_filterbank(MelConfig{});
    REQUIRE(fb.rows() == 80);
    REQUIRE(fb.cols() == 257);
    index_t nonzero_rows = 0;
    for (index_t m = 0; m < 80; ++m) {
        double mx = 0.0;
        for (index_t k = 0; k < 257; ++k) {
            REQUIRE(fb(m, k) >= 0.0);
            mx = std::max(mx, fb(m, k));
        }
        nonzero_rows += mx > 0.0;
    }
    REQUIRE(nonzero_rows == 80);
    REQUIRE_THAT(fb(15, 14), Catch::Matchers::WithinAbs(0.6019015887, 1e-9));
    REQUIRE_THAT(fb(15, 15), Catch::Matchers::WithinAbs(0.5271243701, 1e-9));
    REQUIRE_THAT(fb(0, 1), Catch::Matchers::WithinAbs(0.5998987898, 1e-9));
    REQUIRE(fb(0, 0) == 0.0);
    REQUIRE_THAT(fb(79, 256), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("logmel frozen oracle values for a 440 Hz tone") {
    const Matrix<float> S = logmel(sine(440.0, 0.5));
    REQUIRE(S.rows() == 200);
    REQUIRE(S.cols() == 80);
    REQUIRE_THAT(static_cast<double>(S(0, 0)), Catch::Matchers::WithinAbs(3.02074522, 1e-4));
    REQUIRE_THAT(static_cast<double>(S(100, 0)), Catch::Matchers::WithinAbs(-8.77730421, 1e-4));
    REQUIRE_THAT(static_cast<double>(S(100, 20)), Catch::Matchers::WithinAbs(-3.91884791, 1e-4));
    REQUIRE_THAT(static_cast<double>(S(199, 79)), Catch::Matchers::WithinAbs(-8.79694622, 1e-4));

    index_t band = 0;
    for (index_t m = 1; m < 80; ++m)
        if (S(100, m) > S(100, band)) band = m;
    REQUIRE(band == 15);
    REQUIRE_THAT(static_cast<double>(S(100, 15)), Catch::Matchers::WithinAbs(7.67310652, 1e-4));
}

TEST_CASE("logmel silence, monotonicity, frame count, determinism") {
    Waveform silence;
    silence.samples.assign(32000, 0.0f);
    const Matrix<float> S0 = logmel(silence);
    const float floor_val = std::log(1e-5f);
    for (index_t i = 0; i < S0.size(); ++i)
        REQUIRE_THAT(static_cast<double>(S0.data()[i]), Catch::Matchers::WithinAbs(static_cast<double>(floor_val), 1e-6));

    const Waveform w1 = sine(440.0, 0.25);
    Waveform w2 = w1;
    for (auto &s : w2.samples) s *= 2.0f;
    const Matrix<float> a = logmel(w1), b = logmel(w2);
    for (index_t i = 0; i < a.size(); ++i) REQUIRE(b.data()[i] >= a.data()[i] - 1e-6f);

    REQUIRE(logmel(sine(440.0, 0.25, 24000)).rows() == 150);
    const Matrix<float> again = logmel(w1);
    REQUIRE(max_abs_diff(a, again) == 0.0f);

    Waveform tiny;
    tiny.samples.assign(256, 0.0f);
    REQUIRE_THROWS_AS(logmel(tiny), Error);
}

TEST_CASE("synth clips are deterministic 2-second 16 kHz audio") {
    Rng r1(4), r2(4);
    const Waveform a = synth_tone(300.0, 0.1, 0.0, 0.02, r1);
    const Waveform b = synth_tone(300.0, 0.1, 0.0, 0.02, r2);
    REQUIRE(a.samples.size() == 32000);
    REQUIRE(a.sample_rate == 16000);
    REQUIRE(a.samples == b.samples);

    PitchTaskConfig cfg;
    const auto toy1 = toyset_clips(cfg, 7), toy2 = toyset_clips(cfg, 7);
    REQUIRE(toy1.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(toy1[i].samples == toy2[i].samples);
}
