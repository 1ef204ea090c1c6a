// Copyright 2025 the ampp authors
// Seeded random source shared by masking, init and the trainer.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ampp/common.hpp"

namespace ampp {

// Deterministic random source. The engine is std::mt19937_64 (state is
// serializable), but every sampling routine on top of it is implemented
// here so results do not depend on libstdc++ distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, bound). Rejection sampling, no modulo bias.
    std::uint64_t uniform_u64(std::uint64_t bound) {
        require(bound > 0, "Rng::uniform_u64: bound must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % bound;
    }

    // Uniform real in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. One cached value per pair.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, std) resampled until within clip standard deviations.
    double truncated_normal(double std_dev, double clip = 2.0) {
        double x = normal();
        while (std::abs(x) > clip) x = normal();
        return x * std_dev;
    }

    // Fisher-Yates permutation of {0..n-1}.
    std::vector<index_t> permutation(index_t n) {
        std::vector<index_t> p(static_cast<std::size_t>(n));
        std::iota(p.begin(), p.end(), index_t{0});
        for (index_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<index_t>(uniform_u64(static_cast<std::uint64_t>(i + 1)));
            std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
        }
        return p;
    }

    // Engine + Box-Muller cache, round-trippable through text.
    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << ' ' << (has_spare_ ? 1 : 0);
        if (has_spare_) os << ' ' << std::hexfloat << spare_;
        return os.str();
    }

    static Rng deserialize(const std::string &text) {
        Rng rng;
        std::istringstream is(text);
        is >> rng.engine_;
        int spare_flag = 0;
        is >> spare_flag;
        require(!is.fail(), "Rng::deserialize: malformed state text");
        rng.has_spare_ = spare_flag != 0;
        if (rng.has_spare_) {
            std::string hex;
            is >> hex;
            require(!hex.empty(), "Rng::deserialize: missing cached normal value");
            rng.spare_ = std::strtod(hex.c_str(), nullptr);
        }
        return rng;
    }

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace ampp
