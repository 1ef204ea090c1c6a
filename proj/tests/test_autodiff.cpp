// Copyright 2025 the ampp authors
//
// Every differentiable op gets a central finite-difference check through a
// random scalar readout, plus closed-form spot values where they exist.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include "ampp/autodiff.hpp"
#include "helpers.hpp"

using namespace ampp;
using testutil::fd_worst_rel_err;
using testutil::random_mat;
using Var = Tape<double>::Var;

namespace {

// Scalar readout so any op output can feed backward().
Var readout(Tape<double> &tp, Var x, std::uint64_t seed = 1) {
    Rng rng(seed);
    const auto &v = tp.val(x);
    return tp.weighted_sum(x, random_mat(v.rows(), v.cols(), rng));
}

} // namespace

TEST_CASE("elementwise and linear op gradients") {
    Rng rng(10);
    const double kTol = 1e-6;

    SECTION("add, scale, hadamard") {
        const auto err = fd_worst_rel_err(
            {random_mat(3, 4, rng), random_mat(3, 4, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
                return readout(tp, tp.hadamard(tp.add(v[0], v[1]), tp.scale(v[1], 1.7)));
            });
        REQUIRE(err < kTol);
    }
    SECTION("matmul and matmul_nt") {
        const auto err = fd_worst_rel_err(
            {random_mat(3, 5, rng), random_mat(5, 4, rng), random_mat(6, 4, rng)},
            [](Tape<double> &tp, const std::vector<Var> &v) {
                return readout(tp, tp.matmul_nt(tp.matmul(v[0], v[1]), v[2]));
            });
        REQUIRE(err < kTol);
    }
    SECTION("add_row broadcast bias") {
        const auto err =
            fd_worst_rel_err({random_mat(4, 6, rng), random_mat(1, 6, rng)},
                             [](Tape<double> &tp, const std::vector<Var> &v) { return readout(tp, tp.add_row(v[0], v[1])); });
        REQUIRE(err < kTol);
    }
    SECTION("activations") {
        const auto err = fd_worst_rel_err({random_mat(4, 5, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
            return readout(tp, tp.add(tp.relu(v[0]), tp.add(tp.gelu(v[0]), tp.swish(v[0]))));
        });
        REQUIRE(err < 1e-5);
    }
}

TEST_CASE("shape op gradients") {
    Rng rng(20);
    const double kTol = 1e-6;

    SECTION("slice + concat cols") {
        const auto err = fd_worst_rel_err({random_mat(3, 8, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
            auto a = tp.slice_cols(v[0], 0, 3);
            auto b = tp.slice_cols(v[0], 3, 8);
            return readout(tp, tp.concat_cols({b, a}));
        });
        REQUIRE(err < kTol);
    }
    SECTION("gather_rows accumulates duplicate indices") {
        const auto err = fd_worst_rel_err({random_mat(4, 3, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
            return readout(tp, tp.gather_rows(v[0], {2, 0, 2, 2, 1}));
        });
        REQUIRE(err < kTol);
    }
    SECTION("concat_rows and repeat_row") {
        const auto err = fd_worst_rel_err(
            {random_mat(2, 3, rng), random_mat(1, 3, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
                return readout(tp, tp.concat_rows(v[0], tp.repeat_row(v[1], 4)));
            });
        REQUIRE(err < kTol);
    }
}

TEST_CASE("normalization and attention-piece gradients") {
    Rng rng(30);

    SECTION("softmax_rows") {
        const auto err = fd_worst_rel_err({random_mat(3, 6, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
            return readout(tp, tp.softmax_rows(v[0]));
        });
        REQUIRE(err < 1e-5);
    }
    SECTION("layer_norm with affine") {
        const auto err = fd_worst_rel_err(
            {random_mat(4, 6, rng), random_mat(1, 6, rng), random_mat(1, 6, rng)},
            [](Tape<double> &tp, const std::vector<Var> &v) {
                return readout(tp, tp.layer_norm(v[0], v[1], v[2], 1e-6));
            });
        REQUIRE(err < 1e-5);
    }
    SECTION("layer_norm_plain") {
        const auto err = fd_worst_rel_err({random_mat(4, 6, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
            return readout(tp, tp.layer_norm_plain(v[0], 1e-6));
        });
        REQUIRE(err < 1e-5);
    }
    SECTION("rotate_pairs") {
        Matrix<double> cosm(3, 2), sinm(3, 2);
        Rng prng(31);
        for (index_t i = 0; i < cosm.size(); ++i) {
            const double ang = prng.uniform() * 6.28;
            cosm.data()[i] = std::cos(ang);
            sinm.data()[i] = std::sin(ang);
        }
        const auto err = fd_worst_rel_err({random_mat(3, 8, rng)}, [&](Tape<double> &tp, const std::vector<Var> &v) {
            return readout(tp, tp.rotate_pairs(v[0], cosm, sinm, 2));
        });
        REQUIRE(err < 1e-6);
    }
}

TEST_CASE("loss gradients") {
    Rng rng(40);

    SECTION("masked_mse") {
        const auto target = random_mat(5, 4, rng);
        const auto err = fd_worst_rel_err({random_mat(5, 4, rng)}, [&](Tape<double> &tp, const std::vector<Var> &v) {
            return tp.masked_mse(v[0], target, {1, 3, 4});
        });
        REQUIRE(err < 1e-6);
    }
    SECTION("softmax cross entropy") {
        const auto err = fd_worst_rel_err({random_mat(5, 3, rng)}, [](Tape<double> &tp, const std::vector<Var> &v) {
            return tp.softmax_cross_entropy(v[0], {0, 2, 1, 1, 0});
        });
        REQUIRE(err < 1e-5);
    }
    SECTION("bce_with_logits") {
        Matrix<double> targets(4, 3);
        Rng trng(41);
        for (index_t i = 0; i < targets.size(); ++i) targets.data()[i] = trng.uniform() < 0.5 ? 0.0 : 1.0;
        const auto err = fd_worst_rel_err({random_mat(4, 3, rng)}, [&](Tape<double> &tp, const std::vector<Var> &v) {
            return tp.bce_with_logits(v[0], targets);
        });
        REQUIRE(err < 1e-5);
    }
}

TEST_CASE("activation spot values and derivatives") {
    Tape<double> tp;
    Matrix<double> x(1, 3);
    x(0, 0) = 0.0;
    x(0, 1) = 1.0;
    x(0, 2) = -20.0;
    auto v = tp.input(x, true);
    auto sw = tp.swish(v);
    REQUIRE_THAT(tp.val(sw)(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-15));
    REQUIRE_THAT(tp.val(sw)(0, 1), Catch::Matchers::WithinAbs(0.7310585786300049, 1e-12));
    REQUIRE_THAT(tp.val(sw)(0, 2), Catch::Matchers::WithinAbs(0.0, 1e-7));

    // d/dx swish(0) = sigma(0) = 0.5
    Matrix<double> w(1, 3);
    w(0, 0) = 1.0;
    tp.backward(tp.weighted_sum(sw, w));
    REQUIRE_THAT(tp.grad(v)(0, 0), Catch::Matchers::WithinAbs(0.5, 1e-12));

    Tape<double> tg;
    auto g = tg.gelu(tg.input(x, false));
    REQUIRE_THAT(tg.val(g)(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-15));
    REQUIRE_THAT(tg.val(g)(0, 1), Catch::Matchers::WithinAbs(0.8413447460685429, 1e-12));
}

TEST_CASE("layer_norm invariances") {
    // Constant input direction carries zero gradient: LN output is
    // invariant to adding c to a whole row.
    Tape<double> tp;
    Rng rng(50);
    auto x = tp.input(random_mat(2, 6, rng), true);
    Matrix<double> ones(1, 6), zeros(1, 6);
    for (index_t j = 0; j < 6; ++j) ones(0, j) = 1.0;
    auto y = tp.layer_norm(x, tp.input(ones), tp.input(zeros), 1e-6);
    tp.backward(tp.weighted_sum(y, random_mat(2, 6, rng)));
    const auto g = tp.grad(x);
    for (index_t i = 0; i < 2; ++i) {
        double row_sum = 0.0;
        for (index_t j = 0; j < 6; ++j) row_sum += g(i, j);
        REQUIRE_THAT(row_sum, Catch::Matchers::WithinAbs(0.0, 1e-10));
    }
}

TEST_CASE("masked_mse closed form and softmax ce value") {
    Tape<double> tp;
    Matrix<double> y(3, 4), t(3, 4);
    for (index_t j = 0; j < 4; ++j) y(1, j) = t(1, j) + 0.5; // constant offset on the only masked row
    y(0, 0) = 99.0;                                          // visible rows must not matter
    auto loss = tp.masked_mse(tp.input(y), t, {1});
    REQUIRE_THAT(tp.val(loss)(0, 0), Catch::Matchers::WithinAbs(0.25, 1e-12));

    Tape<double> tc;
    Matrix<double> logits(1, 3); // uniform logits -> loss = ln(3)
    auto ce = tc.softmax_cross_entropy(tc.input(logits), {2});
    REQUIRE_THAT(tc.val(ce)(0, 0), Catch::Matchers::WithinAbs(std::log(3.0), 1e-12));
}
