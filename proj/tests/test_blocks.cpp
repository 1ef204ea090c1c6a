// Copyright 2025 the ampp authors
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include "ampp/blocks.hpp"
#include "ampp/verify.hpp"
#include "helpers.hpp"

using namespace ampp;
using testutil::random_mat;

TEST_CASE("swiglu hidden width rule") {
    REQUIRE(swiglu_hidden(192) == 512);
    REQUIRE(swiglu_hidden(768) == 2048);
    REQUIRE(swiglu_hidden(1024) == 2736);
    REQUIRE(swiglu_hidden(384) == 1024);
    REQUIRE(swiglu_hidden(512) == 1368);
    REQUIRE(swiglu_hidden(64) == 176);
    REQUIRE(swiglu_hidden(8) == 24);
}

TEST_CASE("activation values") {
    REQUIRE(swish(0.0) == 0.0);
    REQUIRE_THAT(swish(1.0), Catch::Matchers::WithinAbs(0.7310585786300049, 1e-12));
    REQUIRE_THAT(swish(-30.0), Catch::Matchers::WithinAbs(0.0, 1e-10));
    REQUIRE(gelu(0.0) == 0.0);
    REQUIRE_THAT(gelu(1.0), Catch::Matchers::WithinAbs(0.8413447460685429, 1e-12));
}

TEST_CASE("layer_norm rows") {
    Matrix<double> x(3, 2);
    x(0, 0) = 5.0;
    x(0, 1) = 5.0; // constant row -> zeros
    x(1, 0) = 1.0;
    x(1, 1) = -1.0; // already unit variance
    Matrix<double> scale(1, 2), shift(1, 2);
    scale(0, 0) = scale(0, 1) = 1.0;
    const Matrix<double> y = layer_norm(x, scale, shift, kLnEps);
    REQUIRE_THAT(y(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-9));
    REQUIRE_THAT(y(1, 0), Catch::Matchers::WithinAbs(1.0, 1e-5));
    REQUIRE_THAT(y(1, 1), Catch::Matchers::WithinAbs(-1.0, 1e-5));

    shift(0, 0) = shift(0, 1) = 4.5; // zero input row picks up the shift
    const Matrix<double> z = layer_norm(Matrix<double>(1, 2), scale, shift, kLnEps);
    REQUIRE_THAT(z(0, 0), Catch::Matchers::WithinAbs(4.5, 1e-12));
}

TEST_CASE("swiglu_ffn gate behavior and scalar value") {
    Rng rng(1);
    BlockParams<double> bp = init_block<double>(8, 2, rng);

    Matrix<double> zero_in(3, 8);
    const Matrix<double> bias_only = swiglu_ffn(zero_in, bp.swiglu);
    for (index_t i = 0; i < 3; ++i)
        for (index_t j = 0; j < 8; ++j) REQUIRE(bias_only(i, j) == bp.swiglu.bo(0, j));

    SwigluParams<double> gated = bp.swiglu;
    for (index_t i = 0; i < gated.v.size(); ++i) gated.v.data()[i] = 0.0;
    const Matrix<double> annihilated = swiglu_ffn(random_mat(3, 8, rng), gated);
    for (index_t i = 0; i < 3; ++i)
        for (index_t j = 0; j < 8; ++j) REQUIRE_THAT(annihilated(i, j), Catch::Matchers::WithinAbs(gated.bo(0, j), 1e-12));

    // Scalar case W=V=O=1, x=1: Swish(1)*1*1.
    SwigluParams<double> s;
    s.w = Matrix<double>(1, 1);
    s.v = Matrix<double>(1, 1);
    s.o = Matrix<double>(1, 1);
    s.bo = Matrix<double>(1, 1);
    s.w(0, 0) = s.v(0, 0) = s.o(0, 0) = 1.0;
    Matrix<double> one(1, 1);
    one(0, 0) = 1.0;
    REQUIRE_THAT(swiglu_ffn(one, s)(0, 0), Catch::Matchers::WithinAbs(0.7310585786300049, 1e-12));
}

TEST_CASE("mlp_ffn zero weights broadcast b2") {
    Rng rng(2);
    BlockParams<double> bp = init_block<double>(8, 2, rng);
    MlpParams<double> zeroed = bp.mlp;
    for (index_t i = 0; i < zeroed.w1.size(); ++i) zeroed.w1.data()[i] = 0.0;
    for (index_t i = 0; i < zeroed.w2.size(); ++i) zeroed.w2.data()[i] = 0.0;
    for (index_t i = 0; i < zeroed.b1.size(); ++i) zeroed.b1.data()[i] = 0.0;
    const Matrix<double> out = mlp_ffn(random_mat(4, 8, rng), zeroed);
    for (index_t i = 0; i < 4; ++i)
        for (index_t j = 0; j < 8; ++j) REQUIRE(out(i, j) == zeroed.b2(0, j));
}

TEST_CASE("mha single token and zero values") {
    Rng rng(3);
    BlockParams<double> bp = init_block<double>(8, 2, rng);
    const Matrix<double> x = random_mat(1, 8, rng);

    // L=1: softmax over one key is 1, so out = (x Wv + bv) Wo + bo.
    const Matrix<double> got = mha(x, bp.attn, 2);
    Matrix<double> v = matmul(x, bp.attn.wv);
    for (index_t j = 0; j < 8; ++j) v(0, j) += bp.attn.bv(0, j);
    Matrix<double> want = matmul(v, bp.attn.wo);
    for (index_t j = 0; j < 8; ++j) want(0, j) += bp.attn.bo(0, j);
    REQUIRE(max_abs_diff(got, want) < 1e-12);

    AttnParams<double> novalue = bp.attn;
    for (index_t i = 0; i < novalue.wv.size(); ++i) novalue.wv.data()[i] = 0.0;
    for (index_t i = 0; i < novalue.bv.size(); ++i) novalue.bv.data()[i] = 0.0;
    for (index_t i = 0; i < novalue.bo.size(); ++i) novalue.bo.data()[i] = 0.0;
    const Matrix<double> silent = mha(random_mat(5, 8, rng), novalue, 2);
    for (index_t i = 0; i < silent.size(); ++i) REQUIRE_THAT(silent.data()[i], Catch::Matchers::WithinAbs(0.0, 1e-14));
}

TEST_CASE("mha permutation equivariance without rope") {
    Rng rng(4);
    BlockParams<double> bp = init_block<double>(16, 4, rng);
    const Matrix<double> x = random_mat(6, 16, rng);
    const std::vector<index_t> perm = {3, 0, 5, 1, 4, 2};
    Matrix<double> xp(6, 16);
    for (index_t i = 0; i < 6; ++i)
        for (index_t j = 0; j < 16; ++j) xp(i, j) = x(perm[static_cast<std::size_t>(i)], j);
    const Matrix<double> y = mha(x, bp.attn, 4);
    const Matrix<double> yp = mha(xp, bp.attn, 4);
    for (index_t i = 0; i < 6; ++i)
        for (index_t j = 0; j < 16; ++j)
            REQUIRE_THAT(yp(i, j), Catch::Matchers::WithinAbs(y(perm[static_cast<std::size_t>(i)], j), 1e-10));
}

TEST_CASE("rope identity, norms, relative dot products") {
    Rng rng(5);
    const index_t heads = 2, d = 16;
    const RopeTable<double> table = RopeTable<double>::build(128, d / heads);
    for (index_t i = 0; i < table.cos_t.size(); ++i) {
        REQUIRE(table.cos_t.data()[i] <= 1.0);
        REQUIRE(table.cos_t.data()[i] >= -1.0);
    }

    const Matrix<double> x = random_mat(1, d, rng);
    REQUIRE(max_abs_diff(rope_rotate(x, {0}, table, heads), x) == 0.0);

    const Matrix<double> q = random_mat(1, d, rng), k = random_mat(1, d, rng);
    auto dot = [&](const Matrix<double> &a, const Matrix<double> &b) {
        double s = 0.0;
        for (index_t j = 0; j < d; ++j) s += a(0, j) * b(0, j);
        return s;
    };
    const double base_dot = dot(rope_rotate(q, {11}, table, heads), rope_rotate(k, {4}, table, heads));
    for (index_t s : {1, 9, 57}) {
        const double shifted = dot(rope_rotate(q, {11 + s}, table, heads), rope_rotate(k, {4 + s}, table, heads));
        REQUIRE_THAT(shifted, Catch::Matchers::WithinRel(base_dot, 1e-5));
    }

    const Matrix<double> y = rope_rotate(random_mat(7, d, rng), {0, 3, 9, 2, 60, 5, 1}, table, heads);
    REQUIRE(y.rows() == 7);
    REQUIRE_THROWS_AS(RopeTable<double>::build(16, 7), Error); // odd head width
}

TEST_CASE("block zero-weight trace and both LN modes") {
    Rng rng(6);
    for (const bool branch_norm : {true, false}) {
        BlockParams<double> bp = init_block<double>(8, 2, rng, false, branch_norm);
        for_each_block_tensor(bp, [](const char *, Matrix<double> &m, TensorRole role) {
            if (role == TensorRole::kLnScale) {
                for (index_t i = 0; i < m.size(); ++i) m.data()[i] = 1.0;
            } else if (role != TensorRole::kLnShift) {
                for (index_t i = 0; i < m.size(); ++i) m.data()[i] = 0.0;
            } else {
                for (index_t i = 0; i < m.size(); ++i) m.data()[i] = 0.0;
            }
        });
        const Matrix<double> x = random_mat(5, 8, rng);
        const Matrix<double> got = block_forward(x, bp);
        const Matrix<double> want = refimpl::layer_norm(x, nullptr, nullptr, kLnEps);
        REQUIRE(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("block matches the independent three-equation trace") {
    const CheckResult r = check_eq_trace();
    INFO(r.detail);
    REQUIRE(r.pass);

    // Tiny d=2, L=1 instance against the loop reference.
    Rng rng(7);
    BlockParams<double> bp = init_block<double>(2, 1, rng);
    const Matrix<double> x = random_mat(1, 2, rng);
    const Matrix<double> got = block_forward(x, bp);
    const Matrix<double> want = refimpl::block(x, bp, nullptr);
    REQUIRE(got.rows() == 1);
    REQUIRE(got.cols() == 2);
    REQUIRE(max_abs_diff(got, want) < 1e-10);
}

TEST_CASE("block with rope matches reference and keeps shape") {
    Rng rng(8);
    BlockParams<double> bp = init_block<double>(16, 4, rng, true);
    const RopeTable<double> table = RopeTable<double>::build(64, 4);
    const std::vector<index_t> pos = {0, 5, 2, 9, 1};
    const Matrix<double> x = random_mat(5, 16, rng);
    const Matrix<double> got = block_forward(x, bp, &table, &pos);
    const Matrix<double> want = refimpl::block(x, bp, &pos);
    REQUIRE(max_abs_diff(got, want) < 1e-9);
}

TEST_CASE("standalone block gradient passes finite differences") {
    // d=8, heads=2, L=6: every block tensor gets checked through a scalar
    // readout of the block output.
    Rng rng(9);
    BlockParams<double> bp = init_block<double>(8, 2, rng);
    const Matrix<double> x0 = random_mat(6, 8, rng);
    const Matrix<double> w = random_mat(6, 8, rng);

    std::vector<Matrix<double> *> slots;
    for_each_block_tensor(bp, [&](const char *, Matrix<double> &m, TensorRole) { slots.push_back(&m); });

    auto loss_value = [&]() {
        Tape<double> tp;
        BlockVars<double> bv = register_block(tp, bp, false);
        auto y = block_graph(tp, tp.input(x0), bv, static_cast<const RopeAngles<double> *>(nullptr));
        return tp.val(tp.weighted_sum(y, w))(0, 0);
    };

    std::vector<Matrix<double>> grads;
    {
        Tape<double> tp;
        BlockVars<double> bv = register_block(tp, bp, true);
        auto y = block_graph(tp, tp.input(x0), bv, static_cast<const RopeAngles<double> *>(nullptr));
        tp.backward(tp.weighted_sum(y, w));
        const std::vector<const Tape<double>::Var *> vars = {
            &bv.ln1.scale, &bv.ln1.shift, &bv.ln2.scale, &bv.ln2.shift, &bv.ln3.scale, &bv.ln3.shift,
            &bv.mlp.w1,    &bv.mlp.b1,    &bv.mlp.w2,    &bv.mlp.b2,    &bv.attn.wq,   &bv.attn.bq,
            &bv.attn.wk,   &bv.attn.bk,   &bv.attn.wv,   &bv.attn.bv,   &bv.attn.wo,   &bv.attn.bo,
            &bv.swiglu.w,  &bv.swiglu.v,  &bv.swiglu.o,  &bv.swiglu.bo};
        REQUIRE(vars.size() == slots.size());
        for (const auto *v : vars) grads.push_back(tp.grad(*v));
    }

    Rng pick(10);
    double worst = 0.0;
    const double step = 1e-5;
    for (std::size_t t = 0; t < slots.size(); ++t) {
        Matrix<double> &m = *slots[t];
        for (int c = 0; c < 4; ++c) {
            const index_t i = static_cast<index_t>(pick.uniform_u64(static_cast<std::uint64_t>(m.size())));
            const double keep = m.data()[i];
            m.data()[i] = keep + step;
            const double up = loss_value();
            m.data()[i] = keep - step;
            const double dn = loss_value();
            m.data()[i] = keep;
            const double fd = (up - dn) / (2.0 * step);
            const double ga = grads[t].data()[i];
            if (std::abs(fd) < 1e-7 && std::abs(ga) < 1e-7) continue;
            worst = std::max(worst, std::abs(ga - fd) / std::max(std::abs(fd), 1e-8));
        }
    }
    INFO("worst rel err " << worst);
    REQUIRE(worst < 1e-4);
}
