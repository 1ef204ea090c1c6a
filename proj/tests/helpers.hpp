// Copyright 2025 the ampp authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <functional>
#include <vector>

#include "ampp/autodiff.hpp"
#include "ampp/matrix.hpp"
#include "ampp/rng.hpp"

namespace ampp::testutil {

inline Matrix<double> random_mat(index_t r, index_t c, Rng &rng, double scale = 1.0) {
    Matrix<double> m(r, c);
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
    return m;
}

// Central finite differences against the tape gradient for a scalar graph
// over a set of input matrices. Returns the worst relative error with the
// same floor the production grad_check uses.
using GraphFn = std::function<Tape<double>::Var(Tape<double> &, const std::vector<Tape<double>::Var> &)>;

inline double fd_worst_rel_err(std::vector<Matrix<double>> inputs, const GraphFn &build, double step = 1e-5) {
    std::vector<Matrix<double>> grads;
    {
        Tape<double> tp;
        std::vector<Tape<double>::Var> vars;
        vars.reserve(inputs.size());
        for (auto &m : inputs) vars.push_back(tp.input(m, true));
        auto out = build(tp, vars);
        tp.backward(out);
        for (auto v : vars) grads.push_back(tp.grad(v));
    }
    auto value_at = [&](const std::vector<Matrix<double>> &in) {
        Tape<double> tp;
        std::vector<Tape<double>::Var> vars;
        vars.reserve(in.size());
        for (const auto &m : in) vars.push_back(tp.input(m, false));
        return tp.val(build(tp, vars))(0, 0);
    };
    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t)
        for (index_t i = 0; i < inputs[t].size(); ++i) {
            const double keep = inputs[t].data()[i];
            inputs[t].data()[i] = keep + step;
            const double up = value_at(inputs);
            inputs[t].data()[i] = keep - step;
            const double dn = value_at(inputs);
            inputs[t].data()[i] = keep;
            const double fd = (up - dn) / (2.0 * step);
            const double ga = grads[t].data()[i];
            if (std::abs(fd) < 1e-7 && std::abs(ga) < 1e-7) continue;
            worst = std::max(worst, std::abs(ga - fd) / std::max(std::abs(fd), 1e-8));
        }
    return worst;
}

} // namespace ampp::testutil
