#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <doctest.h>

#include "colodiff/autograd.hpp"
#include "colodiff/rng.hpp"
#include "colodiff/tensor.hpp"

namespace colodiff::testutil {

// Central finite differences against the reverse-mode gradients, both in
// double precision. `build` must construct the scalar loss from the given
// leaves; it is re-invoked per perturbation (tape = nullptr there).
template <typename BuildFn>
void check_gradients(const std::vector<Tensor<double>>& inputs, BuildFn build, double tol,
                     double h = 1e-5) {
    std::vector<Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(leaf(t));
    Tape<double> tape;
    Var<double> loss = build(&tape, leaves);
    REQUIRE(loss->value.numel() == 1);
    tape.backward(loss);

    for (size_t li = 0; li < inputs.size(); ++li) {
        for (int64_t j = 0; j < inputs[li].numel(); ++j) {
            auto run = [&](double delta) {
                std::vector<Var<double>> ls;
                ls.reserve(inputs.size());
                for (const auto& t : inputs) ls.push_back(leaf(t));
                ls[li]->value[j] += delta;
                return build(static_cast<Tape<double>*>(nullptr), ls)->value[0];
            };
            const double fd = (run(h) - run(-h)) / (2.0 * h);
            const double an = leaves[li]->has_grad ? leaves[li]->grad[j] : 0.0;
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            const double rel = std::abs(fd - an) / denom;
            CHECK_MESSAGE(rel <= tol, "input ", li, " elem ", j, ": analytic ", an, " vs fd ",
                          fd, " (rel ", rel, ")");
        }
    }
}

inline Tensor<double> randn(Rng& rng, Shape shape, double stddev = 1.0) {
    return rng.normal_tensor<double>(std::move(shape), stddev);
}

}  // namespace colodiff::testutil
