// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checking in 64-bit.

#pragma once

#include <functional>
#include <vector>

#include "modkit/tensor/autodiff.hpp"

namespace modkit {

using ScalarFn = std::function<Var<double>(Tape<double>&, const Var<double>&)>;

/// max_i |analytic_i - fd_i| / max(1, |analytic_i|) for f at x.
double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-5);

/// Same check over a set of parameters; `loss` builds the objective on a
/// fresh tape (parameters are recorded through Tape::param).
double grad_check_params(const std::function<Var<double>(Tape<double>&)>& loss,
                         const std::vector<Parameter<double>*>& params, double eps = 1e-5);

}  // namespace modkit
