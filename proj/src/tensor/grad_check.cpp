// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace modkit {
namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    auto xv = tape.leaf(x, true);
    auto y = f(tape, xv);
    tape.backward(y);
    analytic = xv.grad();
  }
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape(false);
    return f(tape, tape.constant(at)).value().item();
  };
  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double grad_check_params(const std::function<Var<double>(Tape<double>&)>& loss,
                         const std::vector<Parameter<double>*>& params, double eps) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    auto y = loss(tape);
    tape.backward(y);
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    return loss(tape).value().item();
  };
  double worst = 0.0;
  for (auto* p : params) {
    const Tensor<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = eval();
      p->value[i] = orig - eps;
      const double down = eval();
      p->value[i] = orig;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace modkit
