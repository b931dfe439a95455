#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xvt/tensor.hpp"

namespace xvt {

// Finite-difference verification of reverse-mode gradients. Always run in
// double precision: central differences are unreliable in single precision.
//
// `f` must rebuild its computation from the current values of `leaves` on
// every call (the harness edits leaf values in place between calls). Returns
//   max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// with numeric = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
using ScalarFn = std::function<Tensor<double>()>;

double finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> leaves,
                         double eps = 1e-5);

// Single-leaf convenience overload.
double finite_diff_check(const ScalarFn& f, Tensor<double> leaf, double eps = 1e-5);

// Named gradient-check cases covering every differentiable operation in the
// library, each evaluated at small random instances. `run(seed)` returns the
// max relative error for one seed.
struct GradCheckCase {
  std::string name;
  std::function<double(std::uint64_t seed)> run;
};

const std::vector<GradCheckCase>& gradcheck_cases();

// Runs one case over `seeds` seeds and returns the worst error.
double run_gradcheck_case(const GradCheckCase& c, int seeds);

}  // namespace xvt
