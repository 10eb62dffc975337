#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tensor/ops.hpp"
#include "tensor/tensor.hpp"

namespace csts {

struct GradCheckResult {
    double max_rel_error = 0.0;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    bool non_finite = false;
};

// Compares reverse-mode gradients of `f` w.r.t. the leaf `x` against central
// differences. Per component the error is
// |analytic - central| / (|analytic| + |central| + 1e-12). `indices` restricts
// the probed components (all when empty). A non-finite f is reported as
// max_rel_error = +inf with non_finite set.
GradCheckResult finite_diff_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5,
                                  const std::vector<Index>& indices = {});

// Same, but the analytic gradient is supplied (e.g. from one backward pass
// shared across several parameters).
GradCheckResult compare_with_central_differences(const std::function<double()>& f, Tensor x,
                                                 std::span<const double> analytic, double h,
                                                 const std::vector<Index>& indices);

struct OpCheck {
    std::string op;
    double max_rel_error = 0.0;
};

// Checks the backward of every differentiable primitive in isolation on small
// random inputs: the analytic vector-Jacobian product for a random cotangent
// against central differences of <cotangent, op(x)>. Used to localise a
// failing model-level check to the responsible op.
std::vector<OpCheck> op_gradcheck_suite(std::uint64_t seed = 1, double h = 1e-6);

} // namespace csts
