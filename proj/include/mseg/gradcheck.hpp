#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

inline constexpr double kGradcheckStep = 1e-3;
inline constexpr double kGradcheckTolerance = 1e-4;
/// Denominator floor of the relative error: gradients smaller than this are
/// compared in absolute terms, where cancellation noise would otherwise
/// dominate.
inline constexpr double kGradcheckFloor = 1e-3;

struct GradcheckResult {
  std::string op;
  double max_rel_err = 0.0;
  std::size_t coords = 0;
  std::string worst;  // "<leaf index>[<flat index>]" of the largest error

  bool passed() const { return max_rel_err < kGradcheckTolerance; }
};

/// Compares the tape gradient of sum(fn() * r), r a fixed random projection,
/// against central differences in 64-bit arithmetic at the nominal step. A
/// coordinate whose h and 2h difference quotients disagree (the stencil
/// crosses a ReLU or max kink) is re-probed at steps 100x and 10000x smaller. `leaves` must be the
/// tensors fn reads (shared handles); they are perturbed in place and
/// restored. At most `max_coords` coordinates per leaf are probed.
GradcheckResult gradcheck(const std::string& op, const std::function<TensorD()>& fn,
                          const std::vector<TensorD>& leaves, std::uint64_t seed,
                          int max_coords = 16, double step = kGradcheckStep);

/// Scopes accepted by run_gradcheck_suite.
const std::vector<std::string>& gradcheck_scopes();

/// Finite-difference suite for one scope; one result per differentiable op
/// (or module) in the scope. Unknown scope raises ConfigError.
std::vector<GradcheckResult> run_gradcheck_suite(const std::string& scope, std::uint64_t seed);

}  // namespace mseg
