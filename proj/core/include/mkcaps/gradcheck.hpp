#pragma once

#include <functional>
#include <map>
#include <string>

#include "mkcaps/tape.hpp"
#include "mkcaps/tensor.hpp"

namespace mkcaps::ad {

using NamedTensors = std::map<std::string, Tensor>;

/// Builds a scalar expression on the given tape from the given parameters.
/// The builder must register every tensor it uses via Tape::param so the
/// reverse pass can report its gradient.
using ScalarBuilder = std::function<Value(Tape&, const NamedTensors&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares the tape gradient of `build` against central finite differences
/// with step `h`, element by element over every parameter. Relative error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
/// Throws NumericError (naming the parameter) if any probe produces a
/// non-finite loss.
GradCheckReport grad_check(const ScalarBuilder& build, const NamedTensors& params, double h);

} // namespace mkcaps::ad
