#include "mkcaps/gradcheck.hpp"

#include <cmath>

#include "mkcaps/errors.hpp"

namespace mkcaps::ad {
namespace {

double eval_loss(const ScalarBuilder& build, const NamedTensors& params,
                 const std::string& probed) {
    Tape tape;
    Value out = build(tape, params);
    const Tensor& t = tape.value(out);
    if (!t.is_scalar()) throw ContractError("grad_check: builder must produce a scalar");
    const double loss = t[0];
    if (!std::isfinite(loss))
        throw NumericError("grad_check: non-finite loss while probing parameter '" + probed + "'");
    return loss;
}

} // namespace

GradCheckReport grad_check(const ScalarBuilder& build, const NamedTensors& params, double h) {
    if (h <= 0.0) throw ContractError("grad_check: step must be positive");

    Tape tape;
    Value out = build(tape, params);
    GradientMap analytic = tape.backward(out);

    GradCheckReport report;
    NamedTensors probe = params;
    for (auto& [name, tensor] : probe) {
        const auto it = analytic.find(name);
        if (it == analytic.end())
            throw ContractError("grad_check: builder did not register parameter '" + name + "'");
        const Tensor& grad = it->second;
        for (std::size_t e = 0; e < tensor.size(); ++e) {
            const double saved = tensor[e];
            tensor[e] = saved + h;
            const double plus = eval_loss(build, probe, name);
            tensor[e] = saved - h;
            const double minus = eval_loss(build, probe, name);
            tensor[e] = saved;

            const double numeric = (plus - minus) / (2.0 * h);
            const double a = grad[e];
            const double rel = std::fabs(a - numeric) /
                               std::max(1e-8, std::fabs(a) + std::fabs(numeric));
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_index = e;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace mkcaps::ad
