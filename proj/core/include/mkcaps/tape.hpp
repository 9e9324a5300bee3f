#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mkcaps/tensor.hpp"

namespace mkcaps::ad {

/// Handle to a node on a Tape.
struct Value {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t index = npos;
    bool valid() const { return index != npos; }
};

class OpBase {
public:
    virtual ~OpBase() = default;
    virtual const char* name() const = 0;
    virtual Tensor eval(const std::vector<const Tensor*>& in) const = 0;
    /// Accumulates d(loss)/d(input) into gin; entries are pre-zeroed tensors
    /// shaped like the corresponding input.
    virtual void grad(const std::vector<const Tensor*>& in, const Tensor& out,
                      const Tensor& gout, const std::vector<Tensor*>& gin) const = 0;
};

using GradientMap = std::map<std::string, Tensor>;

/// Records a forward computation as a linear list of operations so that it
/// can be replayed verbatim and differentiated in reverse. Learnable leaves
/// are registered by name; backward() returns one accumulated gradient per
/// registered parameter.
class Tape {
public:
    Value constant(Tensor t);
    Value param(const std::string& name, Tensor t);

    const Tensor& value(Value v) const;
    std::size_t node_count() const { return nodes_.size(); }
    std::vector<std::string> param_names() const;

    // Elementwise and reduction ops.
    Value add(Value a, Value b);
    Value scale(Value a, double c);
    Value mul(Value a, Value b);
    Value sum(Value a);
    Value mean_scalars(std::span<const Value> scalars);
    Value relu(Value a);
    Value apply_mask(Value a, Tensor mask);

    // Structured ops.
    Value conv2d_valid(Value input, Value weight, Value bias);
    Value project(Value weight, Value x, Value bias);
    Value gather(Value x, std::vector<std::size_t> index_map, std::vector<std::size_t> out_shape);
    Value concat_rows(std::span<const Value> parts);

    // Capsule ops.
    Value squash_rows(Value x);
    Value softmax_rows(Value x);
    Value capsule_transform(Value weights, Value capsules,
                            std::vector<std::size_t> group_of_capsule, std::size_t n_groups);
    Value weighted_sum(Value coefficients, Value predictions);
    Value agreement(Value predictions, Value outputs);
    Value row_norms(Value x);
    Value margin_loss(Value lengths, std::size_t target,
                      double m_plus, double m_minus, double lambda, bool squared);

    /// Re-executes every recorded operation from the stored leaves and
    /// returns the recomputed value of `v` (bit-identical to value(v)).
    Tensor replay(Value v) const;

    /// Reverse pass from a scalar terminal. Returns d(out)/d(param) for every
    /// registered parameter (zero tensors for parameters the output does not
    /// depend on). Throws ContractError if `out` is not scalar.
    GradientMap backward(Value out, double adjoint = 1.0);

private:
    struct Node {
        std::shared_ptr<const OpBase> op; // null for leaves
        std::vector<std::size_t> inputs;
        Tensor value;
        std::string param_name; // non-empty only for learnable leaves
    };

    Value push(std::shared_ptr<const OpBase> op, std::vector<std::size_t> inputs);
    const Tensor& node_value(std::size_t i) const { return nodes_[i].value; }

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> params_;
};

/// Valid stride-1 cross-correlation of full-height kernels over the columns
/// of a matrix: kernels [F, H, k] slide across input [H, W] giving one output
/// row of width W-k+1 per filter. Kernel height must equal the input height.
Tensor conv_columns(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// Eq.-style vector squashing: (|s|^2 / (1 + |s|^2)) * s / |s|, with the zero
/// vector mapped to zero. Output norm is always < 1.
std::vector<double> squash(std::span<const double> s);

} // namespace mkcaps::ad
