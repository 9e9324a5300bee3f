#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mkcaps/random.hpp"
#include "mkcaps/tape.hpp"
#include "mkcaps/tensor.hpp"

namespace mkcaps {

using ad::conv_columns;
using ad::squash;

enum class DropoutStrategy { none, scalar, vector, capsule };
enum class WeightSharing { per_pair, per_slice };
enum class KernelShape { column, square };
enum class Mode { train, infer };

const char* to_string(DropoutStrategy s);
const char* to_string(WeightSharing s);
const char* to_string(KernelShape s);
DropoutStrategy parse_dropout_strategy(const std::string& token);
WeightSharing parse_weight_sharing(const std::string& token);
KernelShape parse_kernel_shape(const std::string& token);

struct ModelConfig {
    std::size_t n_rois = 116;
    std::vector<std::size_t> kernel_widths = {1, 4, 6, 7, 9, 15};
    std::size_t n_filters = 64;
    std::size_t n_slices = 10;
    std::size_t capsule_len = 20;
    std::size_t n_classes = 2;
    std::size_t routing_iterations = 3;
    bool conv_activation = true;
    DropoutStrategy dropout_strategy = DropoutStrategy::none;
    double dropout_rate = 0.5;
    WeightSharing weight_sharing = WeightSharing::per_pair;
    KernelShape kernel_shape = KernelShape::column;
};

void validate(const ModelConfig& config);

// Where one kernel width's capsules sit in the concatenated capsule list.
// Column kernels have a single output row (out_h = 1); square kernels scan
// both axes and their positions are the flattened (out_h x out_w) grid.
struct ChannelLayout {
    std::size_t width = 0;
    std::size_t out_h = 0;
    std::size_t out_w = 0;
    std::size_t positions = 0;  // out_h * out_w
    std::size_t n_capsules = 0; // positions * n_slices
    std::size_t capsule_offset = 0;
};

struct ModelLayout {
    std::vector<ChannelLayout> channels;
    std::size_t total_capsules = 0;
};

ModelLayout make_layout(const ModelConfig& config);

// Named parameter tensors; std::map keeps iteration (and so serialization and
// SGD update order) deterministic.
struct ModelParams {
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
};

// Capsule index within a channel is position * n_slices + slice.
struct PrimaryCapsules {
    Tensor u;    // [total_capsules, capsule_len]
    Tensor mask; // same shape; entries are 0 or the survivor scale 1/(1-rate)
};

struct RoutingState {
    Tensor b;                         // final logits [n_capsules, n_classes]
    std::vector<Tensor> c_snapshots;  // coupling coefficients, one per iteration
    Tensor s;                         // final pre-squash sums [n_classes, capsule_len]
    Tensor v;                         // class capsules [n_classes, capsule_len]
};

struct ActivationsCache {
    std::vector<Tensor> conv_out; // per channel, post-activation
    Tensor u_raw;                 // squashed primaries before dropout
};

struct ForwardResult {
    Tensor v; // class capsules [n_classes, capsule_len]
    ActivationsCache cache;
    PrimaryCapsules primaries; // after dropout
    RoutingState routing;
};

struct ClassProbabilities {
    std::vector<double> lengths;
    std::size_t predicted = 0;
};

// Builds the dropout mask for one training-mode forward pass. Identity (all
// ones) for strategy none or rate 0; otherwise survivors carry 1/(1-rate).
Tensor make_dropout_mask(const ModelConfig& config, const ModelLayout& layout, RandomStream& rng);

PrimaryCapsules apply_dropout(const PrimaryCapsules& input, const ModelConfig& config,
                              const ModelLayout& layout, Mode mode, RandomStream& rng);

// u_hat[i][j] = W[group(i)][j] . u[i] for every lower capsule i and class j.
Tensor transform_capsules(const Tensor& weights, const Tensor& u,
                          const std::vector<std::size_t>& group_of_capsule,
                          std::size_t n_groups);

// Routing-by-agreement: logits start at zero; each iteration takes the
// class-wise softmax, forms the coupled sums, squashes them, and (except
// after the last iteration) adds the prediction/output agreement back onto
// the logits. Snapshot count equals `iterations`.
RoutingState dynamic_routing(const Tensor& u_hat, std::size_t iterations);

ClassProbabilities class_probabilities(const Tensor& v);

// Tape handles for every model parameter, so a batch of samples can share
// one registration per tensor.
struct TapeParams {
    std::map<std::string, ad::Value> values;
};

TapeParams register_params(ad::Tape& tape, const ModelParams& params);

struct TapeForward {
    ad::Value v;       // [n_classes, capsule_len]
    ad::Value lengths; // [n_classes]
    std::vector<ad::Value> c_iters;
    ad::Value u; // post-dropout primaries
    std::vector<ad::Value> conv_out;
};

// Records one sample's forward pass on the tape. `dropout_mask` is applied
// when non-null (training); pass null for inference semantics.
TapeForward forward_on_tape(ad::Tape& tape, const TapeParams& params, const ModelConfig& config,
                            const ModelLayout& layout, const Tensor& matrix,
                            const Tensor* dropout_mask);

// Eager forward pass. `rng` is consulted only in train mode with an active
// dropout strategy; it may be null in infer mode.
ForwardResult forward(const ModelParams& params, const ModelConfig& config, const Tensor& matrix,
                      Mode mode, RandomStream* rng);

// Slice-index grouping used under per-slice weight sharing (group = capsule
// index modulo n_slices); identity grouping under per-pair sharing.
std::vector<std::size_t> transform_groups(const ModelConfig& config, const ModelLayout& layout);
std::size_t transform_group_count(const ModelConfig& config, const ModelLayout& layout);

// Name -> shape for every learnable tensor the config calls for.
std::map<std::string, std::vector<std::size_t>> param_shapes(const ModelConfig& config);

// Checks that params carry exactly the tensors param_shapes(config) expects.
void validate_params(const ModelParams& params, const ModelConfig& config);

} // namespace mkcaps
