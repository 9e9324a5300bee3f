#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mkcaps/connectivity.hpp"
#include "mkcaps/dataset.hpp"

namespace mkcaps {

// A contiguous ROI range [first, last] whose members share a latent factor.
// The coupling strength is the intra-block correlation each class would show
// at unit noise; 0 means the block carries no signal for that class.
struct SynthBlock {
    std::size_t first = 0;
    std::size_t last = 0;
    double coupling_sz = 0.0;
    double coupling_hc = 0.0;
};

struct SynthSpec {
    std::size_t n_rois = 16;
    std::size_t n_timepoints = 200;
    std::size_t n_per_class = 100;
    std::vector<SynthBlock> blocks;
    double noise = 1.0;
    std::uint64_t seed = 0;
};

struct SynthResult {
    DatasetManifest manifest; // paths filled; directory empty until written
    std::vector<Tensor> matrices;
};

// Validates the spec; throws ConfigError on out-of-range fields and an
// empty-spec error when n_per_class is 0.
void validate(const SynthSpec& spec);

// Generates 2*n_per_class connectivity matrices with alternating SZ/HC
// labels. Each sample's time series mixes per-block latent factors into the
// member ROIs and adds independent white noise everywhere. Fully determined
// by the spec including its seed.
SynthResult generate_synthetic(const SynthSpec& spec);

// Raw series for one sample (used by tests probing the mixing itself).
TimeSeries synth_time_series(const SynthSpec& spec, std::size_t sample_index, ClassLabel label);

// Generates and writes matrices plus manifest.csv under out_dir, creating the
// directory if needed. Returns the manifest (directory set to out_dir).
DatasetManifest write_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

} // namespace mkcaps
