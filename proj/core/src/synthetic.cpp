#include "mkcaps/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "mkcaps/errors.hpp"
#include "mkcaps/random.hpp"

namespace mkcaps {
namespace {

std::string sample_filename(std::size_t index, ClassLabel label) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "sample_%04zu_%s.csv", index, to_string(label));
    return buf;
}

} // namespace

void validate(const SynthSpec& spec) {
    if (spec.n_per_class == 0)
        throw ConfigError("synthetic spec is empty: n_per_class must be at least 1");
    if (spec.n_rois < 2) throw ConfigError("synthetic spec: n_rois must be at least 2");
    if (spec.n_timepoints < 3)
        throw ConfigError("synthetic spec: n_timepoints must be at least 3");
    if (!(spec.noise > 0.0))
        throw ConfigError("synthetic spec: noise scale must be positive");
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const SynthBlock& blk = spec.blocks[b];
        if (blk.first > blk.last || blk.last >= spec.n_rois)
            throw ConfigError("synthetic spec: block " + std::to_string(b) + " range [" +
                              std::to_string(blk.first) + ", " + std::to_string(blk.last) +
                              "] not within [0, " + std::to_string(spec.n_rois) + ")");
        for (double c : {blk.coupling_sz, blk.coupling_hc})
            if (!(c >= 0.0 && c < 1.0))
                throw ConfigError("synthetic spec: block " + std::to_string(b) +
                                  " coupling must lie in [0, 1)");
    }
}

TimeSeries synth_time_series(const SynthSpec& spec, std::size_t sample_index, ClassLabel label) {
    RandomStream rng(spec.seed, sample_index);
    const std::size_t R = spec.n_rois;
    const std::size_t T = spec.n_timepoints;

    // Per-ROI mixing weight for its block's latent factor. The coupling is
    // the intra-block correlation at unit noise, so the latent enters with
    // weight sqrt(c) and the ROI's own noise with weight sqrt(1-c).
    std::vector<double> latent_weight(R, 0.0);
    std::vector<const SynthBlock*> block_of(R, nullptr);
    for (const SynthBlock& blk : spec.blocks)
        for (std::size_t r = blk.first; r <= blk.last; ++r) block_of[r] = &blk;
    for (std::size_t r = 0; r < R; ++r) {
        if (block_of[r] == nullptr) continue;
        const double c =
            label == ClassLabel::SZ ? block_of[r]->coupling_sz : block_of[r]->coupling_hc;
        latent_weight[r] = std::sqrt(c);
    }

    std::vector<std::vector<double>> latents(spec.blocks.size(), std::vector<double>(T));
    for (auto& series : latents)
        for (double& v : series) v = rng.normal();

    TimeSeries ts;
    ts.n_rois = R;
    ts.n_timepoints = T;
    ts.values = Tensor({R, T});
    for (std::size_t r = 0; r < R; ++r) {
        const double w = latent_weight[r];
        const double noise_w = std::sqrt(1.0 - w * w) * spec.noise;
        const std::vector<double>* latent = nullptr;
        if (block_of[r] != nullptr)
            latent = &latents[static_cast<std::size_t>(block_of[r] - spec.blocks.data())];
        for (std::size_t t = 0; t < T; ++t) {
            const double eps = rng.normal();
            ts.values(r, t) = (latent ? w * (*latent)[t] : 0.0) + noise_w * eps;
        }
    }
    return ts;
}

SynthResult generate_synthetic(const SynthSpec& spec) {
    validate(spec);
    SynthResult out;
    const std::size_t total = 2 * spec.n_per_class;
    out.manifest.entries.reserve(total);
    out.matrices.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        const ClassLabel label = (i % 2 == 0) ? ClassLabel::SZ : ClassLabel::HC;
        const TimeSeries ts = synth_time_series(spec, i, label);
        ConnectivityMatrix cm = connectivity_matrix(ts);
        out.manifest.entries.push_back(ManifestEntry{sample_filename(i, label), label});
        out.matrices.push_back(std::move(cm.values));
    }
    return out;
}

DatasetManifest write_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    SynthResult result = generate_synthetic(spec);
    std::filesystem::create_directories(out_dir);
    for (std::size_t i = 0; i < result.matrices.size(); ++i)
        save_matrix(result.matrices[i], out_dir / result.manifest.entries[i].path);
    result.manifest.directory = out_dir;
    save_manifest(result.manifest, out_dir / "manifest.csv");
    return result.manifest;
}

} // namespace mkcaps
