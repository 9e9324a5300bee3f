#pragma once

#include <optional>
#include <span>
#include <string>

#include "mkcaps/tensor.hpp"

namespace mkcaps {

enum class ClassLabel { SZ = 0, HC = 1 };

std::string to_string(ClassLabel label);
ClassLabel parse_label(const std::string& token);

/// Per-region resting-state signals: one row per ROI, one column per
/// timepoint. Correlation needs at least 3 timepoints and nonzero variance
/// in every row.
struct TimeSeries {
    std::size_t n_rois = 0;
    std::size_t n_timepoints = 0;
    Tensor values; // [n_rois, n_timepoints]

    TimeSeries() = default;
    TimeSeries(std::size_t rois, std::size_t timepoints);

    std::span<const double> roi(std::size_t r) const;
    std::span<double> roi(std::size_t r);
};

/// Symmetric matrix of Fisher-z connectivity values with a zero diagonal.
struct ConnectivityMatrix {
    Tensor values; // [n, n]
    std::optional<ClassLabel> label;

    std::size_t n() const { return values.rank() == 2 ? values.extent(0) : 0; }
};

/// Sample Pearson correlation, clamped to [-1, 1]. Requires equal lengths
/// >= 3 and nonzero variance in both series.
double pearson(std::span<const double> x, std::span<const double> y);

/// Fisher r-to-z transform, atanh(r) with |r| clamped to 1 - 1e-7 so that
/// duplicate series stay finite. Requires |r| <= 1.
double fisher_z(double r);

/// Builds the full symmetric connectivity matrix: off-diagonal entries are
/// fisher_z(pearson(row_i, row_j)), the diagonal is forced to zero.
ConnectivityMatrix connectivity_matrix(const TimeSeries& ts);

} // namespace mkcaps
