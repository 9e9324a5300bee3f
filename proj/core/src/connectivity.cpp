#include "mkcaps/connectivity.hpp"

#include <cmath>

#include "mkcaps/errors.hpp"

namespace mkcaps {

std::string to_string(ClassLabel label) { return label == ClassLabel::SZ ? "SZ" : "HC"; }

ClassLabel parse_label(const std::string& token) {
    if (token == "SZ") return ClassLabel::SZ;
    if (token == "HC") return ClassLabel::HC;
    throw DataError("unknown class label '" + token + "' (allowed: SZ, HC)");
}

TimeSeries::TimeSeries(std::size_t rois, std::size_t timepoints)
    : n_rois(rois), n_timepoints(timepoints), values({rois, timepoints}) {}

std::span<const double> TimeSeries::roi(std::size_t r) const {
    return {values.data() + r * n_timepoints, n_timepoints};
}

std::span<double> TimeSeries::roi(std::size_t r) {
    return {values.data() + r * n_timepoints, n_timepoints};
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw DimensionError("pearson: series lengths differ (" + std::to_string(x.size()) +
                             " vs " + std::to_string(y.size()) + ")");
    const std::size_t n = x.size();
    if (n < 3) throw DimensionError("pearson: need at least 3 timepoints");

    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_x += x[i];
        mean_y += y[i];
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mean_x;
        const double dy = y[i] - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateInputError("pearson: zero-variance series");

    const double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

double fisher_z(double r) {
    if (std::fabs(r) > 1.0)
        throw Error("fisher_z: correlation " + std::to_string(r) + " outside [-1, 1]");
    constexpr double kCap = 1.0 - 1e-7;
    return std::atanh(std::clamp(r, -kCap, kCap));
}

ConnectivityMatrix connectivity_matrix(const TimeSeries& ts) {
    if (ts.n_timepoints < 3)
        throw DimensionError("connectivity_matrix: need at least 3 timepoints");
    ConnectivityMatrix m;
    m.values = Tensor({ts.n_rois, ts.n_rois});
    for (std::size_t i = 0; i < ts.n_rois; ++i) {
        for (std::size_t j = i + 1; j < ts.n_rois; ++j) {
            double z;
            try {
                z = fisher_z(pearson(ts.roi(i), ts.roi(j)));
            } catch (const DegenerateInputError&) {
                throw DegenerateInputError("connectivity_matrix: zero-variance ROI in pair (" +
                                           std::to_string(i) + ", " + std::to_string(j) + ")");
            }
            m.values(i, j) = z;
            m.values(j, i) = z;
        }
    }
    return m;
}

} // namespace mkcaps
