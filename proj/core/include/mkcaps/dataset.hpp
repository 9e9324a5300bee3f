#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mkcaps/connectivity.hpp"
#include "mkcaps/tensor.hpp"

namespace mkcaps {

/// One dataset entry: a matrix file (relative to the manifest's directory)
/// and its class label.
struct ManifestEntry {
    std::string path;
    ClassLabel label;
};

struct DatasetManifest {
    std::filesystem::path directory; // where the manifest file lives
    std::vector<ManifestEntry> entries;

    std::size_t count(ClassLabel label) const;
    std::filesystem::path resolve(std::size_t i) const { return directory / entries[i].path; }
};

/// Fully loaded dataset, matrices in manifest order.
struct Dataset {
    std::vector<Tensor> matrices;
    std::vector<ClassLabel> labels;

    std::size_t size() const { return matrices.size(); }
    std::size_t n_rois() const { return matrices.empty() ? 0 : matrices[0].extent(0); }
};

/// Matrix files are UTF-8 text, N lines of N comma-separated decimals, no
/// header. Values are written with 17 significant digits so a save/load
/// round trip is bit-exact. Writes are atomic (temp file + rename).
void save_matrix(const Tensor& matrix, const std::filesystem::path& path);
Tensor load_matrix(const std::filesystem::path& path);

/// Manifest files are CSV with the exact header `path,label`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

Dataset load_dataset(const std::filesystem::path& manifest_path);

} // namespace mkcaps
