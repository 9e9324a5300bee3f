#include "mkcaps/dataset.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mkcaps/errors.hpp"

namespace mkcaps {
namespace {

namespace fs = std::filesystem;

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Write-temp-then-rename so readers never observe a partial file.
void atomic_write(const fs::path& path, const std::string& contents) {
    const fs::path tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
        out << contents;
        if (!out) throw DataError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("rename to '" + path.string() + "' failed: " + ec.message());
}

std::vector<double> parse_csv_row(const std::string& line, const fs::path& path, std::size_t row) {
    std::vector<double> out;
    const char* p = line.c_str();
    while (true) {
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(p, &end);
        if (end == p)
            throw DataError("matrix file '" + path.string() + "': unparsable value in row " +
                            std::to_string(row));
        out.push_back(v);
        p = end;
        while (*p == ' ' || *p == '\t') ++p;
        if (*p == '\0' || *p == '\r') break;
        if (*p != ',')
            throw DataError("matrix file '" + path.string() + "': expected ',' in row " +
                            std::to_string(row));
        ++p;
    }
    return out;
}

} // namespace

std::size_t DatasetManifest::count(ClassLabel label) const {
    std::size_t n = 0;
    for (const auto& e : entries)
        if (e.label == label) ++n;
    return n;
}

void save_matrix(const Tensor& matrix, const fs::path& path) {
    if (matrix.rank() != 2 || matrix.extent(0) != matrix.extent(1))
        throw DimensionError("save_matrix: expected a square matrix");
    const std::size_t n = matrix.extent(0);
    std::string out;
    out.reserve(n * n * 20);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j) out += ',';
            out += format_value(matrix(i, j));
        }
        out += '\n';
    }
    atomic_write(path, out);
}

Tensor load_matrix(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open matrix file '" + path.string() + "'");

    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(parse_csv_row(line, path, rows.size()));
    }
    if (rows.empty()) throw DataError("matrix file '" + path.string() + "' is empty");

    const std::size_t n = rows[0].size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != n)
            throw DimensionError("matrix file '" + path.string() + "': row " + std::to_string(i) +
                                 " has " + std::to_string(rows[i].size()) + " values, expected " +
                                 std::to_string(n));
    }
    if (rows.size() != n)
        throw DimensionError("matrix file '" + path.string() + "': " + std::to_string(rows.size()) +
                             " rows of " + std::to_string(n) + " values is not square (row " +
                             std::to_string(rows.size() - 1) + " was the last)");

    Tensor m({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(i, j) = rows[i][j];

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::fabs(m(i, j) - m(j, i)) > 1e-9)
                throw DataError("matrix file '" + path.string() + "': asymmetric at (" +
                                std::to_string(i) + ", " + std::to_string(j) +
                                ") beyond 1e-9 tolerance");
    return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::string out = "path,label\n";
    for (const auto& e : manifest.entries) {
        out += e.path;
        out += ',';
        out += to_string(e.label);
        out += '\n';
    }
    atomic_write(path, out);
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest '" + path.string() + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("manifest '" + path.string() + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,label")
        throw DataError("manifest '" + path.string() + "': header must be exactly 'path,label'");

    DatasetManifest manifest;
    manifest.directory = path.parent_path();
    std::size_t row = 0;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos)
            throw DataError("manifest '" + path.string() + "': row " + std::to_string(row) +
                            " is missing the label column");
        const std::string p = line.substr(0, comma);
        const std::string label = line.substr(comma + 1);
        if (p.empty())
            throw DataError("manifest '" + path.string() + "': row " + std::to_string(row) +
                            " has an empty path");
        for (const auto& prev : seen)
            if (prev == p)
                throw DataError("manifest '" + path.string() + "': duplicate path '" + p + "'");
        seen.push_back(p);
        manifest.entries.push_back(ManifestEntry{p, parse_label(label)});
    }
    return manifest;
}

Dataset load_dataset(const fs::path& manifest_path) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    Dataset data;
    data.matrices.reserve(manifest.entries.size());
    data.labels.reserve(manifest.entries.size());
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        Tensor m = load_matrix(manifest.resolve(i));
        if (!data.matrices.empty() && m.extent(0) != data.matrices[0].extent(0))
            throw DimensionError("dataset '" + manifest_path.string() + "': matrix '" +
                                 manifest.entries[i].path + "' is " + std::to_string(m.extent(0)) +
                                 "x" + std::to_string(m.extent(0)) + " but earlier matrices are " +
                                 std::to_string(data.matrices[0].extent(0)) + "x" +
                                 std::to_string(data.matrices[0].extent(0)));
        data.matrices.push_back(std::move(m));
        data.labels.push_back(manifest.entries[i].label);
    }
    return data;
}

} // namespace mkcaps
