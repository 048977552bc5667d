#pragma once

#include "hetlab/operator.hpp"
#include "hetlab/spectra.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace hetlab::io {

namespace fs = std::filesystem;

/// Shortest round-trip decimal ('.' separator, up to 17 significant digits).
std::string format_double(double x);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Dense matrix from CSV: one row per line, comma-separated decimals. Blank lines are skipped.
Eigen::MatrixXd load_matrix_csv(const fs::path& path);
void save_matrix_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::vector<std::string>& header = {});

/// Partition from a JSON list of [start, end] pairs, 1-based and inclusive.
BlockPartition load_partition_json(const fs::path& path);
BlockPartition partition_from_json(const nlohmann::json& j);
nlohmann::json partition_to_json(const BlockPartition& p);

/// Eigenvalue list: one value per line, optional header line, any order.
Eigen::VectorXd load_eigenvalues_csv(const fs::path& path);

/// Density on a grid: header "t,density".
std::string density_csv(const SpectralDensity& d, const GridSpec& grid);

/// Nodes/weights sidecar with sigma and provenance.
nlohmann::json density_to_json(const SpectralDensity& d);
SpectralDensity density_from_json(const nlohmann::json& j);
SpectralDensity load_density_json(const fs::path& path);

nlohmann::json grid_to_json(const GridSpec& g);
nlohmann::json report_to_json(const HeterogeneityReport& r);
std::string pairwise_csv(const HeterogeneityReport& r);

/// Pretty-printed JSON with a trailing newline.
std::string dump(const nlohmann::json& j);

}  // namespace hetlab::io
