#include "hetlab/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hetlab::io {

using nlohmann::json;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_double(const std::string& field, double& out) {
  const std::string t = trim(field);
  if (t.empty()) return false;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  if (*begin == '+') ++begin;
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

}  // namespace

Eigen::MatrixXd load_matrix_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) {
      double v = 0.0;
      if (!parse_double(field, v))
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + trim(field) + "'");
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": row has " + std::to_string(row.size()) +
                       " entries, expected " + std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError(path.string() + ": no data");
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

void save_matrix_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  std::string out;
  if (!header.empty()) {
    for (std::size_t k = 0; k < header.size(); ++k) out += (k ? "," : "") + header[k];
    out += '\n';
  }
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + format_double(m(i, j));
    out += '\n';
  }
  write_text(path, out);
}

BlockPartition partition_from_json(const json& j) {
  if (!j.is_array()) throw InputError("partition JSON must be a list of [start, end] pairs");
  std::vector<BlockPartition::Range> ranges;
  for (const auto& item : j) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_number_integer() || !item[1].is_number_integer())
      throw InputError("partition entry must be [start, end] with integer bounds");
    const auto start = item[0].get<long long>();
    const auto end = item[1].get<long long>();
    if (start < 1 || end < start) throw InputError("partition entry [" + std::to_string(start) + ", " +
                                                   std::to_string(end) + "] is not a valid 1-based range");
    ranges.push_back({static_cast<Index>(start - 1), static_cast<Index>(end - start + 1)});
  }
  return BlockPartition(std::move(ranges));
}

BlockPartition load_partition_json(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return partition_from_json(j);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

json partition_to_json(const BlockPartition& p) {
  json j = json::array();
  for (const auto& r : p.ranges()) j.push_back({r.start + 1, r.end()});
  return j;
}

Eigen::VectorXd load_eigenvalues_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<double> vals;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    double v = 0.0;
    if (!parse_double(t, v)) {
      if (lineno == 1 && vals.empty()) continue;  // header
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + t + "'");
    }
    vals.push_back(v);
  }
  if (vals.empty()) throw InputError(path.string() + ": no eigenvalues");
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Index>(vals.size()));
}

std::string density_csv(const SpectralDensity& d, const GridSpec& grid) {
  std::string out = "t,density\n";
  for (int i = 0; i < grid.points; ++i) {
    const double t = grid.at(i);
    out += format_double(t) + "," + format_double(evaluate_density(d, t)) + "\n";
  }
  return out;
}

json density_to_json(const SpectralDensity& d) {
  json j;
  j["label"] = d.label;
  j["sigma"] = d.sigma;
  json rules = json::array();
  for (const auto& r : d.rules) {
    rules.push_back({{"nodes", std::vector<double>(r.nodes.data(), r.nodes.data() + r.size())},
                     {"weights", std::vector<double>(r.weights.data(), r.weights.data() + r.size())}});
  }
  j["rules"] = std::move(rules);
  if (d.provenance) {
    const auto& p = *d.provenance;
    j["m"] = p.steps;
    j["num_probes"] = p.num_probes;
    j["seed"] = p.seed;
    j["probe"] = to_string(p.distribution);
    j["reorth"] = p.reorthogonalize;
    j["probe_seeds"] = p.probe_seeds;
    j["effective_steps"] = p.effective_steps;
  }
  return j;
}

SpectralDensity density_from_json(const json& j) {
  try {
    SpectralDensity d;
    d.label = j.value("label", std::string{});
    d.sigma = j.at("sigma").get<double>();
    if (!(d.sigma > 0.0)) throw InputError("sigma must be positive");
    for (const auto& r : j.at("rules")) {
      auto nodes = r.at("nodes").get<std::vector<double>>();
      auto weights = r.at("weights").get<std::vector<double>>();
      if (nodes.size() != weights.size() || nodes.empty())
        throw InputError("rule needs equally many nodes and weights");
      QuadratureRule q;
      q.nodes = Eigen::Map<Eigen::VectorXd>(nodes.data(), static_cast<Index>(nodes.size()));
      q.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), static_cast<Index>(weights.size()));
      d.rules.push_back(std::move(q));
    }
    if (d.rules.empty()) throw InputError("density has no rules");
    if (j.contains("m")) {
      DensityProvenance p;
      p.steps = j.at("m").get<Index>();
      p.num_probes = j.at("num_probes").get<int>();
      p.seed = j.at("seed").get<std::uint64_t>();
      p.distribution = probe_distribution_from_string(j.at("probe").get<std::string>());
      p.reorthogonalize = j.value("reorth", true);
      p.probe_seeds = j.value("probe_seeds", std::vector<std::uint64_t>{});
      p.effective_steps = j.value("effective_steps", std::vector<Index>{});
      d.provenance = std::move(p);
    }
    return d;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed density JSON: ") + e.what());
  }
}

SpectralDensity load_density_json(const fs::path& path) {
  try {
    return density_from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

json grid_to_json(const GridSpec& g) { return {{"lo", g.lo}, {"hi", g.hi}, {"points", g.points}}; }

json report_to_json(const HeterogeneityReport& r) {
  json j;
  j["labels"] = r.labels;
  json rows = json::array();
  for (Index i = 0; i < r.pairwise.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(r.pairwise.cols()));
    for (Index k = 0; k < r.pairwise.cols(); ++k) row[static_cast<std::size_t>(k)] = r.pairwise(i, k);
    rows.push_back(row);
  }
  j["pairwise"] = std::move(rows);
  j["js0"] = r.js0;
  if (r.grid)
    j["grid"] = grid_to_json(*r.grid);
  else
    j["grid"] = {{"policy", "per-pair covering"}, {"points", r.grid_points}, {"padding_sigmas", 6}};
  j["normalized_10th"] = r.normalized;
  return j;
}

std::string pairwise_csv(const HeterogeneityReport& r) {
  std::string out = "label";
  for (const auto& l : r.labels) out += "," + l;
  out += '\n';
  for (Index i = 0; i < r.pairwise.rows(); ++i) {
    out += r.labels[static_cast<std::size_t>(i)];
    for (Index k = 0; k < r.pairwise.cols(); ++k) out += "," + format_double(r.pairwise(i, k));
    out += '\n';
  }
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace hetlab::io
