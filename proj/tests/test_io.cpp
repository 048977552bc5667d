#include <doctest.h>

#include "hetlab/io.hpp"
#include "hetlab/slq.hpp"

#include <cmath>
#include <filesystem>
#include <limits>

using namespace hetlab;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "hetlab_test_io";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("doubles print as shortest round-trip decimals") {
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(io::format_double(1.0) == "1");
  CHECK(io::format_double(-2.5e-300) == "-2.5e-300");
  CHECK(io::format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(io::format_double(-std::numeric_limits<double>::infinity()) == "-inf");
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double x = std::ldexp(gaussian_vector(1, rng)[0], static_cast<int>(i % 80) - 40);
    const std::string s = io::format_double(x);
    CHECK(std::stod(s) == x);
    CHECK(s.find(',') == std::string::npos);
  }
}

TEST_CASE("matrix CSV round-trip and errors") {
  MatrixXd m(2, 3);
  m << 1.0 / 3.0, -2, 1e-17, 4, 5.5, 6;
  auto path = scratch("m.csv");
  io::save_matrix_csv(path, m);
  CHECK(io::load_matrix_csv(path) == m);

  io::write_text(path, "1,2\n\n3,4\n");
  CHECK(io::load_matrix_csv(path).rows() == 2);

  io::write_text(path, "1,2\n3\n");
  CHECK_THROWS_WITH_AS(io::load_matrix_csv(path), doctest::Contains("row has"), InputError);
  io::write_text(path, "1,x\n");
  CHECK_THROWS_WITH_AS(io::load_matrix_csv(path), doctest::Contains("not a number"), InputError);
  io::write_text(path, "");
  CHECK_THROWS_AS(io::load_matrix_csv(path), InputError);
  CHECK_THROWS_WITH_AS(io::load_matrix_csv(scratch("missing.csv")), doctest::Contains("missing.csv"), InputError);
}

TEST_CASE("partition JSON is 1-based and inclusive") {
  auto p = io::partition_from_json(nlohmann::json::parse("[[1, 2], [3, 5]]"));
  CHECK(p.dim() == 5);
  CHECK(p.range(1).start == 2);
  CHECK(p.range(1).size == 3);
  CHECK(io::partition_to_json(p) == nlohmann::json::parse("[[1, 2], [3, 5]]"));
  CHECK_THROWS_AS(io::partition_from_json(nlohmann::json::parse("[[0, 2]]")), InputError);
  CHECK_THROWS_AS(io::partition_from_json(nlohmann::json::parse("[[1, 2], [4, 5]]")), InputError);
  CHECK_THROWS_AS(io::partition_from_json(nlohmann::json::parse("[[1, 2.5]]")), InputError);
  CHECK_THROWS_AS(io::partition_from_json(nlohmann::json::parse("{\"a\": 1}")), InputError);

  auto path = scratch("p.json");
  io::write_text(path, "[[1, 2],");
  CHECK_THROWS_WITH_AS(io::load_partition_json(path), doctest::Contains("p.json"), InputError);
}

TEST_CASE("eigenvalue lists") {
  auto path = scratch("e.csv");
  io::write_text(path, "eigenvalue\n3\n# comment\n1.5\n\n2\n");
  VectorXd e = io::load_eigenvalues_csv(path);
  CHECK(e.size() == 3);
  CHECK(e[1] == 1.5);
  io::write_text(path, "eigenvalue\n");
  CHECK_THROWS_AS(io::load_eigenvalues_csv(path), InputError);
  io::write_text(path, "1\nfoo\n");
  CHECK_THROWS_AS(io::load_eigenvalues_csv(path), InputError);
}

TEST_CASE("density JSON round-trip keeps rules, sigma and provenance") {
  auto op = SymmetricOperator<double>::diagonal(VectorXd::LinSpaced(20, 1.0, 20.0));
  ProbeConfig cfg;
  cfg.steps = 7;
  cfg.num_probes = 3;
  cfg.seed = 12;
  cfg.distribution = ProbeDistribution::Rademacher;
  auto d = slq_density(op, cfg, std::nullopt, "block 1");
  auto path = scratch("d.json");
  io::write_text(path, io::dump(io::density_to_json(d)));
  auto back = io::load_density_json(path);
  CHECK(back.label == "block 1");
  CHECK(back.sigma == d.sigma);
  REQUIRE(back.rules.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.rules[i].nodes == d.rules[i].nodes);
    CHECK(back.rules[i].weights == d.rules[i].weights);
  }
  REQUIRE(back.provenance);
  CHECK(back.provenance->steps == 7);
  CHECK(back.provenance->seed == 12);
  CHECK(back.provenance->distribution == ProbeDistribution::Rademacher);
  CHECK(back.provenance->probe_seeds == d.provenance->probe_seeds);
  CHECK(io::dump(io::density_to_json(back)) == io::dump(io::density_to_json(d)));
}

TEST_CASE("malformed density files name the file") {
  auto path = scratch("bad.json");
  io::write_text(path, "{\"sigma\": 1, ");
  CHECK_THROWS_WITH_AS(io::load_density_json(path), doctest::Contains("bad.json"), InputError);
  io::write_text(path, "{\"sigma\": 0, \"rules\": [{\"nodes\": [1], \"weights\": [1]}]}");
  CHECK_THROWS_WITH_AS(io::load_density_json(path), doctest::Contains("sigma"), InputError);
  io::write_text(path, "{\"sigma\": 1, \"rules\": [{\"nodes\": [1, 2], \"weights\": [1]}]}");
  CHECK_THROWS_AS(io::load_density_json(path), InputError);
  io::write_text(path, "{\"sigma\": 1}");
  CHECK_THROWS_AS(io::load_density_json(path), InputError);
}

TEST_CASE("density CSV and report exports") {
  SpectralDensity d = exact_density(VectorXd{{0.0}}, 1.0, "a");
  GridSpec g{-1.0, 1.0, 3};
  const std::string csv = io::density_csv(d, g);
  CHECK(csv.rfind("t,density\n-1,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  auto rep = heterogeneity_report({exact_density(VectorXd{{0.0}}, 1.0, "a"), exact_density(VectorXd{{1e6}}, 1.0, "b")});
  const std::string pw = io::pairwise_csv(rep);
  CHECK(pw.rfind("label,a,b\na,0,", 0) == 0);
  auto j = io::report_to_json(rep);
  CHECK(j["js0"].get<double>() == rep.js0);
  CHECK(j["pairwise"][1][0].get<double>() == rep.pairwise(1, 0));
  CHECK(io::dump(j).back() == '\n');
}

TEST_CASE("write_text creates parent directories") {
  auto path = scratch("nested/deeper/x.txt");
  fs::remove_all(scratch("nested"));
  io::write_text(path, "hello");
  CHECK(io::read_text(path) == "hello");
}
