#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "driftcov/grid.hpp"
#include "driftcov/hurdle.hpp"
#include "driftcov/random.hpp"

using namespace driftcov;
namespace fs = std::filesystem;

namespace {

const std::string kCli = DRIFTCOV_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("driftcov_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
  return std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
}

int exit_code(int system_status) { return WEXITSTATUS(system_status); }

void write_synthetic_trajectories(const std::string& path) {
  std::ofstream out(path);
  out << "id,time,lon,lat\n";
  Rng rng(1);
  for (int d = 0; d < 4; ++d) {
    double lon = -38.8 + 0.5 * d, lat = -54.8 + 0.4 * d;
    for (int i = 0; i < 250; ++i) {
      lon += 0.004 * std::cos(i / 10.0) + 0.0015 * rng.normal();
      lat += 0.003 * std::sin(i / 10.0) + 0.0015 * rng.normal();
      out << 'd' << d << ',' << (1104537600 + i * 3600) << ',' << lon << ',' << lat << '\n';
    }
  }
}

}  // namespace

TEST_CASE("cli: density derive writes a mass-conserving grid with sidecar") {
  TempDir dir;
  write_synthetic_trajectories(dir.file("traj.csv"));
  REQUIRE(exit_code(run("derive --input " + dir.file("traj.csv") +
                        " --region -40,-36,-56,-52 --product density --out " +
                        dir.file("dens.csv"))) == 0);

  GridField grid = read_grid_csv(dir.file("dens.csv"));
  CHECK(grid.n_lon == 16);
  CHECK(grid.n_lat == 16);
  CHECK(grid.variable == "drifter_density");

  std::ifstream sidecar(dir.file("dens.csv") + ".json");
  std::stringstream ss;
  ss << sidecar.rdbuf();
  CHECK(ss.str().find("input_sha256") != std::string::npos);
  CHECK(ss.str().find("derive") != std::string::npos);
}

TEST_CASE("cli: grid CSV round-trips losslessly") {
  TempDir dir;
  GridField grid = GridField::create({-40, -36, -56, -52}, 0.5, 0.5, "test", "u");
  Rng rng(3);
  for (auto& v : grid.values)
    if (rng.uniform() < 0.8) v = rng.normal() * 1e3;  // leave some NA
  write_grid_csv(grid, dir.file("g.csv"), "test", "", "");
  GridField back = read_grid_csv(dir.file("g.csv"));
  REQUIRE(back.values.size() == grid.values.size());
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    if (std::isnan(grid.values[i]))
      CHECK(std::isnan(back.values[i]));
    else
      CHECK(back.values[i] == grid.values[i]);  // exact round-trip
  }
}

TEST_CASE("cli: ef derive emits one midpoint sample per window") {
  TempDir dir;
  write_synthetic_trajectories(dir.file("traj.csv"));
  REQUIRE(exit_code(run("derive --input " + dir.file("traj.csv") +
                        " --region -40,-36,-56,-52 --product ef --out " + dir.file("ef.csv"))) ==
          0);
  auto samples = read_samples_csv(dir.file("ef.csv"));
  // 250 fixes per drifter when fully in-region: floor((250-121)/61)+1 = 3 windows.
  CHECK(samples.size() >= 4);
  for (const auto& s : samples) CHECK(s.value >= 0.0);
}

TEST_CASE("cli: simulate -> fit -> predict -> score pipeline") {
  TempDir dir;
  std::ofstream(dir.file("p.params")) << "n_sites=30\nn_times=3\n";
  REQUIRE(exit_code(run("simulate --study st-hurdle --params " + dir.file("p.params") +
                        " --seed 5 --out " + dir.path.string())) == 0);

  auto data = hurdle::read_dataset_csv(dir.file("dataset.csv"));
  CHECK(data.n_sites() == 30);
  CHECK(data.n_times == 3);
  auto truth = hurdle::read_truth_csv(dir.file("truth.csv"), data);
  CHECK(truth.pi.allFinite());

  REQUIRE(exit_code(run("fit --data " + dir.file("dataset.csv") + " --out " + dir.file("f.json") +
                        " --evals 60 --starts 1 --summaries " + dir.file("summ.csv"))) == 0);
  REQUIRE(exit_code(run("predict --fit " + dir.file("f.json") + " --out " + dir.file("pred.csv") +
                        " --n-samples 80 --time-average " + dir.file("ta.csv"))) == 0);

  // Build a score input from the time-averaged predictions against truth.
  std::ifstream ta(dir.file("ta.csv"));
  std::string line;
  std::getline(ta, line);
  std::ofstream sc(dir.file("scorein.csv"));
  sc << "truth,mean,lo,hi\n";
  int i = 0;
  while (std::getline(ta, line)) {
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    double tavg = (truth.pi.row(i).array() * truth.mu.row(i).array()).mean();
    sc << tavg << ',' << cells[3] << ',' << cells[5] << ',' << cells[6] << '\n';
    ++i;
  }
  sc.close();
  REQUIRE(exit_code(run("score --input " + dir.file("scorein.csv") + " --out " +
                        dir.file("score.csv"))) == 0);

  std::ifstream scores(dir.file("score.csv"));
  std::getline(scores, line);
  CHECK(line == "rmse,rmspe,mae,mape,width95,coverage95");
  std::getline(scores, line);
  std::stringstream ls(line);
  std::string cell;
  std::vector<double> vals;
  while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
  REQUIRE(vals.size() == 6);
  CHECK(vals[0] > 0.0);   // rmse
  CHECK(vals[5] >= 0.0);  // coverage
  CHECK(vals[5] <= 1.0);
}

TEST_CASE("cli: predict refuses a train file that fails the stored digest") {
  TempDir dir;
  std::ofstream(dir.file("p.params")) << "n_sites=25\nn_times=2\n";
  REQUIRE(exit_code(run("simulate --study st-hurdle --params " + dir.file("p.params") +
                        " --seed 2 --out " + dir.path.string())) == 0);
  REQUIRE(exit_code(run("fit --data " + dir.file("dataset.csv") + " --out " + dir.file("f.json") +
                        " --evals 40 --starts 1")) == 0);
  // Tamper with the training data.
  std::ofstream(dir.file("dataset.csv"), std::ios::app) << "";
  std::ofstream(dir.file("dataset.csv"), std::ios::app) << "\n";
  CHECK(exit_code(run("predict --fit " + dir.file("f.json") + " --out " + dir.file("pred.csv"))) ==
        3);
}

TEST_CASE("cli: exit codes for usage, data, and numerical failures") {
  TempDir dir;
  // usage: unknown product
  write_synthetic_trajectories(dir.file("traj.csv"));
  CHECK(exit_code(run("derive --input " + dir.file("traj.csv") +
                      " --region -40,-36,-56,-52 --product nope --out " + dir.file("x.csv"))) ==
        2);
  // usage: missing required flag
  CHECK(exit_code(run("derive --product density")) == 2);
  // data: malformed trajectory file
  std::ofstream(dir.file("bad.csv")) << "id,time,lon,lat\nd1,notatime,-38,-54\n";
  CHECK(exit_code(run("derive --input " + dir.file("bad.csv") +
                      " --region -40,-36,-56,-52 --product density --out " + dir.file("x.csv"))) ==
        3);
  // data: too few samples to krige
  std::ofstream(dir.file("few.csv")) << "lon,lat,value\n-38,-54,1\n-38.1,-54,2\n";
  CHECK(exit_code(run("interpolate --samples " + dir.file("few.csv") +
                      " --region -40,-36,-56,-52 --res 0.5 --out " + dir.file("x.csv"))) == 3);
}

TEST_CASE("cli: sensitivity table has the expected shape") {
  TempDir dir;
  REQUIRE(exit_code(run("sensitivity --out " + dir.file("t.csv") +
                        " --sizes 40,60 --bootstrap 0 --n-master 80 --seed 9")) == 0);
  std::ifstream in(dir.file("t.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,n,parameter,true,estimate,sd");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);  // 2 sizes x (sigma, kappa)
}
