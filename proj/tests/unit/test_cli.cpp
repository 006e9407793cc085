#include "doctest.h"

#include "pcde/cli.hpp"
#include "pcde/errors.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace pcde;
namespace fs = std::filesystem;

namespace {

const std::string data_dir = PCDE_TEST_DATA;

fs::path
scratch(const std::string& name)
{
  const auto dir = fs::temp_directory_path() / ("pcde_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int
run(std::vector<std::string> args)
{
  args.insert(args.begin(), "pcde");
  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string
slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SpatialGmm
two_leaf_gmm(int dim_x = 1)
{
  // split at x1 = 1/2 whatever the covariate dimension
  std::vector<double> lo(static_cast<std::size_t>(dim_x), 0.0);
  std::vector<double> hi(static_cast<std::size_t>(dim_x), 1.0);
  auto mid_hi = hi;
  auto mid_lo = lo;
  mid_hi[0] = 0.5;
  mid_lo[0] = 0.5;
  const auto tree =
    PartitionTree::from_cells(CollectionKind::rdp, dim_x, 64, { Hyperrectangle(lo, mid_hi), Hyperrectangle(mid_lo, hi) });
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd s2(2, 2);
  s2 << 2.0, 0.3, 0.3, 0.5;
  const std::vector<GaussianComponent> comps{ GaussianComponent::from_covariance(Eigen::Vector2d(-4.0, 0.0), eye),
                                              GaussianComponent::from_covariance(Eigen::Vector2d(4.0, 1.0), s2) };
  return SpatialGmm(tree,
                    comps,
                    { Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.3, 0.7) },
                    CovarianceSpec::parse("KKKK"),
                    Subspace::full(),
                    2);
}

} // namespace

TEST_SUITE("cli")
{
  TEST_CASE("dataset csv parsing")
  {
    std::istringstream good("x1,x2,y1\n0.5,0.25,3\n1,0,-2.5e-1\n");
    const auto d = cli::parse_dataset_csv(good);
    CHECK(d.size() == 2);
    CHECK(d.dim_x() == 2);
    CHECK(d.dim_y() == 1);
    CHECK(d.y(1, 0) == -0.25);

    std::istringstream bad_header("y1,x1\n0.5,0.5\n");
    CHECK_THROWS_AS(cli::parse_dataset_csv(bad_header), DataError);
    std::istringstream outside("x1,y1\n1.5,0.5\n");
    CHECK_THROWS_AS(cli::parse_dataset_csv(outside), DataError);
    std::istringstream ragged("x1,y1\n0.5\n");
    CHECK_THROWS_AS(cli::parse_dataset_csv(ragged), DataError);
    std::istringstream text("x1,y1\n0.5,abc\n");
    CHECK_THROWS_AS(cli::parse_dataset_csv(text), DataError);

    std::ostringstream out;
    cli::write_dataset_csv(out, d);
    std::istringstream back(out.str());
    const auto e = cli::parse_dataset_csv(back);
    CHECK(e.x == d.x);
    CHECK(e.y == d.y);
  }

  TEST_CASE("numbers are written locale-free and round-trip")
  {
    for (double v : { 0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0 }) {
      const auto s = cli::format_number(v);
      CHECK(s.find(',') == std::string::npos);
      CHECK(std::stod(s) == v);
    }
  }

  TEST_CASE("fit r=0 on the toy file gives the hand-counted histogram")
  {
    const auto out = scratch("toy");
    REQUIRE(run({ "fit", "--data", data_dir + "/toy.csv", "--x-depth", "1", "--y-depth", "1", "--out", out.string() }) ==
            0);
    const auto doc = cli::load_model((out / "model.json").string());
    const auto& m = std::get<PolyModel>(doc.model);
    // x < 1/2: 3 of 8 responses below 1/2; x >= 1/2: 9 of 12
    CHECK(m.cell(0, 0).weight == 3.0 / 8.0);
    CHECK(m.cell(0, 1).weight == 5.0 / 8.0);
    CHECK(m.cell(1, 0).weight == 9.0 / 12.0);
    CHECK(m.cell(1, 1).weight == 3.0 / 12.0);
    CHECK(m.cell(1, 0).count == 9);
    CHECK(doc.meta.n == 20);
    CHECK(slurp(out / "report.txt").find("dim 2\n") != std::string::npos);
  }

  TEST_CASE("exit codes")
  {
    const auto out = scratch("codes").string();
    CHECK(run({ "fit", "--data", data_dir + "/missing.csv", "--out", out }) == 2);
    CHECK(run({ "fit", "--data", data_dir + "/toy.csv", "--degrees", "-1", "--out", out }) == 1);
    CHECK(run({ "fit", "--data", data_dir + "/toy.csv", "--no-such-flag", "--out", out }) == 1);
    CHECK(run({ "fit", "--data", data_dir + "/toy.csv", "--penalty-mode", "bogus", "--out", out }) == 1);
    CHECK(run({ "select", "--data", data_dir + "/toy.csv", "--penalty-mode", "manual", "--out", out }) == 1);
    CHECK(run({ "fit", "--out", out }) == 1);
    CHECK(run({}) == 1);

    std::ofstream(fs::path(out) / "bad.csv") << "x1,y1\n0.5,nope\n";
    CHECK(run({ "fit", "--data", (fs::path(out) / "bad.csv").string(), "--out", out }) == 2);
  }

  TEST_CASE("config files: sections, flag precedence, unknown keys")
  {
    const auto dir = scratch("config");
    std::ofstream(dir / "run.toml") << "# scenario run\nseed = 4\n[simulation]\nscenario = \"poly_2d\"\nsamples = 30\n";
    REQUIRE(run({ "simulate", "--config", (dir / "run.toml").string(), "--out", (dir / "a").string() }) == 0);
    REQUIRE(run({ "simulate", "--config", (dir / "run.toml").string(), "--samples", "12", "--out", (dir / "b").string() }) ==
            0);
    std::istringstream a(slurp(dir / "a" / "data.csv"));
    std::istringstream b(slurp(dir / "b" / "data.csv"));
    CHECK(cli::parse_dataset_csv(a).size() == 30);
    CHECK(cli::parse_dataset_csv(b).size() == 12);

    std::ofstream(dir / "bad.toml") << "seed = 4\nsamplez = 30\n";
    CHECK(run({ "simulate", "--scenario", "poly_2d", "--config", (dir / "bad.toml").string(), "--out", dir.string() }) ==
          1);
    std::ofstream(dir / "section.toml") << "[nowhere]\nseed = 4\n";
    CHECK(run({ "simulate", "--scenario", "poly_2d", "--config", (dir / "section.toml").string(), "--out", dir.string() }) ==
          1);
  }

  TEST_CASE("model documents round-trip byte for byte")
  {
    const auto dir = scratch("roundtrip");
    REQUIRE(run({ "select", "--data", data_dir + "/oracle.csv", "--degrees", "0,1", "--out", dir.string() }) == 0);
    const auto first = slurp(dir / "model.json");
    const auto doc = cli::parse_model(first);
    CHECK(cli::dump_model(doc) == first);

    cli::ModelDocument gdoc{ two_leaf_gmm(), cli::FitMetadata{ 10, -3.5, 1.25, 4.75, 99, 11 } };
    const auto text = cli::dump_model(gdoc);
    const auto back = cli::parse_model(text);
    CHECK(cli::dump_model(back) == text);
    CHECK(back.meta.seed == 99);

    // identical log-densities at random points
    const auto& p0 = std::get<PolyModel>(doc.model);
    const auto reloaded = cli::parse_model(cli::dump_model(doc));
    const auto& p1 = std::get<PolyModel>(reloaded.model);
    const auto& g0 = std::get<SpatialGmm>(gdoc.model);
    const auto& g1 = std::get<SpatialGmm>(back.model);
    Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 3.0);
    for (int i = 0; i < 1000; ++i) {
      const double x[1] = { u(rng) };
      const double y[1] = { u(rng) };
      CHECK(p0.log_density(x, y) == p1.log_density(x, y));
      const double yg[2] = { z(rng), z(rng) };
      CHECK(g0.log_density(x, yg) == g1.log_density(x, yg));
    }

    CHECK_THROWS_AS(cli::parse_model("{\"schema_version\": \"2\"}"), DataError);
    CHECK_THROWS_AS(cli::parse_model("not json"), DataError);
  }

  TEST_CASE("identical config and seed give identical outputs")
  {
    const auto a = scratch("det_a");
    const auto b = scratch("det_b");
    for (const auto& dir : { a, b })
      REQUIRE(run({ "select", "--data", data_dir + "/oracle.csv", "--seed", "7", "--out", dir.string() }) == 0);
    for (const char* f : { "selection.csv", "model.json", "report.txt", "slope.csv", "slope_sweep.csv" })
      CHECK(slurp(a / f) == slurp(b / f));
  }

  TEST_CASE("dp selection reproduces the exhaustive fixture")
  {
    const auto dir = scratch("oracle");
    REQUIRE(run({ "select",
                  "--data",
                  data_dir + "/oracle.csv",
                  "--degrees",
                  "0,1",
                  "--penalty-mode",
                  "manual",
                  "--kappa",
                  "1",
                  "--max-x-leaves",
                  "8",
                  "--max-y-leaves",
                  "4",
                  "--search",
                  "dp",
                  "--out",
                  dir.string() }) == 0);
    CHECK(slurp(dir / "model.json") == slurp(data_dir + "/oracle_exhaustive_model.json"));
  }

  TEST_CASE("segment labels a pure leaf with its component")
  {
    const auto dir = scratch("segment");
    const auto model = two_leaf_gmm();
    cli::save_model((dir / "model.json").string(), cli::ModelDocument{ model, {} });
    const auto truth = GroundTruth::spatial_gmm(model);
    const auto data = sample(truth, 400, 3);
    {
      std::ofstream out(dir / "data.csv");
      cli::write_dataset_csv(out, data);
    }
    REQUIRE(run({ "segment",
                  "--model",
                  (dir / "model.json").string(),
                  "--data",
                  (dir / "data.csv").string(),
                  "--out",
                  dir.string() }) == 0);
    std::istringstream labels(slurp(dir / "labels.csv"));
    std::string line;
    std::getline(labels, line);
    CHECK(line == "label");
    std::size_t i = 0;
    while (std::getline(labels, line)) {
      if (data.x(static_cast<Eigen::Index>(i), 0) < 0.5)
        CHECK(line == "1");
      ++i;
    }
    CHECK(i == data.size());
  }

  TEST_CASE("cube input and pixel label map")
  {
    const auto dir = scratch("cube");
    // 2 x 3 pixels, 2 bands; left column pixels sit at component 1
    std::vector<double> values;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c) {
        values.push_back(c == 0 ? -4.0 : 4.0);
        values.push_back(c == 0 ? 0.0 : 1.0);
      }
    cli::write_cube((dir / "img.cube").string(), 2, 3, 2, values);
    const auto cube = cli::read_cube((dir / "img.cube").string());
    CHECK(cube.height == 2);
    CHECK(cube.width == 3);
    CHECK(cube.data.x(4, 0) == doctest::Approx(0.5));
    CHECK(cube.data.x(4, 1) == doctest::Approx(0.75));
    CHECK(cube.data.y(3, 0) == -4.0);

    cli::save_model((dir / "model.json").string(), cli::ModelDocument{ two_leaf_gmm(2), {} });
    REQUIRE(run({ "segment",
                  "--model",
                  (dir / "model.json").string(),
                  "--data",
                  (dir / "img.cube").string(),
                  "--out",
                  dir.string() }) == 0);
    CHECK(slurp(dir / "labels.csv") == "row,col,label\n0,0,1\n0,1,2\n0,2,2\n1,0,1\n1,1,2\n1,2,2\n");

    std::ofstream(dir / "short.cube", std::ios::binary) << "CUBE1 2 2 1\n1234";
    CHECK_THROWS_AS(cli::read_cube((dir / "short.cube").string()), DataError);
  }

  TEST_CASE("risk with the truth as estimator is zero")
  {
    const auto dir = scratch("risk");
    REQUIRE(run({ "risk",
                  "--scenario",
                  "histogram_1d",
                  "--estimator",
                  "truth",
                  "--sizes",
                  "50,100",
                  "--replicates",
                  "3",
                  "--out",
                  dir.string() }) == 0);
    CHECK(slurp(dir / "risk.csv") ==
          "n,model,risk,std_error,replicates,mean_dim\n50,\"truth\",0,0,3,0\n100,\"truth\",0,0,3,0\n");
  }

  TEST_CASE("list parsing")
  {
    CHECK(cli::parse_int_list("1:3") == std::vector<int>{ 1, 2, 3 });
    CHECK(cli::parse_int_list("200,800") == std::vector<int>{ 200, 800 });
    CHECK_THROWS_AS(cli::parse_int_list("3:1"), ContractError);
    CHECK(cli::parse_degrees("1", 2) == std::vector<DegreeVector>{ { 1, 1 } });
    CHECK(cli::parse_degrees("0,1:2", 2) == std::vector<DegreeVector>{ { 0, 0 }, { 1, 2 } });
    CHECK_THROWS_AS(cli::parse_degrees("1:2:3", 2), ContractError);
    CHECK_THROWS_AS(cli::parse_degrees("-1", 1), ContractError);
  }
}
