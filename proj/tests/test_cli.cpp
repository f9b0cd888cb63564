#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "calpha/cli/commands.hpp"
#include "calpha/error.hpp"
#include "calpha/core/power.hpp"
#include "calpha/iv/iv_model.hpp"
#include "calpha/sim/sim_model.hpp"

using namespace calpha;
using namespace calpha::cli;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "calpha");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

// Rows of a CSV block keyed by header name; '#' lines and text before the
// header are skipped.
struct Table {
  std::vector<std::string> comments;
  std::vector<std::map<std::string, std::string>> rows;
};

Table parse_table(const std::string& text, const std::string& first_column) {
  Table t;
  std::vector<std::string> header;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.rfind("#", 0) == 0) {
      t.comments.push_back(line);
      continue;
    }
    if (header.empty()) {
      if (line.rfind(first_column + ",", 0) == 0) header = split(line, ',');
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    REQUIRE(cells.size() == header.size());
    std::map<std::string, std::string> row;
    for (std::size_t k = 0; k < header.size(); ++k) row[header[k]] = cells[k];
    t.rows.push_back(std::move(row));
  }
  REQUIRE_FALSE(header.empty());
  return t;
}

double num(const std::map<std::string, std::string>& row, const std::string& key) { return std::stod(row.at(key)); }

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("calpha_test_cli_" + name);
}

}  // namespace

TEST_CASE("number formatting") {
  CHECK(format_number(0.05) == "0.05");
  CHECK(format_number(0.0) == "0");
  CHECK(format_number(-0.0) == "0");
  CHECK(format_number(1.0 / 0.0) == "inf");
  CHECK(format_number(5.85) == "5.85");
  CHECK(std::stod(format_number(0.1 + 0.2)) == 0.1 + 0.2);
}

TEST_CASE("design catalogue") {
  CHECK(valid_designs(Model::Sim).size() == 12);
  CHECK(valid_designs(Model::Iv).size() == 18);
  CHECK(canonical_design(Model::Iv, "d1-exp-exp-2-2") == "d1-exp-exp-2");
  CHECK_THROWS_AS(canonical_design(Model::Sim, "exp9-homo"), UsageError);
  CHECK_THROWS_AS(parse_model("probit"), UsageError);
}

TEST_CASE("rate estimates") {
  const RateEstimate r{50, 1000};
  CHECK(r.rate() == 0.05);
  CHECK(std::abs(r.mc_se() - std::sqrt(0.05 * 0.95 / 1000)) < 1e-15);
}

TEST_CASE("bounds table") {
  const auto r = run({"bounds"});
  REQUIRE(r.code == 0);
  const auto t = parse_table(r.out, "kind");
  REQUIRE(t.comments.size() == 1);
  CHECK(t.comments[0].rfind("# calpha bounds", 0) == 0);
  CHECK(t.rows.size() == 3 * 41 + 17);
  CHECK(t.rows.front().at("kind") == "maximin");
  CHECK(t.rows.back().at("kind") == "two_sided");
  CHECK(t.rows.back().at("r").empty());
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"size", "--model", "sim", "--design", "exp9-homo", "--reps", "1"}).code == 2);
  CHECK(run({"size", "--model", "sim", "--design", "exp1-homo", "--reps", "0"}).code == 2);
  CHECK(run({"size", "--model", "sim", "--design", "exp1-homo", "--reps", "1", "--tests", "ar"}).code == 2);
  CHECK(run({"size", "--model", "iv", "--design", "d1-exp-exp-1", "--reps", "1", "--order", "k:x"}).code == 2);
  CHECK(run({"power", "--model", "iv", "--design", "d1-exp-exp-1,d2-exp-exp-1", "--reps", "1"}).code == 2);
  CHECK(run({"bounds", "--alpha", "1.5"}).code == 2);
  CHECK(run({"ci", "--model", "iv"}).code == 2);
  const auto bad = run({"size", "--model", "sim", "--design", "nope", "--reps", "1"});
  CHECK(bad.err.find("exp1-homo") != std::string::npos);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("data and numerical errors") {
  CHECK(run({"test", "--model", "iv", "--data", "/nonexistent/x.csv", "--map", "y=y,x=x,z2=a", "--intercept"}).code == 3);

  const auto csv = temp_file("exact.csv");
  {
    std::ofstream out(csv);
    out << "y,x,a\n";
    for (int i = 0; i < 100; ++i) out << 1.0 + 0.5 * (i % 7) << ',' << (i % 7) << ',' << std::sin(i) << '\n';
  }
  const std::string map = "y=y,x=x,z2=a";
  CHECK(run({"test", "--model", "iv", "--data", csv.string(), "--map", "y=y,x=x,z2=missing", "--intercept"}).code == 3);
  // y = 1 + 0.5 x exactly: zero residual variance at theta0 = 0.5.
  CHECK(run({"test", "--model", "iv", "--data", csv.string(), "--map", map, "--intercept", "--theta0", "0.5", "--tests",
             "psi"})
            .code == 4);
  std::filesystem::remove(csv);
}

TEST_CASE("size study output is deterministic across threads") {
  const std::vector<std::string> base{"size", "--model", "iv", "--design", "d2-exp-exp-1,d1-log-log-2",
                                      "--n", "150", "--reps", "24", "--seed", "11"};
  auto one = base, three = base;
  one.insert(one.end(), {"--threads", "1"});
  three.insert(three.end(), {"--threads", "3"});
  const auto a = run(one), b = run(three), c = run(one);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out == c.out);
  const auto t = parse_table(a.out, "model");
  CHECK(t.comments.at(0).rfind("# calpha size --model iv --design d2-exp-exp-1,d1-log-log-2", 0) == 0);
  CHECK(t.comments.at(0).find("threads") == std::string::npos);
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[0].at("test") == "psi");
  CHECK(t.rows[1].at("test") == "ar");
  for (const auto& row : t.rows) {
    CHECK(row.at("reps") == "24");
    CHECK(row.at("seed") == "11");
    const double erf = num(row, "erf");
    CHECK(erf >= 0.0);
    CHECK(erf <= 100.0);
  }

  // Cells do not depend on which other cells share the run.
  const auto single = run({"size", "--model", "iv", "--design", "d1-log-log-2", "--n", "150", "--reps", "24", "--seed",
                           "11", "--threads", "2"});
  const auto ts = parse_table(single.out, "model");
  CHECK(ts.rows[0] == t.rows[2]);
  CHECK(ts.rows[1] == t.rows[3]);
}

TEST_CASE("sim size and power runs") {
  const std::vector<std::string> args{"size", "--model", "sim", "--design", "log1-het", "--n", "200",
                                      "--reps", "8", "--seed", "4"};
  auto one = args, two = args;
  one.insert(one.end(), {"--threads", "1"});
  two.insert(two.end(), {"--threads", "2"});
  const auto a = run(one), b = run(two);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(parse_table(a.out, "model").rows.size() == 2);

  const auto p = run({"power", "--model", "sim", "--design", "exp1-homo", "--n", "300", "--reps", "10", "--grid",
                      "0.5,1.5,3", "--threads", "2"});
  REQUIRE(p.code == 0);
  const auto t = parse_table(p.out, "model");
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].at("test") == "psi");
  CHECK(t.rows[1].at("theta") == "1");
  CHECK(num(t.rows[0], "rejection_rate") >= 0.5);
  CHECK(num(t.rows[2], "rejection_rate") >= 0.5);
  CHECK(num(t.rows[1], "rejection_rate") <= 0.3);
}

TEST_CASE("iv power curve and surface") {
  const std::vector<std::string> args{"power", "--model", "iv", "--design", "d2-exp-exp-1", "--n", "400",
                                      "--reps", "400", "--seed", "5", "--grid", "-0.5,0.5,11"};
  auto one = args, three = args;
  one.insert(one.end(), {"--threads", "1"});
  three.insert(three.end(), {"--threads", "3"});
  const auto a = run(one), b = run(three);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  const auto t = parse_table(a.out, "model");
  REQUIRE(t.rows.size() == 22);
  std::map<std::string, std::vector<std::pair<double, std::pair<double, double>>>> curves;
  for (const auto& row : t.rows)
    curves[row.at("test")].push_back({num(row, "theta"), {num(row, "rejection_rate"), num(row, "mc_se")}});
  for (const auto& [test, curve] : curves) {
    REQUIRE(curve.size() == 11);
    CHECK(curve[5].first == 0.0);
    CHECK(curve[4].first == -0.1);
    CHECK(curve[7].first == 0.2);
    // Rejection at the truth is near the level, and grows away from it.
    CHECK(curve[5].second.first >= 0.02);
    CHECK(curve[5].second.first <= 0.09);
    for (std::size_t k = 6; k < 11; ++k) {
      CHECK(curve[k].second.first + 2 * curve[k].second.second >= curve[k - 1].second.first);
      CHECK(curve[10 - k].second.first + 2 * curve[10 - k].second.second >= curve[11 - k].second.first);
    }
  }
  // The exponential first stage is even in Z2, so linear instruments carry no
  // signal: AR stays near the level while psi picks up the curvature.
  CHECK(curves["psi"][0].second.first > 0.9);
  CHECK(curves["psi"][10].second.first > 0.9);
  CHECK(curves["ar"][0].second.first < 0.15);
  CHECK(curves["ar"][10].second.first < 0.15);

  const auto s = run({"power", "--model", "iv", "--design", "d1-exp-exp-1", "--n", "200", "--reps", "5", "--grid",
                      "-2,2,3", "--threads", "2"});
  REQUIRE(s.code == 0);
  const auto ts = parse_table(s.out, "model");
  CHECK(ts.rows.size() == 9 * 2);
  CHECK(ts.rows[0].at("tau1") == "-2");
  CHECK(ts.rows[0].at("tau2") == "-2");
  CHECK(ts.rows[2].at("tau2") == "0");
  CHECK(ts.comments.at(0).find("--reps 5") != std::string::npos);
}

TEST_CASE("test command on data files") {
  const auto iv_path = temp_file("iv.csv");
  iv::IVDesign d = *iv::IVDesign::parse("d2-log-log-1");
  d.n = 500;
  iv::write_csv(iv_path.string(), iv::simulate_iv(d, 21));
  const std::string map = "y=y,x=x1,z1=z1_1,z2=z2_1+z2_2";

  const auto at_truth = run({"test", "--model", "iv", "--data", iv_path.string(), "--map", map, "--theta0", "0"});
  REQUIRE(at_truth.code == 0);
  CHECK(at_truth.out.find("psi test") != std::string::npos);
  const auto t0 = parse_table(at_truth.out, "model");
  REQUIRE(t0.rows.size() == 2);
  CHECK(t0.rows[0].at("test") == "psi");
  CHECK(t0.rows[1].at("test") == "ar");
  CHECK(t0.rows[0].at("n") == "500");
  CHECK(t0.rows[1].at("rank") == "2");

  const auto far = run({"test", "--model", "iv", "--data", iv_path.string(), "--map", map, "--theta0", "2"});
  const auto t1 = parse_table(far.out, "model");
  CHECK(t1.rows[0].at("reject") == "1");
  CHECK(t1.rows[1].at("reject") == "1");
  CHECK(t1.rows[0].at("theta0") == "2");

  const auto out_path = temp_file("result.csv");
  REQUIRE(run({"test", "--model", "iv", "--data", iv_path.string(), "--map", map, "--out", out_path.string()}).code == 0);
  std::ifstream in(out_path);
  std::string first;
  std::getline(in, first);
  CHECK(first.rfind("# calpha test --model iv", 0) == 0);

  const auto sim_path = temp_file("sim.csv");
  {
    sim::SimDesign sd = *sim::SimDesign::parse("exp1-homo");
    sd.n = 800;
    const auto data = sim::simulate_sim(sd, 22);
    std::ofstream out(sim_path);
    out.precision(17);
    out << "outcome,a,b\n";
    for (Eigen::Index i = 0; i < data.n(); ++i) out << data.y(i) << ',' << data.x1(i) << ',' << data.x2(i) << '\n';
  }
  const auto sim_far = run({"test", "--model", "sim", "--data", sim_path.string(), "--map", "y=outcome,x=a+b",
                            "--theta0", "2", "--tests", "psi"});
  REQUIRE(sim_far.code == 0);
  CHECK(parse_table(sim_far.out, "model").rows.at(0).at("reject") == "1");
  CHECK(run({"test", "--model", "sim", "--data", sim_path.string(), "--map", "y=outcome,x=a"}).code == 2);

  std::filesystem::remove(iv_path);
  std::filesystem::remove(out_path);
  std::filesystem::remove(sim_path);
}

TEST_CASE("ci command") {
  const auto r = run({"ci", "--model", "iv", "--design", "d2-log-log-1", "--n", "300", "--seed", "9", "--grid", "-1,1"});
  REQUIRE(r.code == 0);
  const auto t = parse_table(r.out, "theta");
  REQUIRE(t.rows.size() == 5000);
  CHECK(t.rows.front().at("theta") == "-1");
  CHECK(t.rows.back().at("theta") == "1");
  REQUIRE(t.comments.size() == 2);
  const std::string& summary = t.comments[1];
  CHECK(summary.rfind("# summary accepted=", 0) == 0);
  const auto lo_pos = summary.find(" lo=");
  const auto hi_pos = summary.find(" hi=");
  REQUIRE(lo_pos != std::string::npos);
  const std::string lo = summary.substr(lo_pos + 4, hi_pos - lo_pos - 4);
  const std::string hi = summary.substr(hi_pos + 4, summary.find(' ', hi_pos + 1) - hi_pos - 4);
  bool lo_found = false, hi_found = false;
  for (const auto& row : t.rows) {
    if (row.at("theta") == lo) lo_found = row.at("accepted") == "1";
    if (row.at("theta") == hi) hi_found = row.at("accepted") == "1";
  }
  CHECK(lo_found);
  CHECK(hi_found);
  CHECK(std::stod(lo) <= 0.0);
  CHECK(std::stod(hi) >= 0.0);
  CHECK(run({"ci", "--model", "iv", "--design", "d2-log-log-1", "--n", "300", "--seed", "9", "--grid", "-1,1"}).out ==
        r.out);
  CHECK(run({"ci", "--model", "iv", "--design", "d1-log-log-1", "--grid", "-1,1,11"}).code == 3);
  CHECK(run({"ci", "--model", "sim", "--design", "exp1-homo", "--grid", "-1,1,11"}).code == 2);
}

TEST_CASE("config files mirror flags") {
  const auto cfg = temp_file("bounds.ini");
  {
    std::ofstream out(cfg);
    out << "alpha=0.1\nr=2\ninfo=0.5\n";
  }
  const auto from_file = run({"bounds", "--config", cfg.string()});
  const auto from_flags = run({"bounds", "--alpha", "0.1", "--r", "2", "--info", "0.5"});
  REQUIRE(from_file.code == 0);
  CHECK(from_file.out == from_flags.out);
  CHECK(from_file.out.find("--alpha 0.1") != std::string::npos);

  // Command-line flags win over the file.
  const auto mixed = run({"bounds", "--alpha", "0.2", "--config", cfg.string()});
  CHECK(mixed.out.find("--alpha 0.2\n") != std::string::npos);
  CHECK(mixed.out.find("--r 2 ") != std::string::npos);

  {
    std::ofstream out(cfg);
    out << "# study\n[size]\nmodel = \"iv\"\ndesign = [\"d2-exp-exp-1\", \"d2-log-log-1\"]\nn=120\nreps=6\n"
           "include_z1=true\ngrid_unused=false\n";
  }
  const auto sized = run({"size", "--config", cfg.string(), "--threads", "1"});
  const auto flagged = run({"size", "--model", "iv", "--design", "d2-exp-exp-1,d2-log-log-1", "--n", "120", "--reps",
                            "6", "--include-z1", "--threads", "1"});
  REQUIRE(sized.code == 0);
  CHECK(sized.out == flagged.out);
  CHECK(sized.out.find("--include-z1") != std::string::npos);

  CHECK(run({"bounds", "--config", "/nonexistent/calpha.ini"}).code == 2);
  {
    std::ofstream out(cfg);
    out << "frobnicate=1\n";
  }
  CHECK(run({"bounds", "--config", cfg.string()}).code == 2);
  std::filesystem::remove(cfg);
}

TEST_SUITE("properties") {
  TEST_CASE("maximin bound properties") {
    const auto r = run({"bounds", "--r", "1,2,3,5", "--a", "0,30,61", "--alpha", "0.05"});
    REQUIRE(r.code == 0);
    const auto t = parse_table(r.out, "kind");
    std::map<int, double> last;
    for (const auto& row : t.rows) {
      if (row.at("kind") != "maximin") continue;
      const int rank = std::stoi(row.at("r"));
      const double a = num(row, "a"), bound = num(row, "bound");
      if (a == 0.0) CHECK(std::abs(bound - 0.05) < 1e-12);
      if (rank == 1) CHECK(std::abs(bound - core::two_sided_power_bound(1.0, std::sqrt(a), 0.05)) < 1e-10);
      if (last.count(rank)) CHECK(bound >= last[rank]);
      last[rank] = bound;
    }
    CHECK(last.size() == 4);
    // More degrees of freedom spread the same noncentrality thinner.
    CHECK(last[1] > last[2]);
    CHECK(last[2] > last[3]);
  }
}
