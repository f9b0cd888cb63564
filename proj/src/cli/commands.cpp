#include "calpha/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "calpha/core/power.hpp"
#include "calpha/error.hpp"

namespace calpha::cli {

namespace {

constexpr double kSimNull = 1.0;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t cell_tag(Model model, const std::string& design, int n) {
  return fnv1a(model_name(model) + ":" + design + ":" + std::to_string(n));
}

// Runs body(i) for i in [0, count) on `threads` workers. If any call throws,
// the exception of the lowest failing index is rethrown after all workers stop.
template <class Body>
void parallel_for(long count, int threads, Body body) {
  std::atomic<long> next{0};
  std::mutex mu;
  long failed_at = count;
  std::exception_ptr failure;
  auto worker = [&] {
    for (long i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  const long workers = std::max(1L, std::min<long>(threads, count));
  std::vector<std::thread> pool;
  for (long t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

RateEstimate count_rate(const std::vector<std::uint8_t>& rejects, long reps, std::size_t stride, std::size_t offset) {
  RateEstimate e;
  e.reps = reps;
  for (long r = 0; r < reps; ++r) e.rejections += rejects[static_cast<std::size_t>(r) * stride + offset];
  return e;
}

sim::SimDesign sim_design(const std::string& name, int n) {
  sim::SimDesign d = *sim::SimDesign::parse(name);
  d.n = n;
  d.validate();
  return d;
}

iv::IVDesign iv_design(const std::string& name, int n) {
  iv::IVDesign d = *iv::IVDesign::parse(name);
  d.n = n;
  d.validate();
  return d;
}

iv::FirstStageOptions first_stage_options(const StudyConfig& cfg) {
  iv::FirstStageOptions opt;
  opt.order = cfg.order;
  opt.include_z1 = cfg.include_z1;
  return opt;
}

void check_tests(Model model, const std::vector<std::string>& tests) {
  const std::string other = model == Model::Sim ? "wald" : "ar";
  for (const auto& t : tests) {
    if (t != "psi" && t != other) {
      throw UsageError("unknown test '" + t + "' for model " + model_name(model) + " (valid: psi," + other + ")");
    }
  }
}

// Per-replication decisions for the sim tests at one data set.
void sim_decisions(const sim::SimData& data, const StudyConfig& cfg, const std::vector<std::string>& tests,
                   std::uint8_t* out) {
  const auto fits = sim::fit_sim_nuisance(data, kSimNull);
  const double thr = cfg.effective_threshold();
  for (std::size_t k = 0; k < tests.size(); ++k) {
    out[k] = tests[k] == "psi" ? sim::psi_test_sim(data, kSimNull, cfg.alpha, thr, fits).reject
                               : sim::wald_test_ichimura(data, kSimNull, cfg.alpha, fits).reject;
  }
}

void iv_decisions(const iv::IVData& data, const iv::FirstStage* stage, const StudyConfig& cfg,
                  const std::vector<std::string>& tests, std::uint8_t* out) {
  const Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(data.x.cols());
  for (std::size_t k = 0; k < tests.size(); ++k) {
    out[k] = tests[k] == "psi" ? iv::psi_test_iv(data, theta0, cfg.alpha, cfg.effective_threshold(), *stage).reject
                               : iv::ar_test(data, theta0, cfg.alpha).reject;
  }
}

bool wants(const std::vector<std::string>& tests, const std::string& name) {
  return std::find(tests.begin(), tests.end(), name) != tests.end();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, sep)) parts.push_back(item);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? sep : "") + parts[i];
  return s;
}

template <class T>
std::string join_numbers(const std::vector<T>& v, const std::string& sep) {
  std::vector<std::string> parts;
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) {
      parts.push_back(format_number(x));
    } else {
      parts.push_back(std::to_string(x));
    }
  }
  return join(parts, sep);
}

double parse_real(const std::string& text, const std::string& what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw UsageError("invalid number '" + text + "' in " + what);
  }
  return v;
}

struct GridSpec {
  double lo = 0.0;
  double hi = 0.0;
  int points = 0;

  std::vector<double> values() const {
    if (points == 1) return {lo};
    return iv::make_grid(lo, hi, points);
  }
  std::string str() const { return format_number(lo) + "," + format_number(hi) + "," + std::to_string(points); }
};

// "lo,hi[,points]"; a single point needs lo == hi.
GridSpec parse_grid(const std::string& text, const std::string& flag, std::optional<int> default_points) {
  const auto parts = split(text, ',');
  if (parts.size() != 3 && !(parts.size() == 2 && default_points)) {
    throw UsageError(flag + " expects lo,hi" + std::string(default_points ? "[,points]" : ",points") + ", got '" +
                     text + "'");
  }
  GridSpec g;
  g.lo = parse_real(parts[0], flag);
  g.hi = parse_real(parts[1], flag);
  if (parts.size() == 3) {
    const double p = parse_real(parts[2], flag);
    if (p != std::floor(p) || p < 1 || p > 1e7) throw UsageError(flag + ": points must be a positive integer");
    g.points = static_cast<int>(p);
  } else {
    g.points = *default_points;
  }
  if (g.points == 1 ? g.lo != g.hi : !(g.lo < g.hi)) throw UsageError(flag + ": need lo < hi (or lo == hi with 1 point)");
  return g;
}

struct ColumnSpec {
  std::string y;
  std::vector<std::string> x, z1, z2;
};

// "y=<col>,x=<a+b>,z1=<cols>,z2=<cols>"
ColumnSpec parse_map(const std::string& text) {
  ColumnSpec spec;
  for (const auto& item : split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--map entry '" + item + "' is not key=columns");
    const std::string key = item.substr(0, eq);
    const auto cols = split(item.substr(eq + 1), '+');
    for (const auto& c : cols) {
      if (c.empty()) throw UsageError("--map entry '" + item + "' has an empty column name");
    }
    if (key == "y") {
      if (cols.size() != 1) throw UsageError("--map: y takes exactly one column");
      spec.y = cols[0];
    } else if (key == "x") {
      spec.x = cols;
    } else if (key == "z1") {
      spec.z1 = cols;
    } else if (key == "z2") {
      spec.z2 = cols;
    } else {
      throw UsageError("--map: unknown key '" + key + "' (valid: y, x, z1, z2)");
    }
  }
  if (spec.y.empty() || spec.x.empty()) throw UsageError("--map needs y and x");
  return spec;
}

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : path_(path), stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw InputError("cannot write '" + path + "'");
      stream_ = &file_;
    }
  }
  std::ostream& stream() { return *stream_; }
  bool to_file() const { return !path_.empty(); }
  void close() {
    if (file_.is_open()) {
      file_.close();
      if (!file_) throw InputError("failed writing '" + path_ + "'");
    }
  }

 private:
  std::string path_;
  std::ofstream file_;
  std::ostream* stream_;
};

// Everything the subcommands read from the command line.
struct Flags {
  std::string model;
  std::vector<std::string> designs;
  std::vector<int> ns;
  long reps = 2000;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  double threshold = 0.0;
  std::string order = "k:3";
  std::vector<std::string> tests;
  std::string out;
  int threads = 0;
  std::string grid;
  std::string data;
  std::string map;
  bool intercept = false;
  bool include_z1 = false;
  std::vector<double> theta0;
  std::vector<int> r;
  std::string a_grid = "0,20,41";
  std::vector<double> info{1.0};
  std::string tau_grid = "0,4,17";
  std::string config;
};

struct Parsed {
  CLI::App* sub = nullptr;
  CLI::Option* threshold = nullptr;
  CLI::Option* reps = nullptr;
  CLI::Option* ns = nullptr;
  CLI::Option* designs = nullptr;
  CLI::Option* theta0 = nullptr;
  CLI::Option* grid = nullptr;
};

StudyConfig study_config(const Flags& f, const Parsed& p, Model model) {
  StudyConfig cfg;
  cfg.model = model;
  cfg.reps = f.reps;
  cfg.seed = f.seed;
  cfg.alpha = f.alpha;
  if (p.threshold && p.threshold->count() > 0) cfg.threshold = f.threshold;
  cfg.order = iv::OrderRule::parse(f.order);
  cfg.include_z1 = f.include_z1;
  cfg.tests = f.tests;
  cfg.threads = f.threads > 0 ? f.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  cfg.validate();
  return cfg;
}

std::string study_manifest(const std::string& command, const StudyConfig& cfg, const std::vector<std::string>& designs,
                           const std::vector<int>& ns) {
  std::string m = "# calpha " + command + " --model " + model_name(cfg.model) + " --design " + join(designs, ",") +
                  " --n " + join_numbers(ns, ",") + " --reps " + std::to_string(cfg.reps) + " --seed " +
                  std::to_string(cfg.seed) + " --alpha " + format_number(cfg.alpha) + " --threshold " +
                  format_number(cfg.effective_threshold());
  if (cfg.model == Model::Iv) {
    m += " --order " + cfg.order.str();
    if (cfg.include_z1) m += " --include-z1";
  }
  return m + " --tests " + join(cfg.effective_tests(), ",");
}

std::vector<std::string> resolve_designs(Model model, const std::vector<std::string>& requested) {
  std::vector<std::string> out;
  for (const auto& d : requested) {
    if (d == "all") {
      const auto all = valid_designs(model);
      out.insert(out.end(), all.begin(), all.end());
    } else {
      out.push_back(canonical_design(model, d));
    }
  }
  if (out.empty()) throw UsageError("--design: no designs given");
  return out;
}

std::vector<int> resolve_ns(const Flags& f, const Parsed& p, Model model) {
  std::vector<int> ns = f.ns;
  if (!p.ns || p.ns->count() == 0) ns = {model == Model::Sim ? 800 : 400};
  for (int n : ns) {
    if (n < 2) throw UsageError("--n: sample sizes must be at least 2");
  }
  return ns;
}

int cmd_size(const Flags& f, const Parsed& p, std::ostream& out) {
  const Model model = parse_model(f.model);
  const StudyConfig cfg = study_config(f, p, model);
  const auto designs = resolve_designs(model, f.designs.empty() ? std::vector<std::string>{"all"} : f.designs);
  const auto ns = resolve_ns(f, p, model);

  Output o(f.out, out);
  auto& s = o.stream();
  s << study_manifest("size", cfg, designs, ns) << '\n';
  s << "model,design,n,test,erf,mc_se,reps,seed\n";
  for (const auto& d : designs) {
    for (int n : ns) {
      for (const auto& row : run_size_cell(cfg, d, n)) {
        s << model_name(model) << ',' << d << ',' << n << ',' << row.test << ',' << format_number(100.0 * static_cast<double>(row.estimate.rejections) / static_cast<double>(row.estimate.reps))
          << ',' << format_number(100.0 * row.estimate.mc_se()) << ',' << cfg.reps << ',' << cfg.seed << '\n';
      }
    }
  }
  o.close();
  return 0;
}

bool is_surface(Model model, const std::string& design) {
  return model == Model::Iv && iv::IVDesign::parse(design)->variant == iv::Variant::Design1;
}

int cmd_power(const Flags& f, const Parsed& p, std::ostream& out) {
  const Model model = parse_model(f.model);
  Flags g = f;
  // Power defaults: psi only for sim (the Wald search is slow), 2,500 reps for
  // Design 1 surfaces.
  if (g.tests.empty() && model == Model::Sim) g.tests = {"psi"};
  if (f.designs.empty()) throw UsageError("power needs --design");
  const auto designs = resolve_designs(model, f.designs);
  const bool surface = is_surface(model, designs.front());
  for (const auto& d : designs) {
    if (is_surface(model, d) != surface) throw UsageError("power: cannot mix Design 1 surfaces with curves in one run");
  }
  if (surface && (!p.reps || p.reps->count() == 0)) g.reps = 2500;
  const StudyConfig cfg = study_config(g, p, model);
  const auto ns = resolve_ns(f, p, model);

  std::string default_grid = model == Model::Sim ? "0.5,1.5,21" : "-0.5,0.5,21";
  if (surface) default_grid = "-4,4,9";
  const GridSpec grid = parse_grid(p.grid && p.grid->count() > 0 ? f.grid : default_grid, "--grid", std::nullopt);
  const auto values = grid.values();

  Output o(f.out, out);
  auto& s = o.stream();
  s << study_manifest("power", cfg, designs, ns) << " --grid " << grid.str() << '\n';
  if (surface) {
    s << "model,design,n,tau1,tau2,test,rejection_rate,mc_se,reps,seed\n";
  } else {
    s << "model,design,n,theta,test,rejection_rate,mc_se,reps,seed\n";
  }
  for (const auto& d : designs) {
    for (int n : ns) {
      const std::string prefix = model_name(model) + "," + d + "," + std::to_string(n) + ",";
      const std::string suffix = "," + std::to_string(cfg.reps) + "," + std::to_string(cfg.seed) + "\n";
      if (surface) {
        for (const auto& row : run_power_surface(cfg, d, n, values)) {
          s << prefix << format_number(row.tau1) << ',' << format_number(row.tau2) << ',' << row.test << ','
            << format_number(row.estimate.rate()) << ',' << format_number(row.estimate.mc_se()) << suffix;
        }
      } else {
        for (const auto& row : run_power_curve(cfg, d, n, values)) {
          s << prefix << format_number(row.theta) << ',' << row.test << ',' << format_number(row.estimate.rate())
            << ',' << format_number(row.estimate.mc_se()) << suffix;
        }
      }
    }
  }
  o.close();
  return 0;
}

std::string data_manifest(const std::string& command, const Flags& f) {
  std::string m = "# calpha " + command + " --model " + f.model + " --data " + f.data + " --map " + f.map;
  if (f.intercept) m += " --intercept";
  return m;
}

void print_result(std::ostream& out, const std::string& test, const core::TestResult& r, double alpha) {
  out << test << " test\n"
      << "  statistic       " << format_number(r.statistic) << '\n'
      << "  rank            " << r.rank << '\n'
      << "  critical value  " << format_number(r.critical_value) << '\n'
      << "  p-value         " << format_number(r.p_value) << '\n'
      << "  decision        " << (r.reject ? "reject" : "do not reject") << " at alpha = " << format_number(alpha)
      << '\n';
}

int cmd_test(const Flags& f, const Parsed& p, std::ostream& out) {
  const Model model = parse_model(f.model);
  if (f.data.empty()) throw UsageError("test needs --data");
  if (f.map.empty()) throw UsageError("test needs --map");
  if (!(f.alpha > 0.0 && f.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  const ColumnSpec cols = parse_map(f.map);
  std::vector<std::string> tests = f.tests;
  if (tests.empty()) tests = model == Model::Sim ? std::vector<std::string>{"psi", "wald"} : std::vector<std::string>{"psi", "ar"};
  check_tests(model, tests);
  const double threshold = p.threshold && p.threshold->count() > 0 ? f.threshold
                                                                   : (model == Model::Sim ? sim::kSimThreshold : iv::kIVThreshold);
  if (!(threshold >= 0.0)) throw UsageError("--threshold must be nonnegative");

  std::vector<std::pair<std::string, core::TestResult>> results;
  Eigen::Index n = 0;
  std::vector<double> theta0 = f.theta0;
  std::string manifest = data_manifest("test", f);
  if (model == Model::Sim) {
    if (cols.x.size() != 2 || !cols.z1.empty() || !cols.z2.empty()) {
      throw UsageError("--map for the sim model is y=<col>,x=<x1>+<x2>");
    }
    if (theta0.empty()) theta0 = {kSimNull};
    if (theta0.size() != 1) throw UsageError("--theta0: the sim model has a scalar index parameter");
    const Eigen::MatrixXd m = iv::read_csv_columns(f.data, {cols.y, cols.x[0], cols.x[1]});
    sim::SimData data{m.col(0), m.col(1), m.col(2)};
    n = data.n();
    const auto fits = sim::fit_sim_nuisance(data, theta0[0]);
    for (const auto& t : tests) {
      results.emplace_back(t, t == "psi" ? sim::psi_test_sim(data, theta0[0], f.alpha, threshold, fits)
                                         : sim::wald_test_ichimura(data, theta0[0], f.alpha, fits));
    }
  } else {
    iv::ColumnMap map{cols.y, cols.x, cols.z1, cols.z2};
    const iv::IVData data = iv::load_csv(f.data, map, f.intercept);
    n = data.n();
    if (theta0.empty()) theta0.assign(static_cast<std::size_t>(data.x.cols()), 0.0);
    if (theta0.size() != static_cast<std::size_t>(data.x.cols())) {
      throw UsageError("--theta0 has " + std::to_string(theta0.size()) + " values for " +
                       std::to_string(data.x.cols()) + " x columns");
    }
    const Eigen::VectorXd th = Eigen::Map<const Eigen::VectorXd>(theta0.data(), static_cast<Eigen::Index>(theta0.size()));
    iv::FirstStageOptions opt;
    opt.order = iv::OrderRule::parse(f.order);
    opt.include_z1 = f.include_z1;
    for (const auto& t : tests) {
      results.emplace_back(t, t == "psi" ? iv::psi_test_iv(data, th, f.alpha, threshold, opt) : iv::ar_test(data, th, f.alpha));
    }
    manifest += " --order " + opt.order.str() + (opt.include_z1 ? " --include-z1" : "");
  }
  manifest += " --theta0 " + join_numbers(theta0, ",") + " --alpha " + format_number(f.alpha) + " --threshold " +
              format_number(threshold) + " --tests " + join(tests, ",");

  for (const auto& [name, r] : results) print_result(out, name, r, f.alpha);

  std::ostringstream csv;
  csv << manifest << '\n' << "model,test,theta0,statistic,rank,critical_value,p_value,reject,n\n";
  for (const auto& [name, r] : results) {
    csv << model_name(model) << ',' << name << ',' << join_numbers(theta0, ";") << ',' << format_number(r.statistic)
        << ',' << r.rank << ',' << format_number(r.critical_value) << ',' << format_number(r.p_value) << ','
        << (r.reject ? 1 : 0) << ',' << n << '\n';
  }
  if (f.out.empty()) {
    out << '\n' << csv.str();
  } else {
    Output o(f.out, out);
    o.stream() << csv.str();
    o.close();
  }
  return 0;
}

int cmd_ci(const Flags& f, const Parsed& p, std::ostream& out) {
  if (!f.model.empty() && parse_model(f.model) != Model::Iv) throw UsageError("ci is available for the iv model only");
  if (!(f.alpha > 0.0 && f.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  if (f.grid.empty()) throw UsageError("ci needs --grid lo,hi[,points]");
  const GridSpec grid = parse_grid(f.grid, "--grid", 5000);
  if (grid.points < 2) throw UsageError("--grid: ci needs at least 2 points");
  const double threshold = p.threshold && p.threshold->count() > 0 ? f.threshold : iv::kIVThreshold;
  if (!(threshold >= 0.0)) throw UsageError("--threshold must be nonnegative");
  iv::FirstStageOptions opt;
  opt.order = iv::OrderRule::parse(f.order);
  opt.include_z1 = f.include_z1;

  iv::IVData data;
  std::string manifest;
  if (!f.data.empty()) {
    if (f.map.empty()) throw UsageError("ci with --data needs --map");
    const ColumnSpec cols = parse_map(f.map);
    data = iv::load_csv(f.data, iv::ColumnMap{cols.y, cols.x, cols.z1, cols.z2}, f.intercept);
    manifest = "# calpha ci --model iv --data " + f.data + " --map " + f.map + (f.intercept ? " --intercept" : "");
  } else {
    if (f.designs.size() != 1) throw UsageError("ci needs --data or a single simulated --design");
    const std::string name = canonical_design(Model::Iv, f.designs[0]);
    const int n = p.ns && p.ns->count() > 0 ? f.ns.at(0) : 400;
    if (f.ns.size() > 1) throw UsageError("ci takes a single --n");
    iv::IVDesign d = iv_design(name, n);
    if (!f.theta0.empty()) {
      if (f.theta0.size() != 1) throw UsageError("--theta0: ci needs a scalar value");
      d.theta_true = Eigen::VectorXd::Constant(1, f.theta0[0]);
    }
    data = iv::simulate_iv(d, f.seed);
    manifest = "# calpha ci --model iv --design " + name + " --n " + std::to_string(n) + " --seed " +
               std::to_string(f.seed) + (f.theta0.empty() ? "" : " --theta0 " + format_number(f.theta0[0]));
  }
  manifest += " --order " + opt.order.str() + (opt.include_z1 ? " --include-z1" : "") + " --alpha " +
              format_number(f.alpha) + " --threshold " + format_number(threshold) + " --grid " + grid.str();

  const auto ci = iv::invert_ci(data, grid.lo, grid.hi, grid.points, f.alpha, opt, threshold);
  std::string summary = "# summary accepted=" + std::to_string(ci.accepted_count()) + "/" +
                        std::to_string(ci.grid.size());
  if (ci.empty()) {
    summary += " empty=1";
  } else {
    summary += " lo=" + format_number(*ci.lo) + " hi=" + format_number(*ci.hi) +
               " disconnected=" + (ci.disconnected ? "1" : "0");
  }

  Output o(f.out, out);
  auto& s = o.stream();
  s << manifest << '\n' << "theta,accepted\n";
  for (std::size_t k = 0; k < ci.grid.size(); ++k) s << format_number(ci.grid[k]) << ',' << (ci.accepted[k] ? 1 : 0) << '\n';
  s << summary << '\n';
  o.close();
  if (o.to_file()) out << summary.substr(2) << '\n';
  return 0;
}

int cmd_bounds(const Flags& f, std::ostream& out) {
  if (!(f.alpha > 0.0 && f.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  const std::vector<int> ranks = f.r.empty() ? std::vector<int>{1, 2, 3} : f.r;
  for (int r : ranks) {
    if (r < 1) throw UsageError("--r: ranks must be positive");
  }
  if (f.info.empty()) throw UsageError("--info: empty list");
  for (double i : f.info) {
    if (!(i >= 0.0) || !std::isfinite(i)) throw UsageError("--info: values must be finite and nonnegative");
  }
  const GridSpec a = parse_grid(f.a_grid, "--a", std::nullopt);
  if (a.lo < 0.0) throw UsageError("--a: noncentralities must be nonnegative");
  const GridSpec tau = parse_grid(f.tau_grid, "--tau", std::nullopt);

  Output o(f.out, out);
  auto& s = o.stream();
  s << "# calpha bounds --r " << join_numbers(ranks, ",") << " --a " << a.str() << " --info "
    << join_numbers(f.info, ",") << " --tau " << tau.str() << " --alpha " << format_number(f.alpha) << '\n';
  s << "kind,r,a,info,tau,alpha,bound\n";
  for (int r : ranks) {
    for (double v : a.values()) {
      s << "maximin," << r << ',' << format_number(v) << ",,," << format_number(f.alpha) << ','
        << format_number(core::asymptotic_power(core::PowerSpec{r, v, f.alpha})) << '\n';
    }
  }
  for (double info : f.info) {
    for (double t : tau.values()) {
      s << "two_sided,,," << format_number(info) << ',' << format_number(t) << ',' << format_number(f.alpha) << ','
        << format_number(core::two_sided_power_bound(info, t, f.alpha)) << '\n';
    }
  }
  o.close();
  return 0;
}

std::string trim_blank(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string unquote(std::string s) {
  s = trim_blank(s);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

// Lines "key = value" of a --config file become "--key=value" flags placed
// before the command-line flags; keys already given on the command line are
// skipped. '#' and ';' start comments, [section] lines are ignored, true and
// false switch flags, and ["a", "b"] lists are joined with commas.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 == args.size()) throw UsageError("--config needs a file name");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty() || rest.empty()) return args;

  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  const auto given = [&](const std::string& key) {
    return std::any_of(rest.begin() + 1, rest.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
    });
  };
  std::vector<std::string> out{rest.front()};
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    line = trim_blank(line);
    if (line.empty() || line.front() == '#' || line.front() == ';' || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config file '" + path + "' line " + std::to_string(line_number) + ": expected key=value");
    }
    std::string key = trim_blank(line.substr(0, eq));
    std::string value = trim_blank(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty() || given(key)) continue;
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      std::vector<std::string> items;
      for (const auto& item : split(value.substr(1, value.size() - 2), ',')) items.push_back(unquote(item));
      value = join(items, ",");
    } else {
      value = unquote(value);
    }
    if (value == "true") {
      out.push_back("--" + key);
    } else if (value != "false") {
      out.push_back("--" + key + "=" + value);
    }
  }
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

void add_common(CLI::App* sub, Flags& f, Parsed& p) {
  sub->add_option("--model", f.model, "sim or iv");
  sub->add_option("--alpha", f.alpha, "Nominal level")->capture_default_str();
  p.threshold = sub->add_option("--threshold", f.threshold, "Eigenvalue threshold (default 1e-3 sim, 1e-2 iv)");
  sub->add_option("--order", f.order, "First-stage order rule: k:<int>, aic or bic")->capture_default_str();
  sub->add_flag("--include-z1", f.include_z1, "Add the Z1 columns to the first-stage regressors");
  sub->add_option("--tests", f.tests, "Tests to run (psi,wald for sim; psi,ar for iv)")->delimiter(',');
  sub->add_option("--out", f.out, "Output CSV path (default stdout)");
  sub->add_option("--config", f.config, "Flat key=value file mirroring the flags");
}

void add_study(CLI::App* sub, Flags& f, Parsed& p) {
  p.designs = sub->add_option("--design", f.designs, "Design names, comma separated, or all")->delimiter(',');
  p.ns = sub->add_option("--n", f.ns, "Sample sizes, comma separated")->delimiter(',');
  p.reps = sub->add_option("--reps", f.reps, "Monte Carlo replications")->capture_default_str();
  sub->add_option("--seed", f.seed, "Master seed")->capture_default_str();
  sub->add_option("--threads", f.threads, "Worker threads (default: all cores)");
}

}  // namespace

Model parse_model(const std::string& text) {
  if (text == "sim") return Model::Sim;
  if (text == "iv") return Model::Iv;
  throw UsageError(text.empty() ? "--model is required (sim or iv)" : "unknown model '" + text + "' (valid: sim, iv)");
}

std::string model_name(Model model) { return model == Model::Sim ? "sim" : "iv"; }

double StudyConfig::effective_threshold() const {
  if (threshold) return *threshold;
  return model == Model::Sim ? sim::kSimThreshold : iv::kIVThreshold;
}

std::vector<std::string> StudyConfig::effective_tests() const {
  if (!tests.empty()) return tests;
  return model == Model::Sim ? std::vector<std::string>{"psi", "wald"} : std::vector<std::string>{"psi", "ar"};
}

void StudyConfig::validate() const {
  if (reps < 1) throw UsageError("--reps must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  if (threshold && !(*threshold >= 0.0)) throw UsageError("--threshold must be nonnegative");
  if (threads < 1) throw UsageError("--threads must be at least 1");
  check_tests(model, effective_tests());
}

double RateEstimate::rate() const { return reps > 0 ? static_cast<double>(rejections) / reps : 0.0; }

double RateEstimate::mc_se() const {
  const double p = rate();
  return reps > 0 ? std::sqrt(p * (1.0 - p) / reps) : 0.0;
}

std::vector<std::string> valid_designs(Model model) {
  std::vector<std::string> names;
  if (model == Model::Sim) {
    for (const char* fam : {"exp", "log"}) {
      for (const char* err : {"homo", "het"}) {
        for (int j = 1; j <= 3; ++j) names.push_back(std::string(fam) + std::to_string(j) + "-" + err);
      }
    }
  } else {
    for (const char* v : {"d1", "d2"}) {
      for (const char* fam : {"exp-exp", "log-log", "exp-log"}) {
        for (int j = 1; j <= 3; ++j) {
          names.push_back(std::string(v) + "-" + fam + "-" + std::to_string(j));
        }
      }
    }
  }
  return names;
}

std::string canonical_design(Model model, const std::string& name) {
  std::optional<std::string> canonical;
  if (model == Model::Sim) {
    if (const auto d = sim::SimDesign::parse(name)) canonical = d->name();
  } else {
    if (const auto d = iv::IVDesign::parse(name)) canonical = d->name();
  }
  if (!canonical) {
    throw UsageError("unknown " + model_name(model) + " design '" + name + "'; valid: " +
                     join(valid_designs(model), ", ") +
                     (model == Model::Iv ? " (mixed indices such as d1-exp-log-1-3 are also accepted)" : ""));
  }
  return *canonical;
}

std::vector<SizeRow> run_size_cell(const StudyConfig& cfg, const std::string& design, int n) {
  cfg.validate();
  const std::string name = canonical_design(cfg.model, design);
  const auto tests = cfg.effective_tests();
  const std::uint64_t tag = cell_tag(cfg.model, name, n);
  const std::size_t T = tests.size();
  std::vector<std::uint8_t> rejects(static_cast<std::size_t>(cfg.reps) * T, 0);

  if (cfg.model == Model::Sim) {
    const auto d = sim_design(name, n);
    parallel_for(cfg.reps, cfg.threads, [&](long r) {
      Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(r), tag);
      sim_decisions(sim::simulate_sim(d, rng), cfg, tests, &rejects[static_cast<std::size_t>(r) * T]);
    });
  } else {
    const auto d = iv_design(name, n);
    const auto opt = first_stage_options(cfg);
    parallel_for(cfg.reps, cfg.threads, [&](long r) {
      Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(r), tag);
      const auto data = iv::simulate_iv(d, rng);
      std::optional<iv::FirstStage> stage;
      if (wants(tests, "psi")) stage = iv::fit_first_stage(data, opt);
      iv_decisions(data, stage ? &*stage : nullptr, cfg, tests, &rejects[static_cast<std::size_t>(r) * T]);
    });
  }

  std::vector<SizeRow> rows;
  for (std::size_t k = 0; k < T; ++k) rows.push_back({tests[k], count_rate(rejects, cfg.reps, T, k)});
  return rows;
}

std::vector<CurveRow> run_power_curve(const StudyConfig& cfg, const std::string& design, int n,
                                      const std::vector<double>& thetas) {
  cfg.validate();
  if (thetas.empty()) throw UsageError("power: empty grid");
  const std::string name = canonical_design(cfg.model, design);
  const auto tests = cfg.effective_tests();
  const std::uint64_t tag = cell_tag(cfg.model, name, n);
  const std::size_t T = tests.size();
  const std::size_t G = thetas.size();
  std::vector<std::uint8_t> rejects(static_cast<std::size_t>(cfg.reps) * G * T, 0);

  if (cfg.model == Model::Sim) {
    const auto base = sim_design(name, n);
    parallel_for(cfg.reps, cfg.threads, [&](long r) {
      for (std::size_t g = 0; g < G; ++g) {
        sim::SimDesign d = base;
        d.theta_true = thetas[g];
        Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(r), tag);
        sim_decisions(sim::simulate_sim(d, rng), cfg, tests, &rejects[(static_cast<std::size_t>(r) * G + g) * T]);
      }
    });
  } else {
    const auto d = iv_design(name, n);
    if (d.d_theta() != 1) throw UsageError("power curve: " + name + " has two-dimensional theta (use a surface)");
    const auto opt = first_stage_options(cfg);
    parallel_for(cfg.reps, cfg.threads, [&](long r) {
      Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(r), tag);
      const auto null_data = iv::simulate_iv(d, rng);
      std::optional<iv::FirstStage> stage;
      if (wants(tests, "psi")) stage = iv::fit_first_stage(null_data, opt);
      for (std::size_t g = 0; g < G; ++g) {
        iv::IVData data = null_data;
        data.y += data.x.col(0) * thetas[g];
        iv_decisions(data, stage ? &*stage : nullptr, cfg, tests, &rejects[(static_cast<std::size_t>(r) * G + g) * T]);
      }
    });
  }

  std::vector<CurveRow> rows;
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t k = 0; k < T; ++k) rows.push_back({thetas[g], tests[k], count_rate(rejects, cfg.reps, G * T, g * T + k)});
  }
  return rows;
}

std::vector<SurfaceRow> run_power_surface(const StudyConfig& cfg, const std::string& design, int n,
                                          const std::vector<double>& taus) {
  cfg.validate();
  if (taus.empty()) throw UsageError("power: empty grid");
  if (cfg.model != Model::Iv) throw UsageError("power surfaces are available for iv Design 1 only");
  const std::string name = canonical_design(cfg.model, design);
  const auto d = iv_design(name, n);
  if (d.d_theta() != 2) throw UsageError("power surface: " + name + " has scalar theta (use a curve)");
  const auto tests = cfg.effective_tests();
  const std::uint64_t tag = cell_tag(cfg.model, name, n);
  const std::size_t T = tests.size();
  const std::size_t G = taus.size() * taus.size();
  const double root_n = std::sqrt(static_cast<double>(n));
  const auto opt = first_stage_options(cfg);
  std::vector<std::uint8_t> rejects(static_cast<std::size_t>(cfg.reps) * G * T, 0);

  parallel_for(cfg.reps, cfg.threads, [&](long r) {
    Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(r), tag);
    const auto null_data = iv::simulate_iv(d, rng);
    std::optional<iv::FirstStage> stage;
    if (wants(tests, "psi")) stage = iv::fit_first_stage(null_data, opt);
    for (std::size_t a = 0; a < taus.size(); ++a) {
      for (std::size_t b = 0; b < taus.size(); ++b) {
        iv::IVData data = null_data;
        data.y += (data.x.col(0) * taus[a] + data.x.col(1) * taus[b]) / root_n;
        const std::size_t g = a * taus.size() + b;
        iv_decisions(data, stage ? &*stage : nullptr, cfg, tests, &rejects[(static_cast<std::size_t>(r) * G + g) * T]);
      }
    }
  });

  std::vector<SurfaceRow> rows;
  for (std::size_t a = 0; a < taus.size(); ++a) {
    for (std::size_t b = 0; b < taus.size(); ++b) {
      const std::size_t g = a * taus.size() + b;
      for (std::size_t k = 0; k < T; ++k) {
        rows.push_back({taus[a], taus[b], tests[k], count_rate(rejects, cfg.reps, G * T, g * T + k)});
      }
    }
  }
  return rows;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  if (v == 0.0) return "0";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::to_string(v);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Locally regular C(alpha) tests: size and power studies, tests on data, confidence sets"};
  app.require_subcommand(1);
  Flags f;
  Parsed size_p, power_p, test_p, ci_p, bounds_p;

  auto* size = app.add_subcommand("size", "Null rejection frequencies by design cell");
  add_common(size, f, size_p);
  add_study(size, f, size_p);

  auto* power = app.add_subcommand("power", "Power curves, or surfaces for IV Design 1");
  add_common(power, f, power_p);
  add_study(power, f, power_p);
  power_p.grid = power->add_option("--grid", f.grid, "lo,hi,points: theta for curves, tau for Design 1 surfaces");

  auto* test = app.add_subcommand("test", "Run the tests on a CSV data set");
  add_common(test, f, test_p);
  test->add_option("--data", f.data, "Input CSV");
  test->add_option("--map", f.map, "y=<col>,x=<cols>,z1=<cols>,z2=<cols>; join columns with +");
  test->add_flag("--intercept", f.intercept, "Prepend an intercept column to Z1");
  test_p.theta0 = test->add_option("--theta0", f.theta0, "Null value(s), comma separated")->delimiter(',');

  auto* ci = app.add_subcommand("ci", "Confidence set for scalar theta by inverting the psi test");
  add_common(ci, f, ci_p);
  ci->add_option("--data", f.data, "Input CSV");
  ci->add_option("--map", f.map, "y=<col>,x=<col>,z1=<cols>,z2=<cols>; join columns with +");
  ci->add_flag("--intercept", f.intercept, "Prepend an intercept column to Z1");
  ci_p.grid = ci->add_option("--grid", f.grid, "lo,hi[,points]; 5000 points by default");
  ci_p.designs = ci->add_option("--design", f.designs, "Simulated design when --data is absent");
  ci_p.ns = ci->add_option("--n", f.ns, "Sample size of the simulated design");
  ci->add_option("--seed", f.seed, "Seed of the simulated design")->capture_default_str();
  ci->add_option("--theta0", f.theta0, "True theta of the simulated design");

  auto* bounds = app.add_subcommand("bounds", "Tabulate asymptotic power bounds");
  bounds->add_option("--r", f.r, "Ranks, comma separated (default 1,2,3)")->delimiter(',');
  bounds->add_option("--a", f.a_grid, "Noncentrality grid lo,hi,points")->capture_default_str();
  bounds->add_option("--info", f.info, "Efficient information values, comma separated")->delimiter(',');
  bounds->add_option("--tau", f.tau_grid, "tau grid lo,hi,points")->capture_default_str();
  bounds->add_option("--alpha", f.alpha, "Nominal level")->capture_default_str();
  bounds->add_option("--out", f.out, "Output CSV path (default stdout)");
  bounds->add_option("--config", f.config, "Flat key=value file mirroring the flags");

  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
  try {
    args = expand_config(args);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  std::vector<const char*> expanded{argc > 0 ? argv[0] : "calpha"};
  for (const auto& a : args) expanded.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(expanded.size()), expanded.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (size->parsed()) return cmd_size(f, size_p, out);
    if (power->parsed()) return cmd_power(f, power_p, out);
    if (test->parsed()) return cmd_test(f, test_p, out);
    if (ci->parsed()) return cmd_ci(f, ci_p, out);
    return cmd_bounds(f, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::Usage:
        return 2;
      case ErrorKind::Data:
        return 3;
      default:
        return 4;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace calpha::cli
