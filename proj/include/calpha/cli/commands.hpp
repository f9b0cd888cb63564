#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "calpha/iv/iv_model.hpp"
#include "calpha/sim/sim_model.hpp"

namespace calpha::cli {

enum class Model { Sim, Iv };

Model parse_model(const std::string& text);
std::string model_name(Model model);

/// Monte Carlo settings shared by size and power studies.
struct StudyConfig {
  Model model = Model::Sim;
  long reps = 2000;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  /// Model default (1e-3 for sim, 1e-2 for iv) when unset.
  std::optional<double> threshold;
  iv::OrderRule order = iv::OrderRule::fixed(3);
  bool include_z1 = false;
  /// Empty selects the model default: psi,wald for sim and psi,ar for iv.
  std::vector<std::string> tests;
  int threads = 1;

  double effective_threshold() const;
  std::vector<std::string> effective_tests() const;
  void validate() const;
};

struct RateEstimate {
  long rejections = 0;
  long reps = 0;
  double rate() const;
  /// Binomial standard error of rate().
  double mc_se() const;
};

struct SizeRow {
  std::string test;
  RateEstimate estimate;
};

struct CurveRow {
  double theta = 0.0;
  std::string test;
  RateEstimate estimate;
};

struct SurfaceRow {
  double tau1 = 0.0;
  double tau2 = 0.0;
  std::string test;
  RateEstimate estimate;
};

/// All design names accepted for a model: the 12 sim cells, or the 18 iv
/// cells with j1 = j2.
std::vector<std::string> valid_designs(Model model);

/// Canonical design name; UsageError listing the valid set otherwise.
std::string canonical_design(Model model, const std::string& name);

/// Null rejection frequencies of one design cell, one row per test in the
/// order of effective_tests(). Replication r uses make_stream(seed, r, tag)
/// with the tag derived from the model, canonical design name and n, so a
/// cell's result does not depend on the other cells in a run or on threads.
std::vector<SizeRow> run_size_cell(const StudyConfig& cfg, const std::string& design, int n);

/// Rejection frequencies of H0: theta = theta0 (1 for sim, 0 for iv) when data
/// are drawn at each theta of the grid. Scalar-theta designs only. Every grid
/// point of a replication shares its random draws.
std::vector<CurveRow> run_power_curve(const StudyConfig& cfg, const std::string& design, int n,
                                      const std::vector<double>& thetas);

/// Design 1 power surface: data drawn at theta = (tau1, tau2) / sqrt(n) for
/// every pair of grid values, H0: theta = 0. The first stage is fitted once
/// per replication.
std::vector<SurfaceRow> run_power_surface(const StudyConfig& cfg, const std::string& design, int n,
                                          const std::vector<double>& taus);

/// Shortest round-trip decimal form.
std::string format_number(double v);

/// Entry point of the calpha executable. Returns the process exit code:
/// 0 success, 2 usage, 3 data, 4 numerical.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace calpha::cli
