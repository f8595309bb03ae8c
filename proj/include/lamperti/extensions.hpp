#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lamperti/montecarlo.hpp"

namespace lamperti {

// ---- lattice random walks ----

struct RWalkModel {
  int d = 1;
  std::vector<std::vector<int>> steps;  // increment vectors
  std::vector<double> probs;
  int period = 1;  // 2 when every increment flips the coordinate-sum parity
  bool simple = false;
};

RWalkModel simple_random_walk(int d);
// Validates the law (sum 1, full-rank support) and fills the period.
RWalkModel make_rwalk(int d, std::vector<std::vector<int>> steps, std::vector<double> probs);

// Re{(1 - t phi(u))^-(1+beta)} at a single frequency vector.
double chung_fuchs_integrand(const RWalkModel& m, double beta, double t, const std::vector<double>& u);

struct IntegralEstimate {
  double t;
  double value;
  double stderr_;
};

struct QmcOptions {
  std::uint64_t points = 1 << 17;  // per replicate
  int replicates = 16;
  unsigned workers = 1;
};

IntegralEstimate chung_fuchs_integral(const RWalkModel& m, double beta, double t, std::uint64_t seed,
                                      const QmcOptions& opt = {});

struct GrowthVerdict {
  double first_increment = 0, last_increment = 0;
  double ratio = 0;      // last / first
  bool monotone = true;  // every increment positive
  bool saturates = false;
};

constexpr double kSaturationRatio = 0.5;
// Increments between consecutive values; saturation iff last/first <= kSaturationRatio.
GrowthVerdict increment_growth(const std::vector<double>& values);

struct ChungFuchsTable {
  double beta;
  std::vector<IntegralEstimate> rows;
  GrowthVerdict growth;
};

std::vector<double> default_t_grid();  // 0.9, 0.99, 0.999, 0.9999
ChungFuchsTable chung_fuchs_table(const RWalkModel& m, double beta, const std::vector<double>& t_grid,
                                  std::uint64_t seed, const QmcOptions& opt = {});

struct ReturnMassRow {
  std::uint64_t n;
  double phat;
  double stderr_;
};

struct ReturnMassResult {
  std::vector<ReturnMassRow> rows;  // n = 1..n_max
  double beta = 1.0;
  std::vector<std::pair<std::uint64_t, double>> partial_sums;  // (N, sum_{n<=N} n^beta phat)
  double growth_exponent = 0;  // OLS of log partial sum on log N over the last decade
  GrowthVerdict growth;        // decade increments of the partial sums
  double llt_slope = 0;        // slope of log phat(2n) vs log n
  double llt_predicted = 0;    // -d/2
  std::vector<std::string> warnings;
};

ReturnMassResult rwalk_return_mass(const RWalkModel& m, std::uint64_t n_max, std::uint64_t n_traj,
                                   std::uint64_t seed, double beta = 1.0, unsigned workers = 1);

struct NormDriftRow {
  double r;
  std::uint64_t points;
  double r_drift;    // mean ||z|| E[delta ||S||]
  double sq_change;  // mean E[(delta ||S||)^2]
  double drift_target;
  double sq_target;
};

// n_samples == 0: enumerate every lattice point with ||z|| in [r - 0.5, r + 0.5).
std::vector<NormDriftRow> norm_drift_check(const RWalkModel& m, const std::vector<double>& radii,
                                           std::uint64_t n_samples, std::uint64_t seed);

// ---- branching processes with migration ----

enum class OffspringKind { ShiftedGeometric, Poisson, Deterministic, Finite };

struct BranchingModel {
  OffspringKind offspring = OffspringKind::ShiftedGeometric;
  std::vector<double> offspring_probs;  // Finite: P(xi = k), k = 0..
  std::vector<std::pair<int, double>> migration;  // (value, prob)
  double theta = 0;
  double sigma2 = 0;
  double migration_m2 = 0;  // E zeta^2
};

BranchingModel make_branching(OffspringKind kind, std::vector<std::pair<int, double>> migration,
                              std::vector<double> offspring_probs = {});
// zeta in {-1, 2 theta + 1} with equal weights; theta must be a half-integer or integer.
std::vector<std::pair<int, double>> two_point_migration(double theta);
double offspring_mean(const BranchingModel& m);

// Mean of the law actually sampled for sum_{i<=w} xi_i.
double aggregate_offspring_mean(const BranchingModel& m, std::uint64_t w);
std::uint64_t sample_offspring_sum(const BranchingModel& m, std::uint64_t w, Rng& rng);
int sample_migration(const BranchingModel& m, Rng& rng);

constexpr double kPopulationGuard = 1e12;

struct BranchingPath {
  std::vector<std::uint64_t> w;  // W_0..W_n
  std::optional<std::uint64_t> tau_e;
  bool censored = false;
  bool overflow = false;
};

BranchingPath simulate_branching(const BranchingModel& m, std::uint64_t w0, std::uint64_t horizon,
                                 std::uint64_t seed, bool keep_path = true);

struct SqrtMoments {
  double x;
  double mu1, mu1_se, mu2, mu2_se;        // control-variate estimates
  double mu1_raw, mu1_raw_se, mu2_raw, mu2_raw_se;
  double scaled_mu1, target_mu1;          // 8 x mu1 vs 4 theta - sigma2
  double scaled_mu2, target_mu2;          // 4 mu2 vs sigma2
  double max_bound_excess;                // max(|dsqrt| - |delta|/sqrt(w)), must be <= 0
};

SqrtMoments branching_sqrt_moments(const BranchingModel& m, std::uint64_t w, std::uint64_t n_samples,
                                   std::uint64_t seed, unsigned workers = 1);

struct ExtinctionOptions {
  std::uint64_t w0 = 1;
  std::uint64_t n_traj = 100000;
  std::uint64_t n_cap = 10000;
  std::uint64_t escape_w = 9000;  // population treated as survival
  unsigned workers = 1;
  std::uint64_t survivor_floor = 50;
};

struct ExtinctionResult {
  EmpiricalClassification cls;
  std::uint64_t extinct = 0, escaped = 0, censored = 0;
  double predicted_lhs = 0, predicted_rhs = 0;  // 2 theta vs (beta + 1) sigma2
  bool predicted_saturates = false;
  bool agrees = false;
};

// Label is ESTABLISHED for shifted-geometric offspring, CONJECTURED otherwise.
ExtinctionResult branching_extinction_experiment(const BranchingModel& m, double beta,
                                                 const ExtinctionOptions& opt, std::uint64_t seed);

}  // namespace lamperti
