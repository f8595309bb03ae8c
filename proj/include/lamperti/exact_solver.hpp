#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lamperti/chain_models.hpp"

namespace lamperti {

enum class BoundaryPolicy { Killed, Reflected };

std::string to_string(BoundaryPolicy p);

constexpr double kReliableWidth = 1e-3;

// Return-probability function h on [0, R) of a truncated chain.
struct HittingSolution {
  State radius = 0;
  int max_jump = 1;
  BoundaryPolicy policy = BoundaryPolicy::Killed;
  std::vector<double> values;
  std::optional<std::vector<double>> bracket;  // same grid, other policy
  double boundary_exponent = 0.0;  // power-law continuation exponent (Reflected)
  double bracket_exponent = 0.0;
  double gamma_fit = 0.0;
  double max_residual = 0.0;
  bool degenerate = false;
  State reliable_end = 0;  // diagnostics use x < reliable_end

  double at(State x) const { return values.at(static_cast<std::size_t>(x)); }
  // Value at any x >= 0, continued beyond R by the boundary policy.
  double extended(State x) const;
  double lower(State x) const;
  double upper(State x) const;
  double relative_width(State x) const;
};

HittingSolution solve_return_prob(const JumpKernel& kernel, State R, BoundaryPolicy policy);
// Killed values with the Reflected solution as bracket.
HittingSolution solve_return_prob_bracketed(const JumpKernel& kernel, State R);
HittingSolution solve_return_prob_left_continuous(const JumpKernel& kernel, State R,
                                                  BoundaryPolicy policy = BoundaryPolicy::Killed);

struct EnvelopeRow {
  State x;
  double h;
  double lower_env;
  double upper_env;
  bool lower_ok;
  bool upper_ok;
};

struct EnvelopeReport {
  double gamma;
  double epsilon;
  std::vector<EnvelopeRow> rows;
  std::optional<State> threshold;  // least x from which both bounds hold to range end
};

// x^-gamma log^-eps x <= h(x) <= x^-gamma log^eps x on [x_lo, x_hi].
EnvelopeReport envelope_flags(const HittingSolution& h, double gamma, double epsilon, State x_lo,
                              State x_hi);

struct RatioRow {
  State x;
  int z;
  double ratio;             // h(x+z)/h(x)
  double predicted;         // 1 - gamma_c z / x
  double scaled;            // x (1 - ratio) / z
  double deviation;         // scaled - gamma_c
  double residual_times_x;  // x (ratio - predicted)
  double r_nu;              // f_{gc,eps}(x+z)/f_{gc,eps}(x), point-mass entrance surrogate
};

struct RatioDiagnostics {
  double gamma_c;
  State x_lo;
  State x_hi;
  std::vector<RatioRow> rows;
  double slope;  // log-log slope of h over the top decade of the range
  State slope_lo;
  State slope_hi;
  EnvelopeReport envelope;
};

RatioDiagnostics ratio_diagnostics(const HittingSolution& h, const LampertiSpec& spec, State x_lo,
                                   State x_hi, double epsilon = 0.5);

// OLS slope of log h against log x over log-spaced points of [lo, hi].
double loglog_slope(const HittingSolution& h, State lo, State hi);

// Least x in [lo, hi) such that h is strictly decreasing on [x, hi].
std::optional<State> monotonicity_threshold(const HittingSolution& h, State lo, State hi);

struct ConditionedKernel {
  JumpKernel base;
  std::vector<double> h;  // h on [0, R + B), continued by policy
  State window_end;       // rows defined for i < window_end
  State reliable_end;
  std::vector<double> rows;        // window_end x (2B+1)
  std::vector<double> row_defect;  // |row sum - 1|

  int max_jump() const { return base.max_jump(); }
  const double* row(State i) const {
    return rows.data() + static_cast<std::size_t>(i) * (2 * base.max_jump() + 1);
  }
};

ConditionedKernel build_conditioned_kernel(const JumpKernel& kernel, const HittingSolution& h);
MomentProfile conditioned_moments(const ConditionedKernel& ck, State x, int k);

struct EntranceDistribution {
  State a;
  int max_jump;
  State start;
  std::vector<double> probs;  // u = a .. a+B
  double reach_prob;
};

std::vector<EntranceDistribution> solve_interval_hitting(const JumpKernel& kernel, State a,
                                                         const std::vector<State>& starts,
                                                         State R);
double total_variation(const std::vector<double>& p, const std::vector<double>& q);

struct MomentSlack {
  double t_ineq;          // T(y) - T(x,y) P_y(tau_x < tau_y)
  double last_exit_low;   // L - T
  double last_exit_high;  // U - L
  double ut_lower;        // U - [N T + (1 + U(y)) P]
  double ut_upper;        // [N T + (1 + U(y)) P] - U
  double ut_identity;     // U - [N T + U(y) P]
};

struct ExactMoments {
  State x;
  State y;
  State radius;
  double N;        // expected visits to y from y, time 0 included
  double T1;       // E_x[tau_y 1{tau_y < inf}]
  double T1_y;     // T1(y, y)
  double L1;       // E_x[lambda_y]
  double U1;       // sum_n n P_x(X_n = y)
  double U1_y;     // U1(y, y)
  double hit;      // P_x(tau_y < inf)
  double x_before_y;  // P_y(tau_x < tau_y)
  double escape_y;    // P_y(tau_y = inf)
  long iterations;
  MomentSlack slack;  // each normalised by max(1, largest side)
  bool t_ineq_ok;
  bool last_exit_ok;
  bool ut_lower_ok;
  bool ut_upper_ok;
};

constexpr double kMomentTolerance = 1e-9;

ExactMoments exact_first_moments(const JumpKernel& kernel, State R, State x, State y);
// Batch version sharing the per-y series.
std::vector<ExactMoments> exact_first_moments(const JumpKernel& kernel, State R,
                                              const std::vector<std::pair<State, State>>& pairs);

struct ConditioningCheck {
  State x;
  State radius;
  double lhs;  // E_x[tau 1{tau < inf}] on the chain killed at R
  double rhs;  // h(x) * mean hitting time of the conditioned truncated chain
  double residual;
};

ConditioningCheck conditioning_identity_check(const JumpKernel& kernel, const HittingSolution& h,
                                              State x, State R);

// Generic absorbing solve on the window [lo, R) with killing beyond R:
// u(j) = fixed(j) on the absorbing set, u(j) = source(j) + sum_k p_jk u(k) elsewhere.
struct AbsorbingProblem {
  State lo = 0;
  State R = 0;
  int max_jump = 1;
  std::function<void(State, double*)> row;
  std::function<bool(State)> absorbing;
  std::function<double(State)> fixed;
  std::function<double(State)> source;  // may be empty
  double boundary_exponent = -1.0;      // >= 0: power-law continuation beyond R
};

std::vector<double> solve_absorbing(const AbsorbingProblem& prob, double* max_residual = nullptr);

}  // namespace lamperti
