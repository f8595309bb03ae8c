#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lamperti/chain_models.hpp"
#include "lamperti/exact_solver.hpp"

namespace lamperti {

struct LyapunovFn {
  double gamma = 0.0;
  double nu = 0.0;
};

// x^-gamma log^nu x for x >= e, e^-gamma below.
double lyapunov_value(const LyapunovFn& f, double x);

// E[f(X_1)] - f(x) from state x, as an exact finite sum.
double drift(const JumpKernel& kernel, const LyapunovFn& f, State x);

// -nu gamma_c s2 f(x) / (2 x^2 log x)
double leading_drift_term(const LyapunovFn& f, double gamma_c, double s2, double x);

// Two-term expansion with the kernel's own increment moments at x.
double drift_expansion(const JumpKernel& kernel, const LyapunovFn& f, State x);

enum class DriftSign { Negative, Positive, Zero, Mixed };
std::string to_string(DriftSign s);

struct DriftPoint {
  State x;
  double drift;
  double f_value;
  double leading_term;
};

struct DriftReport {
  LyapunovFn f;
  std::vector<DriftPoint> points;
  std::optional<State> threshold;  // least grid x beyond which the sign is uniform
  DriftSign tail_sign = DriftSign::Mixed;
  bool sign_determined = true;  // false when nu == 0
  std::string note;
};

constexpr double kDriftZero = 1e-18;

// Geometric grid ceil(e 1.05^k) up to x_max (deduplicated).
std::vector<State> drift_grid(State x_max);

// Zero tolerance is applied to drift / f(x): f spans many decades across the grid.
DriftReport find_drift_threshold(const JumpKernel& kernel, const LyapunovFn& f, State x_max);

EnvelopeReport envelope_check(const HittingSolution& h, const LampertiSpec& spec, double epsilon,
                              State x_lo, State x_hi, std::optional<double> gamma = std::nullopt);

}  // namespace lamperti
