#include "lamperti/lyapunov.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lamperti {

double lyapunov_value(const LyapunovFn& f, double x) {
  if (x < 0.0) throw std::invalid_argument("lyapunov_value needs x >= 0");
  if (x < std::numbers::e) return std::exp(-f.gamma);
  return std::pow(x, -f.gamma) * std::pow(std::log(x), f.nu);
}

namespace {

// f(x+z)/f(x) - 1 without cancellation when both points lie on the power branch.
long double relative_increment(const LyapunovFn& f, State x, int z) {
  const long double e = std::numbers::e_v<long double>;
  const long double xl = x, yl = x + z;
  if (z == 0) return 0.0L;
  if (xl >= e && yl >= e) {
    const long double u = std::log1p(static_cast<long double>(z) / xl);
    const long double lx = std::log(xl);
    return std::expm1(-f.gamma * u + f.nu * std::log1p(u / lx));
  }
  return static_cast<long double>(lyapunov_value(f, static_cast<double>(yl))) /
             lyapunov_value(f, static_cast<double>(xl)) -
         1.0L;
}

long double normalised_drift(const JumpKernel& kernel, const LyapunovFn& f, State x) {
  const auto r = kernel.row(x);
  const int B = kernel.max_jump();
  long double s = 0.0L;
  for (int k = 0; k < kernel.width(); ++k)
    if (r[k] != 0.0) s += r[k] * relative_increment(f, x, k - B);
  return s;
}

}  // namespace

double drift(const JumpKernel& kernel, const LyapunovFn& f, State x) {
  if (x < 0) throw std::invalid_argument("drift needs x >= 0");
  return static_cast<double>(normalised_drift(kernel, f, x) * lyapunov_value(f, double(x)));
}

double leading_drift_term(const LyapunovFn& f, double gamma_c, double s2, double x) {
  return -f.nu * gamma_c * s2 * lyapunov_value(f, x) / (2.0 * x * x * std::log(x));
}

double drift_expansion(const JumpKernel& kernel, const LyapunovFn& f, State x) {
  const double xd = static_cast<double>(x);
  const double m1 = increment_moment(kernel, x, 1).value;
  const double m2 = increment_moment(kernel, x, 2).value;
  const double g = f.gamma, fx = lyapunov_value(f, xd);
  const double a = 2.0 * xd * m1;
  return (-g / (2.0 * xd * xd) * (a - (g + 1.0) * m2) +
          f.nu / (2.0 * xd * xd * std::log(xd)) * (a - (2.0 * g + 1.0) * m2)) *
         fx;
}

std::string to_string(DriftSign s) {
  switch (s) {
    case DriftSign::Negative: return "negative";
    case DriftSign::Positive: return "positive";
    case DriftSign::Zero: return "zero";
    case DriftSign::Mixed: return "mixed";
  }
  return "?";
}

std::vector<State> drift_grid(State x_max) {
  if (static_cast<double>(x_max) < std::numbers::e) throw std::invalid_argument("x_max must be >= e");
  std::vector<State> g;
  for (int k = 0;; ++k) {
    const State x = static_cast<State>(std::ceil(std::numbers::e * std::pow(1.05, k)));
    if (x > x_max) break;
    if (g.empty() || x != g.back()) g.push_back(x);
  }
  return g;
}

DriftReport find_drift_threshold(const JumpKernel& kernel, const LyapunovFn& f, State x_max) {
  DriftReport rep;
  rep.f = f;
  std::vector<int> sign;
  for (State x : drift_grid(x_max)) {
    const long double nd = normalised_drift(kernel, f, x);
    const double fx = lyapunov_value(f, double(x));
    rep.points.push_back({x, static_cast<double>(nd * fx), fx, drift_expansion(kernel, f, x)});
    sign.push_back(std::fabs(static_cast<double>(nd)) < kDriftZero ? 0 : (nd < 0 ? -1 : 1));
  }
  if (f.nu == 0.0) {
    rep.sign_determined = false;
    rep.note = "sign not asymptotically determined";
  }
  std::size_t i = sign.size();
  int tail = 0;
  while (i > 0 && (sign[i - 1] == 0 || tail == 0 || sign[i - 1] == tail)) {
    if (sign[i - 1] != 0) tail = sign[i - 1];
    --i;
  }
  rep.tail_sign = tail == 0 ? DriftSign::Zero : (tail < 0 ? DriftSign::Negative : DriftSign::Positive);
  if (sign.size() - i >= 3) {
    rep.threshold = rep.points[i].x;
  } else {
    rep.tail_sign = DriftSign::Mixed;
    if (!rep.note.empty()) rep.note += "; ";
    rep.note += "no threshold in range";
  }
  return rep;
}

EnvelopeReport envelope_check(const HittingSolution& h, const LampertiSpec& spec, double epsilon,
                              State x_lo, State x_hi, std::optional<double> gamma) {
  if (h.bracket && x_hi >= h.reliable_end)
    throw std::domain_error("envelope range extends past the reliable window");
  return envelope_flags(h, gamma.value_or(critical_exponents(spec).gamma_c), epsilon, x_lo, x_hi);
}

}  // namespace lamperti
