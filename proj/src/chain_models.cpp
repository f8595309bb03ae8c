#include "lamperti/chain_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "lamperti/io.hpp"

namespace lamperti {

CriticalExponents critical_exponents(const LampertiSpec& spec) {
  if (!(spec.s2 > 0.0)) throw std::invalid_argument("s2 must be positive");
  const double c = spec.c, s2 = spec.s2;
  const double gamma_c = (2.0 * c - s2) / s2;
  return {gamma_c, gamma_c / 2.0, (2.0 * c + s2) / s2, (2.0 * c + s2) / (2.0 * s2)};
}

JumpKernel::JumpKernel(int max_jump, RowFn row_fn, std::string support_floor)
    : max_jump_(max_jump), row_fn_(std::move(row_fn)), support_floor_(std::move(support_floor)) {
  if (max_jump_ < 1) throw std::invalid_argument("max_jump must be >= 1");
  if (!row_fn_) throw std::invalid_argument("empty row function");
}

std::vector<double> JumpKernel::row(State x) const {
  if (x < 0) throw std::invalid_argument("negative state");
  std::vector<double> out(width(), 0.0);
  row_fn_(x, out.data());
  return out;
}

double JumpKernel::prob(State x, int z) const {
  if (z < -max_jump_ || z > max_jump_) return 0.0;
  return row(x)[z + max_jump_];
}

void JumpKernel::validate(State x_max) const {
  std::vector<double> r(width());
  for (State x = 0; x <= x_max; ++x) {
    std::fill(r.begin(), r.end(), 0.0);
    row_fn_(x, r.data());
    long double sum = 0.0L;
    for (int k = 0; k < width(); ++k) {
      const int z = k - max_jump_;
      if (!(r[k] >= 0.0) || !std::isfinite(r[k]))
        throw std::domain_error("negative or non-finite entry in row " + std::to_string(x));
      if (r[k] > 0.0 && x + z < 0)
        throw std::domain_error("row " + std::to_string(x) + " carries mass below 0");
      sum += r[k];
    }
    if (std::fabs(static_cast<double>(sum) - 1.0) > 1e-12)
      throw std::domain_error("row " + std::to_string(x) + " does not sum to 1");
  }
}

std::vector<double> binomial_shape(int max_jump) {
  const int n = 2 * max_jump;
  std::vector<double> p(n + 1);
  double coef = 1.0;
  for (int k = 0; k <= n; ++k) {
    p[k] = coef * std::ldexp(1.0, -n);
    coef = coef * (n - k) / (k + 1);
  }
  return p;
}

namespace {

JumpKernel nearest_neighbour(double c, double s2) {
  if (s2 > 1.0) throw std::domain_error("probability overflow: nearest-neighbour needs s2 <= 1");
  const double cutoff = std::fabs(c) / s2;
  auto fn = [c, s2, cutoff](State x, double* out) {
    out[0] = out[1] = out[2] = 0.0;
    if (x == 0) {
      out[2] = 1.0;
      return;
    }
    const double xd = static_cast<double>(x);
    const double tilt = xd > cutoff ? c / (2.0 * xd) : 0.0;
    out[0] = s2 / 2.0 - tilt;
    out[1] = 1.0 - s2;
    out[2] = s2 / 2.0 + tilt;
  };
  return JumpKernel(1, fn,
                    "x=0 -> +1; 1<=x<=|c|/s2 symmetric {+-1: s2/2, 0: 1-s2}; "
                    "beyond: s2/2 +- c/(2x)");
}

JumpKernel multi_jump(double c, double s2, int B, std::vector<double> shape) {
  if (shape.empty()) shape = binomial_shape(B);
  if (static_cast<int>(shape.size()) != 2 * B + 1)
    throw std::invalid_argument("MultiJump shape must have 2B+1 entries");
  double var = 0.0, total = 0.0;
  for (int k = 0; k <= 2 * B; ++k) {
    if (shape[k] < 0.0) throw std::invalid_argument("negative shape entry");
    if (std::fabs(shape[k] - shape[2 * B - k]) > 1e-15)
      throw std::invalid_argument("MultiJump shape must be symmetric");
    total += shape[k];
    var += shape[k] * double(k - B) * double(k - B);
  }
  if (std::fabs(total - 1.0) > 1e-12) throw std::invalid_argument("shape must sum to 1");
  if (shape[0] <= 0.0) throw std::invalid_argument("shape needs mass at +-B");
  const double w = s2 / var;
  if (w > 1.0 + 1e-15) throw std::domain_error("s2 exceeds the shape variance");
  std::vector<double> q(2 * B + 1);
  for (int k = 0; k <= 2 * B; ++k) q[k] = w * shape[k];
  q[B] += 1.0 - std::min(w, 1.0);

  auto fn = [c, s2, B, q](State x, double* out) {
    const double xd = static_cast<double>(x);
    const double kappa = c / (xd * s2);
    if (x >= B && std::fabs(kappa) * B < 1.0) {
      for (int k = 0; k <= 2 * B; ++k) out[k] = q[k] * (1.0 + kappa * (k - B));
      return;
    }
    // untilted law with mass below -x folded onto state 0
    for (int k = 0; k <= 2 * B; ++k) out[k] = 0.0;
    for (int k = 0; k <= 2 * B; ++k) {
      const int z = std::max<int>(k - B, -static_cast<int>(std::min<State>(x, B)));
      out[z + B] += q[k];
    }
  };
  return JumpKernel(B, fn,
                    "x < B or |c|B/(x s2) >= 1: untilted shape, mass below 0 folded onto 0");
}

}  // namespace

JumpKernel build_lamperti_kernel(const LampertiSpec& spec) {
  if (!(spec.s2 > 0.0)) throw std::invalid_argument("s2 must be positive");
  if (spec.require_transient && !(2.0 * spec.c > spec.s2))
    throw std::invalid_argument("transient family requires 2c > s2");
  switch (spec.family) {
    case KernelFamily::NearestNeighbour:
      return nearest_neighbour(spec.c, spec.s2);
    case KernelFamily::MultiJump:
      return multi_jump(spec.c, spec.s2, spec.max_jump, spec.shape);
  }
  throw std::invalid_argument("unknown kernel family");
}

JumpKernel deterministic_kernel(int step) {
  if (step != 1 && step != -1) throw std::invalid_argument("step must be +1 or -1");
  auto fn = [step](State x, double* out) {
    out[0] = out[1] = out[2] = 0.0;
    if (step == -1 && x == 0)
      out[1] = 1.0;
    else
      out[step + 1] = 1.0;
  };
  return JumpKernel(1, fn, step == 1 ? "none" : "x=0 holds");
}

JumpKernel tabulated_kernel(int max_jump, std::vector<std::vector<double>> rows,
                            std::string support_floor) {
  if (rows.empty()) throw std::invalid_argument("no rows");
  const State last = static_cast<State>(rows.size()) - 1;
  if (last < max_jump) throw std::invalid_argument("need explicit rows up to at least B");
  for (auto& r : rows)
    if (static_cast<int>(r.size()) != 2 * max_jump + 1)
      throw std::invalid_argument("row width must be 2B+1");
  auto shared = std::make_shared<std::vector<std::vector<double>>>(std::move(rows));
  auto fn = [shared, last](State x, double* out) {
    const auto& r = (*shared)[std::min(x, last)];
    std::copy(r.begin(), r.end(), out);
  };
  JumpKernel k(max_jump, fn, std::move(support_floor));
  k.validate(last);
  return k;
}

JumpKernel load_kernel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open kernel file " + path);
  std::string line;
  while (std::getline(in, line) && (line.empty() || line[0] == '#')) {
  }
  if (line != "state,displacement,prob")
    throw std::invalid_argument("kernel CSV header must be state,displacement,prob");
  std::map<State, std::map<int, double>> entries;
  int B = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string a, b, p;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, p))
      throw std::invalid_argument("malformed kernel line: " + line);
    const State x = std::stoll(a);
    const int z = std::stoi(b);
    if (x < 0) throw std::invalid_argument("negative state in kernel file");
    entries[x][z] += parse_double(p);
    B = std::max(B, std::abs(z));
  }
  if (entries.empty() || B == 0) throw std::invalid_argument("kernel file has no jumps");
  const State last = entries.rbegin()->first;
  std::vector<std::vector<double>> rows(last + 1, std::vector<double>(2 * B + 1, 0.0));
  for (State x = 0; x <= last; ++x) {
    auto it = entries.find(x);
    if (it == entries.end()) throw std::invalid_argument("missing row " + std::to_string(x));
    for (auto [z, p] : it->second) rows[x][z + B] = p;
  }
  return tabulated_kernel(B, std::move(rows), "explicit rows; last row repeated beyond");
}

MomentProfile increment_moment(const JumpKernel& kernel, State x, int k) {
  if (x < 0 || k < 1) throw std::invalid_argument("increment_moment needs x >= 0, k >= 1");
  const auto r = kernel.row(x);
  const int B = kernel.max_jump();
  double v = 0.0;
  for (int i = 0; i < kernel.width(); ++i) v += std::pow(double(i - B), k) * r[i];
  return {x, k, v, MomentTag::Raw};
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::StrongTransient: return "StrongTransient";
    case Verdict::NotStrongTransient: return "NotStrongTransient";
    case Verdict::Boundary: return "Boundary";
    case Verdict::Recurrent: return "Recurrent";
    case Verdict::Transient: return "Transient";
  }
  return "?";
}

Classification classify_recurrence(const LampertiSpec& spec) {
  if (!(spec.s2 > 0.0)) throw std::invalid_argument("s2 must be positive");
  const double lhs = 2.0 * spec.c;
  if (lhs <= spec.s2)
    return {Verdict::Recurrent, 0.0,
            "2c = " + format_number(lhs) + " <= s2 = " + format_number(spec.s2)};
  return {Verdict::Transient, 0.0,
          "2c = " + format_number(lhs) + " > s2 = " + format_number(spec.s2)};
}

Classification classify_theoretical(const LampertiSpec& spec, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  auto rec = classify_recurrence(spec);
  if (rec.verdict == Verdict::Recurrent) return {Verdict::Recurrent, beta, rec.rationale};
  const double lhs = 2.0 * spec.c;
  const double rhs = (2.0 * beta + 1.0) * spec.s2;
  const std::string l = format_number(lhs), r = format_number(rhs);
  if (std::fabs(lhs - rhs) <= kBoundaryTolerance)
    return {Verdict::Boundary, beta, "2c = " + l + " = (2beta+1)s2 = " + r};
  if (lhs > rhs) return {Verdict::StrongTransient, beta, l + " > " + r};
  return {Verdict::NotStrongTransient, beta, l + " < " + r};
}

IrreducibilityCert verify_uniform_irreducibility(const JumpKernel& kernel, int m,
                                                 double epsilon, State x_max) {
  if (m < 1) throw std::invalid_argument("horizon m must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0,1)");
  const int B = kernel.max_jump();
  if (x_max < B) throw std::invalid_argument("window too small: x_max < B");

  IrreducibilityCert cert{m, epsilon, 0, x_max, {}, true};
  const State span = static_cast<State>(m) * B;
  std::vector<double> r(kernel.width());
  for (State i = 0; i <= x_max; ++i) {
    const State lo = std::max<State>(0, i - span);
    const State n = i + span - lo + 1;
    std::vector<double> dist(n, 0.0), next(n), best(n, 0.0);
    dist[i - lo] = 1.0;
    for (int step = 1; step <= m; ++step) {
      std::fill(next.begin(), next.end(), 0.0);
      for (State s = 0; s < n; ++s) {
        if (dist[s] == 0.0) continue;
        kernel.row_into(lo + s, r.data());
        for (int k = 0; k < kernel.width(); ++k) {
          const State t = s + k - B;
          if (r[k] > 0.0 && t >= 0 && t < n) next[t] += dist[s] * r[k];
        }
      }
      dist.swap(next);
      for (State s = 0; s < n; ++s) best[s] = std::max(best[s], dist[s]);
    }
    for (State j = std::max<State>(0, i - B); j <= i + B; ++j) {
      const double p = best[j - lo];
      const bool ok = p >= epsilon;
      cert.pairs.push_back({i, j, p, ok});
      cert.pass = cert.pass && ok;
    }
  }
  return cert;
}

}  // namespace lamperti
