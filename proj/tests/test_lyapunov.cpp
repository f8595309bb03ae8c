#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <numbers>

#include "lamperti/chain_models.hpp"
#include "lamperti/exact_solver.hpp"
#include "lamperti/lyapunov.hpp"

using namespace lamperti;
using mp = boost::multiprecision::cpp_bin_float_50;

namespace {

LampertiSpec nn(double c) {
  LampertiSpec s;
  s.c = c;
  return s;
}

LampertiSpec mj2(double c) {
  LampertiSpec s;
  s.c = c;
  s.max_jump = 2;
  s.family = KernelFamily::MultiJump;
  return s;
}

mp f_mp(double gamma, double nu, long x) {
  const mp xm(x);
  if (xm < boost::multiprecision::exp(mp(1))) return boost::multiprecision::exp(mp(-gamma));
  return boost::multiprecision::pow(xm, mp(-gamma)) * boost::multiprecision::pow(boost::multiprecision::log(xm), mp(nu));
}

double drift_mp(const JumpKernel& k, double gamma, double nu, long x) {
  const auto r = k.row(x);
  const int B = k.max_jump();
  // increments weighted by the stored row, so rounding in the row sum does not enter
  const mp fx = f_mp(gamma, nu, x);
  mp s = 0;
  for (int i = 0; i < k.width(); ++i)
    if (r[i] != 0.0) s += mp(r[i]) * (f_mp(gamma, nu, x + i - B) - fx);
  return s.convert_to<double>();
}

}  // namespace

TEST(LyapunovValue, Branches) {
  EXPECT_DOUBLE_EQ(lyapunov_value({3, 1}, 1.0), std::exp(-3.0));
  EXPECT_NEAR(lyapunov_value({3, 7}, std::numbers::e), std::exp(-3.0), 1e-15);
  EXPECT_DOUBLE_EQ(lyapunov_value({3, 7}, 0.0), std::exp(-3.0));
  for (double x : {3.0, 10.0, 1e6}) EXPECT_DOUBLE_EQ(lyapunov_value({0, 0}, x), 1.0);
  EXPECT_THROW(lyapunov_value({1, 1}, -1.0), std::invalid_argument);
}

TEST(Drift, MatchesHighPrecisionSum) {
  for (const auto& spec : {nn(2.0), mj2(2.0)}) {
    const auto k = build_lamperti_kernel(spec);
    for (double nu : {-0.5, 0.5, 0.0})
      for (long x : {2L, 3L, 10L, 137L, 10000L, 1000000L}) {
        const double want = drift_mp(k, 3.0, nu, x);
        const double scale = lyapunov_value({3.0, nu}, double(x));
        EXPECT_NEAR(drift(k, {3.0, nu}, x), want, 1e-12 * std::fabs(want) + 1e-17 * scale)
            << "nu=" << nu << " x=" << x;
      }
  }
}

TEST(Drift, SignsAtLargeX) {
  const auto k = build_lamperti_kernel(nn(2.0));
  EXPECT_LE(drift(k, {3.0, 0.5}, 10000), 0.0);
  EXPECT_GE(drift(k, {3.0, -0.5}, 10000), 0.0);
}

TEST(Drift, LeadingTermAtTenThousand) {
  for (const auto& spec : {nn(2.0), mj2(2.0)}) {
    const auto k = build_lamperti_kernel(spec);
    for (double nu : {-0.5, 0.5}) {
      const LyapunovFn f{3.0, nu};
      const double lead = leading_drift_term(f, 3.0, 1.0, 1e4);
      EXPECT_NEAR(drift(k, f, 10000) / lead, 1.0, 0.2);
      EXPECT_NEAR(drift_expansion(k, f, 10000) / lead, 1.0, 1e-9);
    }
  }
}

TEST(DriftThreshold, NuPositiveFindsSupermartingale) {
  const auto k = build_lamperti_kernel(nn(2.0));
  const auto rep = find_drift_threshold(k, {3.0, 0.5}, 100000);
  ASSERT_TRUE(rep.threshold.has_value());
  EXPECT_EQ(rep.tail_sign, DriftSign::Negative);
  EXPECT_TRUE(rep.sign_determined);
  for (const auto& p : rep.points)
    if (p.x >= *rep.threshold) EXPECT_LE(p.drift, 0.0) << p.x;
}

TEST(DriftThreshold, NuNegativeFindsSubmartingale) {
  const auto k = build_lamperti_kernel(mj2(2.0));
  const auto rep = find_drift_threshold(k, {3.0, -0.5}, 100000);
  ASSERT_TRUE(rep.threshold.has_value());
  EXPECT_EQ(rep.tail_sign, DriftSign::Positive);
}

TEST(DriftThreshold, NuZeroIsFlagged) {
  const auto k = build_lamperti_kernel(nn(2.0));
  const auto rep = find_drift_threshold(k, {3.0, 0.0}, 100000);
  EXPECT_FALSE(rep.sign_determined);
  EXPECT_NE(rep.note.find("sign not asymptotically determined"), std::string::npos);
}

TEST(DriftThreshold, GammaAboveCriticalIsPositive) {
  const auto k = build_lamperti_kernel(nn(2.0));
  const auto rep = find_drift_threshold(k, {6.0, 0.0}, 100000);
  ASSERT_TRUE(rep.threshold.has_value());
  EXPECT_EQ(rep.tail_sign, DriftSign::Positive);
}

TEST(DriftGrid, GeometricAndDistinct) {
  const auto g = drift_grid(1000);
  EXPECT_EQ(g.front(), 3);
  EXPECT_LE(g.back(), 1000);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GT(g[i], g[i - 1]);
  EXPECT_THROW(drift_grid(2), std::invalid_argument);
}

TEST(Envelope, CTwoHoldsBeyondThreshold) {
  const auto spec = nn(2.0);
  const auto h = solve_return_prob_bracketed(build_lamperti_kernel(spec), 200000);
  const auto rep = envelope_check(h, spec, 0.5, 100, 10000);
  ASSERT_TRUE(rep.threshold.has_value());
  EXPECT_LE(*rep.threshold, 500);
  const auto loose = envelope_check(h, spec, 50.0, 100, 10000);
  ASSERT_TRUE(loose.threshold.has_value());
  EXPECT_EQ(*loose.threshold, 100);
}

TEST(Envelope, WrongExponentFails) {
  const auto spec = nn(2.0);
  const auto h = solve_return_prob_bracketed(build_lamperti_kernel(spec), 200000);
  const auto rep = envelope_check(h, spec, 0.5, 100, 10000, 4.0);
  EXPECT_FALSE(rep.threshold.has_value());
  EXPECT_FALSE(rep.rows.back().upper_ok);
  EXPECT_THROW(envelope_check(h, spec, 0.5, 100, 199999), std::domain_error);
}
