#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_complex.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "lamperti/extensions.hpp"

using namespace lamperti;
using cplx = boost::multiprecision::cpp_complex_50;
using real50 = boost::multiprecision::cpp_bin_float_50;

namespace {

double integrand_oracle(const RWalkModel& m, double beta, double t, const std::vector<double>& u) {
  cplx phi(0);
  for (std::size_t k = 0; k < m.steps.size(); ++k) {
    real50 a = 0;
    for (int j = 0; j < m.d; ++j) a += real50(u[j]) * m.steps[k][j];
    phi += cplx(real50(m.probs[k]) * cos(a), real50(m.probs[k]) * sin(a));
  }
  const cplx w = cplx(1) - cplx(real50(t)) * phi;
  return pow(w, cplx(real50(-(1.0 + beta)))).real().convert_to<double>();
}

}  // namespace

TEST(RWalk, SimpleWalkLaw) {
  const auto m = simple_random_walk(3);
  EXPECT_EQ(m.steps.size(), 6u);
  EXPECT_EQ(m.period, 2);
  EXPECT_TRUE(m.simple);
  for (double p : m.probs) EXPECT_DOUBLE_EQ(p, 1.0 / 6.0);
}

TEST(RWalk, RejectsDegenerateLaws) {
  EXPECT_THROW(make_rwalk(2, {{1, 0}, {-1, 0}}, {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(make_rwalk(1, {{1}, {-1}}, {0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(make_rwalk(2, {{1}, {-1}}, {0.5, 0.5}), std::invalid_argument);
  const auto lazy = make_rwalk(1, {{1}, {-1}, {0}}, {0.25, 0.25, 0.5});
  EXPECT_EQ(lazy.period, 1);
}

TEST(ChungFuchs, IntegrandMatchesHighPrecision) {
  const auto skew = make_rwalk(2, {{1, 0}, {0, 1}, {-1, -1}}, {0.3, 0.3, 0.4});
  const auto srw = simple_random_walk(4);
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> U(-std::numbers::pi, std::numbers::pi);
  for (const auto* m : {&skew, &srw})
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> u(m->d);
      for (auto& v : u) v = U(gen);
      const double t = i % 2 ? 0.999 : 0.5;
      const double beta = i % 3 ? 1.0 : 0.5;
      const double want = integrand_oracle(*m, beta, t, u);
      ASSERT_NEAR(chung_fuchs_integrand(*m, beta, t, u), want, 1e-10 * std::max(1.0, std::fabs(want)));
    }
}

TEST(ChungFuchs, ZeroTIsVolume) {
  for (int d : {1, 3, 5}) {
    const auto e = chung_fuchs_integral(simple_random_walk(d), 1.0, 0.0, 1);
    EXPECT_DOUBLE_EQ(e.value, std::pow(2 * std::numbers::pi, d));
  }
  EXPECT_THROW(chung_fuchs_integral(simple_random_walk(2), 1.0, 1.0, 1), std::invalid_argument);
}

TEST(ChungFuchs, OneDimensionalClosedForm) {
  // d=1, beta=0: integral of 1/(1 - t cos u) over [-pi, pi] is 2 pi / sqrt(1 - t^2)
  QmcOptions o;
  o.points = 1 << 14;
  o.replicates = 8;
  const double t = 0.9;
  const auto e = chung_fuchs_integral(simple_random_walk(1), 0.0, t, 3, o);
  const double exact = 2 * std::numbers::pi / std::sqrt(1 - t * t);
  EXPECT_NEAR(e.value, exact, std::max(5 * e.stderr_, 1e-6 * exact));
}

TEST(ChungFuchs, ReplicatesAreReproducible) {
  QmcOptions o;
  o.points = 1 << 12;
  o.replicates = 4;
  const auto m = simple_random_walk(3);
  auto a = chung_fuchs_integral(m, 1.0, 0.99, 11, o);
  o.workers = 3;
  auto b = chung_fuchs_integral(m, 1.0, 0.99, 11, o);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.stderr_, b.stderr_);
}

TEST(Growth, Verdicts) {
  auto g = increment_growth({1, 2, 3, 4});
  EXPECT_FALSE(g.saturates);
  EXPECT_TRUE(g.monotone);
  EXPECT_DOUBLE_EQ(g.ratio, 1.0);
  g = increment_growth({1, 2, 2.5, 2.6});
  EXPECT_TRUE(g.saturates);
  EXPECT_NEAR(g.ratio, 0.1, 1e-12);
  g = increment_growth({1, 1, 1});
  EXPECT_TRUE(g.saturates);
  EXPECT_FALSE(g.monotone);
  EXPECT_THROW(increment_growth({1, 2}), std::invalid_argument);
}

TEST(ReturnMass, TwoStepReturn) {
  for (int d : {1, 2, 3}) {
    const auto r = rwalk_return_mass(simple_random_walk(d), 4, 40000, 17 + d);
    const auto& p2 = r.rows[1];
    ASSERT_EQ(p2.n, 2u);
    const double p = 1.0 / (2 * d);
    EXPECT_NEAR(p2.phat, p, 4 * std::sqrt(p * (1 - p) / 40000));
    EXPECT_EQ(r.rows[0].phat, 0.0);
    EXPECT_EQ(r.rows[2].phat, 0.0);
  }
}

TEST(ReturnMass, WorkerCountDoesNotMatter) {
  const auto m = simple_random_walk(2);
  const auto a = rwalk_return_mass(m, 200, 3000, 5, 1.0, 1);
  const auto b = rwalk_return_mass(m, 200, 3000, 5, 1.0, 4);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].phat, b.rows[i].phat);
  EXPECT_EQ(a.partial_sums, b.partial_sums);
}

TEST(NormDrift, OneDimensionIsDriftless) {
  const auto rows = norm_drift_check(simple_random_walk(1), {10, 50}, 0, 1);
  for (const auto& r : rows) {
    EXPECT_EQ(r.points, 2u);
    EXPECT_NEAR(r.r_drift, 0.0, 1e-12);
    EXPECT_EQ(r.drift_target, 0.0);
    EXPECT_NEAR(r.sq_change, 1.0, 1e-12);
  }
}

TEST(NormDrift, ThreeDimensionsApproachesOneThird) {
  const auto rows = norm_drift_check(simple_random_walk(3), {30}, 0, 1);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].r_drift, 1.0 / 3.0, 0.03);
  EXPECT_NEAR(rows[0].sq_change, 1.0 / 3.0, 0.03);
  EXPECT_THROW(norm_drift_check(simple_random_walk(4), {10}, 0, 1), std::invalid_argument);
}

TEST(Branching, ModelMoments) {
  const auto g = make_branching(OffspringKind::ShiftedGeometric, two_point_migration(1.0));
  EXPECT_DOUBLE_EQ(g.theta, 1.0);
  EXPECT_DOUBLE_EQ(g.sigma2, 2.0);
  EXPECT_DOUBLE_EQ(g.migration_m2, 0.5 * 1 + 0.5 * 9);
  EXPECT_DOUBLE_EQ(offspring_mean(g), 1.0);
  const auto f = make_branching(OffspringKind::Finite, {{0, 1.0}}, {0.25, 0.5, 0.25});
  EXPECT_DOUBLE_EQ(f.sigma2, 0.5);
  EXPECT_THROW(two_point_migration(0.3), std::invalid_argument);
  EXPECT_THROW(make_branching(OffspringKind::Poisson, {{1, 0.7}}), std::invalid_argument);
}

TEST(Branching, AggregateMeanIsPopulation) {
  for (auto kind : {OffspringKind::ShiftedGeometric, OffspringKind::Poisson, OffspringKind::Deterministic}) {
    const auto m = make_branching(kind, {{0, 1.0}});
    for (std::uint64_t w : {1u, 17u, 10000u}) EXPECT_NEAR(aggregate_offspring_mean(m, w), double(w), 1e-9);
  }
  const auto f = make_branching(OffspringKind::Finite, {{0, 1.0}}, {0.25, 0.5, 0.25});
  EXPECT_NEAR(aggregate_offspring_mean(f, 40), 40.0, 1e-9);
}

TEST(Branching, OffspringSumSampleMean) {
  for (auto kind : {OffspringKind::ShiftedGeometric, OffspringKind::Poisson}) {
    const auto m = make_branching(kind, {{0, 1.0}});
    Rng rng(123);
    const int n = 20000;
    const std::uint64_t w = 50;
    double s = 0;
    for (int i = 0; i < n; ++i) s += double(sample_offspring_sum(m, w, rng));
    EXPECT_NEAR(s / n, 50.0, 4 * std::sqrt(m.sigma2 * w / n));
  }
}

TEST(Branching, FrozenPopulation) {
  const auto m = make_branching(OffspringKind::Deterministic, {{0, 1.0}});
  const auto p = simulate_branching(m, 7, 100, 1);
  EXPECT_TRUE(p.censored);
  EXPECT_FALSE(p.tau_e.has_value());
  for (auto w : p.w) EXPECT_EQ(w, 7u);
  const auto s = branching_sqrt_moments(m, 10000, 1000, 2);
  EXPECT_EQ(s.mu1, 0.0);
  EXPECT_EQ(s.mu2, 0.0);
}

TEST(Branching, DeterministicDrain) {
  for (int k : {1, 3}) {
    const auto m = make_branching(OffspringKind::Deterministic, {{-k, 1.0}});
    for (std::uint64_t w0 : {1u, 10u, 12u}) {
      const auto p = simulate_branching(m, w0, 100, 1);
      ASSERT_TRUE(p.tau_e.has_value());
      EXPECT_EQ(*p.tau_e, (w0 + k - 1) / k);
      for (std::size_t n = 0; n < p.w.size(); ++n)
        EXPECT_EQ(p.w[n], std::uint64_t(std::max<long>(long(w0) - long(k * n), 0)));
    }
  }
}

TEST(Branching, SqrtMomentBound) {
  const auto m = make_branching(OffspringKind::ShiftedGeometric, two_point_migration(1.0));
  const auto s = branching_sqrt_moments(m, 10000, 20000, 4);
  EXPECT_LE(s.max_bound_excess, 1e-12);
  EXPECT_NEAR(s.scaled_mu2, 2.0, 0.2);
  EXPECT_DOUBLE_EQ(s.target_mu1, 2.0);
}

TEST(Branching, LargeImmigrationRarelyDiesOut) {
  const auto strong = make_branching(OffspringKind::ShiftedGeometric, two_point_migration(3.0));
  const auto weak = make_branching(OffspringKind::ShiftedGeometric, two_point_migration(0.0));
  int dead_strong = 0, dead_weak = 0;
  for (int i = 0; i < 2000; ++i) {
    dead_strong += simulate_branching(strong, 1, 200, trajectory_seed(1, 0, i), false).tau_e.has_value();
    dead_weak += simulate_branching(weak, 1, 200, trajectory_seed(2, 0, i), false).tau_e.has_value();
  }
  EXPECT_LT(dead_strong, dead_weak);
  EXPECT_GT(dead_weak, 1800);
}
