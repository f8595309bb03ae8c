#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "lamperti/chain_models.hpp"

using namespace lamperti;
using mp = boost::multiprecision::cpp_bin_float_50;

namespace {

LampertiSpec nn(double c, double s2 = 1.0) {
  LampertiSpec s;
  s.c = c;
  s.s2 = s2;
  return s;
}

LampertiSpec mj(double c, int B, double s2 = 1.0) {
  LampertiSpec s;
  s.c = c;
  s.s2 = s2;
  s.max_jump = B;
  s.family = KernelFamily::MultiJump;
  return s;
}

}  // namespace

TEST(CriticalExponents, SubstitutionValues) {
  auto e = critical_exponents(nn(2.0));
  EXPECT_DOUBLE_EQ(e.gamma_c, 3.0);
  EXPECT_DOUBLE_EQ(e.beta_crit, 1.5);
  EXPECT_DOUBLE_EQ(e.delta_bessel, 5.0);
  EXPECT_DOUBLE_EQ(e.q_llt, 2.5);

  e = critical_exponents(nn(1.0));
  EXPECT_DOUBLE_EQ(e.gamma_c, 1.0);
  EXPECT_DOUBLE_EQ(e.beta_crit, 0.5);

  e = critical_exponents(nn(0.75));
  EXPECT_DOUBLE_EQ(e.gamma_c, 0.5);
  EXPECT_DOUBLE_EQ(e.q_llt, 1.25);
}

TEST(CriticalExponents, AlgebraicIdentities) {
  for (double c : {0.3, 0.75, 1.2, 2.0, 3.7})
    for (double s2 : {0.25, 0.5, 1.0}) {
      const auto e = critical_exponents(nn(c, s2));
      EXPECT_NEAR(e.delta_bessel, e.gamma_c + 2.0, 1e-12);
      EXPECT_NEAR(e.q_llt, e.beta_crit + 1.0, 1e-12);
    }
}

TEST(CriticalExponents, RejectsNonPositiveVariance) {
  EXPECT_THROW(critical_exponents(nn(1.0, 0.0)), std::invalid_argument);
}

TEST(NearestNeighbour, RowAtTen) {
  const auto k = build_lamperti_kernel(nn(2.0));
  EXPECT_NEAR(k.prob(10, -1), 0.4, 1e-15);
  EXPECT_NEAR(k.prob(10, +1), 0.6, 1e-15);
  EXPECT_EQ(k.prob(10, 0), 0.0);
  EXPECT_NEAR(increment_moment(k, 10, 1).value, 0.2, 1e-15);
  EXPECT_NEAR(increment_moment(k, 10, 2).value, 1.0, 1e-15);
}

TEST(NearestNeighbour, SymmetricCase) {
  const auto k = build_lamperti_kernel(nn(0.0));
  for (State x : {1, 7, 1000}) {
    EXPECT_EQ(k.prob(x, -1), 0.5);
    EXPECT_EQ(k.prob(x, 1), 0.5);
    EXPECT_EQ(increment_moment(k, x, 1).value, 0.0);
  }
  EXPECT_EQ(k.prob(0, 1), 1.0);
}

TEST(NearestNeighbour, SecondMomentIsOneEverywhere) {
  for (double c : {0.5, 1.2, 2.0, 3.0}) {
    const auto k = build_lamperti_kernel(nn(c));
    for (State x : {1, 2, 5, 50, 12345}) EXPECT_NEAR(increment_moment(k, x, 2).value, 1.0, 1e-15);
  }
}

TEST(NearestNeighbour, DriftIsExactBeyondSmallStates) {
  const auto k = build_lamperti_kernel(nn(1.5, 0.8));
  for (State x : {2, 3, 10, 1000}) {
    EXPECT_NEAR(increment_moment(k, x, 1).value, 1.5 / double(x), 1e-15);
    EXPECT_NEAR(increment_moment(k, x, 2).value, 0.8, 1e-15);
  }
}

TEST(NearestNeighbour, VarianceAboveOneOverflows) {
  EXPECT_THROW(build_lamperti_kernel(nn(1.0, 1.5)), std::domain_error);
}

TEST(NearestNeighbour, TransientFamilyDemand) {
  auto s = nn(0.4);
  s.require_transient = true;
  EXPECT_THROW(build_lamperti_kernel(s), std::invalid_argument);
  s.c = 0.6;
  EXPECT_NO_THROW(build_lamperti_kernel(s));
}

TEST(JumpKernel, RowInvariantsHold) {
  for (const auto& spec : {nn(2.0), nn(0.0), nn(1.2, 0.5), mj(2.0, 2), mj(1.0, 3, 0.5), mj(-1.0, 2)}) {
    const auto k = build_lamperti_kernel(spec);
    EXPECT_NO_THROW(k.validate(3000));
    for (State x = 0; x < 200; ++x) {
      const auto r = k.row(x);
      double s = 0.0;
      for (int i = 0; i < k.width(); ++i) {
        EXPECT_GE(r[i], 0.0);
        if (x + i - k.max_jump() < 0) EXPECT_EQ(r[i], 0.0);
        s += r[i];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(JumpKernel, ValidateCatchesDefects) {
  EXPECT_THROW(tabulated_kernel(1, {{0, 0, 1}, {0.5, 0, 0.6}}, "0"), std::domain_error);
  EXPECT_THROW(tabulated_kernel(1, {{0.5, 0, 0.5}, {0.5, 0, 0.5}}, "0"), std::domain_error);
  const JumpKernel leaky(1, [](State, double* out) { out[0] = 0.5; out[1] = 0.0; out[2] = 0.4; }, "0");
  EXPECT_THROW(leaky.validate(3), std::domain_error);
}

TEST(MultiJump, DriftMatchesHighPrecisionDotProduct) {
  const auto k = build_lamperti_kernel(mj(2.0, 2));
  const auto r = k.row(100);
  mp m1 = 0, m2 = 0, total = 0;
  for (int i = 0; i < k.width(); ++i) {
    const int z = i - 2;
    total += mp(r[i]);
    m1 += mp(z) * mp(r[i]);
    m2 += mp(z) * mp(z) * mp(r[i]);
  }
  EXPECT_NEAR(increment_moment(k, 100, 1).value, m1.convert_to<double>(), 1e-16);
  EXPECT_NEAR(m1.convert_to<double>(), 0.02, 1e-15);
  EXPECT_NEAR(m2.convert_to<double>(), 1.0, 1e-15);
  EXPECT_NEAR(total.convert_to<double>(), 1.0, 1e-15);
}

TEST(MultiJump, IndependentRecipeReconstruction) {
  // Binomial(4,1/2) centred has variance 1, so s2 = 1 uses it unmixed; tilt (1 + c z / x).
  const auto k = build_lamperti_kernel(mj(2.0, 2));
  const double q[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  for (State x : {10, 57, 400}) {
    const double kappa = 2.0 / double(x);
    for (int z = -2; z <= 2; ++z) EXPECT_NEAR(k.prob(x, z), q[z + 2] * (1.0 + kappa * z), 1e-15);
  }
}

TEST(MultiJump, SmallVarianceMixesInHolding) {
  const auto k = build_lamperti_kernel(mj(1.0, 2, 0.5));
  EXPECT_NEAR(increment_moment(k, 300, 2).value, 0.5, 1e-14);
  EXPECT_NEAR(increment_moment(k, 300, 1).value, 1.0 / 300.0, 1e-15);
  EXPECT_GT(k.prob(300, 0), 6 / 16.0);
}

TEST(MultiJump, RejectsBadShape) {
  auto s = mj(2.0, 2);
  s.shape = {0.1, 0.2, 0.4, 0.2, 0.2};
  EXPECT_THROW(build_lamperti_kernel(s), std::invalid_argument);
  s.shape = {0.1, 0.2, 0.4, 0.2};
  EXPECT_THROW(build_lamperti_kernel(s), std::invalid_argument);
  s.shape = {0.0, 0.0, 1.0, 0.0, 0.0};
  EXPECT_THROW(build_lamperti_kernel(s), std::invalid_argument);
}

TEST(IncrementMoment, SymmetricKernelHasZeroMean) {
  const auto k = tabulated_kernel(2, {{0, 0, 0.5, 0.3, 0.2}, {0, 0.25, 0.25, 0.25, 0.25}, {0.2, 0.3, 0, 0.3, 0.2}}, "0");
  EXPECT_NEAR(increment_moment(k, 2, 1).value, 0.0, 1e-15);
  EXPECT_NEAR(increment_moment(k, 50, 1).value, 0.0, 1e-15);
  EXPECT_NEAR(increment_moment(k, 50, 2).value, 0.2 * 8 + 0.3 * 2, 1e-15);
  EXPECT_EQ(increment_moment(k, 50, 1).tag, MomentTag::Raw);
}

TEST(Classify, Examples) {
  auto c = classify_theoretical(nn(2.0), 1.0);
  EXPECT_EQ(c.verdict, Verdict::StrongTransient);
  c = classify_theoretical(nn(1.2), 1.0);
  EXPECT_EQ(c.verdict, Verdict::NotStrongTransient);
  EXPECT_EQ(c.rationale, "2.4 < 3");
  c = classify_theoretical(nn(1.5), 1.0);
  EXPECT_EQ(c.verdict, Verdict::Boundary);
  EXPECT_EQ(classify_theoretical(nn(0.4), 1.0).verdict, Verdict::Recurrent);
  EXPECT_THROW(classify_theoretical(nn(2.0), 0.0), std::invalid_argument);
  EXPECT_EQ(to_string(Verdict::NotStrongTransient), "NotStrongTransient");
}

TEST(Classify, BoundaryToleranceBand) {
  EXPECT_EQ(classify_theoretical(nn(1.5 + 4e-10), 1.0).verdict, Verdict::Boundary);
  EXPECT_EQ(classify_theoretical(nn(1.5 + 1e-6), 1.0).verdict, Verdict::StrongTransient);
}

TEST(Classify, Recurrence) {
  EXPECT_EQ(classify_recurrence(nn(0.5)).verdict, Verdict::Recurrent);
  EXPECT_EQ(classify_recurrence(nn(0.2)).verdict, Verdict::Recurrent);
  EXPECT_EQ(classify_recurrence(nn(0.6)).verdict, Verdict::Transient);
}

namespace {

// Dense two-step oracle for the nearest-neighbour chain written out by hand.
double nn_p(double c, State i, State j) {
  if (i == 0) return j == 1 ? 1.0 : 0.0;
  const double up = double(i) <= c ? 0.5 : 0.5 + c / (2.0 * double(i));
  if (j == i + 1) return up;
  if (j == i - 1) return 1.0 - up;
  return 0.0;
}

}  // namespace

TEST(Irreducibility, NearestNeighbourTwoSteps) {
  const auto k = build_lamperti_kernel(nn(2.0));
  const auto cert = verify_uniform_irreducibility(k, 2, 0.1, 50);
  EXPECT_TRUE(cert.pass);
  EXPECT_EQ(cert.window_hi, 50);
  for (const auto& pc : cert.pairs) {
    double two = 0.0;
    for (State m = std::max<State>(0, pc.i - 1); m <= pc.i + 1; ++m) two += nn_p(2.0, pc.i, m) * nn_p(2.0, m, pc.j);
    EXPECT_NEAR(pc.max_prob, std::max(nn_p(2.0, pc.i, pc.j), two), 1e-15) << pc.i << "->" << pc.j;
  }
}

TEST(Irreducibility, ImpossibleTransitionFails) {
  // moves down or holds only: i -> i+1 never happens
  const auto k = tabulated_kernel(1, {{0, 1, 0}, {0.5, 0.5, 0}}, "0");
  const auto cert = verify_uniform_irreducibility(k, 1, 0.1, 10);
  EXPECT_FALSE(cert.pass);
  for (const auto& pc : cert.pairs)
    if (pc.j == pc.i + 1) EXPECT_FALSE(pc.pass);
}

TEST(Irreducibility, Preconditions) {
  const auto k = build_lamperti_kernel(mj(2.0, 2));
  EXPECT_THROW(verify_uniform_irreducibility(k, 0, 0.1, 10), std::invalid_argument);
  EXPECT_THROW(verify_uniform_irreducibility(k, 2, 0.1, 1), std::invalid_argument);
}

TEST(KernelFile, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "lamperti_kernel_test.csv";
  {
    std::ofstream out(path);
    out << "# test kernel\nstate,displacement,prob\n0,1,1\n1,-1,0.5\n1,1,0.5\n2,-1,0.25\n2,1,0.75\n";
  }
  const auto k = load_kernel_csv(path.string());
  EXPECT_EQ(k.max_jump(), 1);
  EXPECT_EQ(k.prob(0, 1), 1.0);
  EXPECT_EQ(k.prob(2, 1), 0.75);
  EXPECT_EQ(k.prob(99, -1), 0.25);
  std::filesystem::remove(path);
  EXPECT_THROW(load_kernel_csv(path.string()), std::invalid_argument);
}

TEST(DeterministicKernel, Steps) {
  const auto down = deterministic_kernel(-1);
  EXPECT_EQ(down.prob(5, -1), 1.0);
  EXPECT_EQ(down.prob(0, 0), 1.0);
  const auto up = deterministic_kernel(1);
  EXPECT_EQ(up.prob(0, 1), 1.0);
  EXPECT_THROW(deterministic_kernel(2), std::invalid_argument);
}
