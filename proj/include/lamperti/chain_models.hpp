#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lamperti {

using State = std::int64_t;

enum class KernelFamily { NearestNeighbour, MultiJump };

struct LampertiSpec {
  double c = 0.0;
  double s2 = 1.0;
  int max_jump = 1;
  KernelFamily family = KernelFamily::NearestNeighbour;
  // MultiJump base law on {-B..B} (index z + B); empty selects centred Binomial(2B, 1/2).
  std::vector<double> shape;
  bool require_transient = false;
};

struct CriticalExponents {
  double gamma_c;
  double beta_crit;
  double delta_bessel;
  double q_llt;
};

CriticalExponents critical_exponents(const LampertiSpec& spec);

// Bounded-jump transition law on the non-negative integers. A row is a
// probability vector of length 2B+1 indexed by displacement z + B.
class JumpKernel {
 public:
  using RowFn = std::function<void(State x, double* out)>;

  JumpKernel(int max_jump, RowFn row_fn, std::string support_floor);

  int max_jump() const { return max_jump_; }
  int width() const { return 2 * max_jump_ + 1; }
  const std::string& support_floor() const { return support_floor_; }

  std::vector<double> row(State x) const;
  void row_into(State x, double* out) const { row_fn_(x, out); }
  double prob(State x, int z) const;

  // Throws std::domain_error on the first row in [0, x_max] violating the invariants.
  void validate(State x_max) const;

 private:
  int max_jump_;
  RowFn row_fn_;
  std::string support_floor_;
};

JumpKernel build_lamperti_kernel(const LampertiSpec& spec);

// Default MultiJump shape: centred Binomial(2B, 1/2).
std::vector<double> binomial_shape(int max_jump);

// Always steps by `step` (+1 or -1); -1 holds at 0.
JumpKernel deterministic_kernel(int step);

// Rows listed explicitly for 0..x_last; states beyond x_last reuse the row of x_last.
JumpKernel tabulated_kernel(int max_jump, std::vector<std::vector<double>> rows,
                            std::string support_floor);

// CSV with header `state,displacement,prob`.
JumpKernel load_kernel_csv(const std::string& path);

enum class MomentTag { Raw, Conditioned };

struct MomentProfile {
  State x;
  int k;
  double value;
  MomentTag tag;
};

MomentProfile increment_moment(const JumpKernel& kernel, State x, int k);

enum class Verdict { StrongTransient, NotStrongTransient, Boundary, Recurrent, Transient };

struct Classification {
  Verdict verdict;
  double beta;
  std::string rationale;
};

constexpr double kBoundaryTolerance = 1e-9;

Classification classify_theoretical(const LampertiSpec& spec, double beta);
Classification classify_recurrence(const LampertiSpec& spec);
std::string to_string(Verdict v);

struct PairCheck {
  State i;
  State j;
  double max_prob;
  bool pass;
};

struct IrreducibilityCert {
  int m;
  double epsilon;
  State window_lo;
  State window_hi;
  std::vector<PairCheck> pairs;
  bool pass;
};

IrreducibilityCert verify_uniform_irreducibility(const JumpKernel& kernel, int m,
                                                 double epsilon, State x_max);

}  // namespace lamperti
