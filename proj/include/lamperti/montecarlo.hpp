#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lamperti/chain_models.hpp"

namespace lamperti {

std::uint64_t splitmix64(std::uint64_t x);
// Seed of trajectory `index` in substream `stream`; reproducible in isolation.
std::uint64_t trajectory_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

class Rng {
 public:
  using result_type = std::uint64_t;
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return eng_(); }
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 eng_;
};

// Splits [0, n) into fixed blocks, evaluates fn(block, begin, end) on `workers`
// threads and returns the per-block results in block order.
template <typename Acc, typename Fn>
std::vector<Acc> run_blocks(std::uint64_t n, std::uint64_t block, unsigned workers, Fn fn) {
  if (block == 0) block = 1;
  const std::uint64_t nblocks = (n + block - 1) / block;
  std::vector<Acc> out(nblocks);
  std::atomic<std::uint64_t> next{0};
  auto work = [&] {
    for (std::uint64_t b; (b = next.fetch_add(1)) < nblocks;)
      out[b] = fn(b, b * block, std::min(n, (b + 1) * block));
  };
  if (workers <= 1 || nblocks <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::uint64_t>(workers, nblocks); ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

// Inverse-CDF row sampler with cumulative rows cached below `table_size`.
class KernelSampler {
 public:
  KernelSampler(const JumpKernel& kernel, State table_size);
  int step(State x, Rng& rng) const;
  int max_jump() const { return B_; }

 private:
  const JumpKernel* kernel_;
  int B_;
  int w_;
  State table_size_;
  std::vector<double> cum_;
};

struct ReturnRecord {
  State start = 0;
  std::uint64_t horizon = 0;
  bool returned = false;  // visited 0 at some n >= 1
  bool escaped = false;   // reached the escape level (no further returns assumed)
  bool censored = false;  // time cap hit before escape
  std::uint64_t tau = 0;     // first n >= 1 with X_n = 0
  std::uint64_t lambda = 0;  // last such n (0 if none)
  std::uint64_t visits = 0;
  std::uint64_t sigma = 0;   // time the escape level was reached
  std::vector<std::uint64_t> visit_times;
};

ReturnRecord sample_excursion(const JumpKernel& kernel, State x0, std::uint64_t seed,
                              std::uint64_t n_cap, State escape_level = 0);

struct McOptions {
  std::uint64_t n_traj = 1000000;
  std::uint64_t n_cap = 1000000;
  State escape_level = 0;  // 0: ceil(5 sqrt(n_cap / 10))
  unsigned workers = 1;
  std::uint64_t survivor_floor = 50;
};

State default_escape_level(std::uint64_t n_cap);
// Largest n for which escape truncation is negligible: min(n_cap/10, (r_esc/5)^2).
std::uint64_t usable_horizon(const McOptions& opt);

struct SurvivalPoint {
  std::uint64_t n;
  std::uint64_t survivors;  // returns with tau > n
};

struct MomentEstimate {
  double beta = 1.0;
  double T = 0, L = 0, U = 0;
  double T_se = 0, L_se = 0, U_se = 0;
  std::uint64_t n_traj = 0, returns = 0, escaped = 0, censored = 0;
  double h_hat = 0, h_se = 0;
  double censor_rate = 0, escape_rate = 0;
  std::vector<SurvivalPoint> survival;
  double tail_exponent = 0, tail_ci = 0;
  std::uint64_t window_lo = 0, window_hi = 0;
  std::map<std::uint64_t, std::uint64_t> tau_hist;
};

struct MomentRow {
  double beta;
  double T, L, U;
  double T_se, L_se, U_se;
  double growth_slope;
  bool saturates;
  bool ordering_ok;
};

struct EmpiricalClassification {
  std::vector<MomentRow> rows;
  std::optional<double> beta_crit;
  std::uint64_t window_lo = 0, window_hi = 0;
  std::uint64_t returns = 0, censored = 0, escaped = 0, n_traj = 0;
  double censor_rate = 0;
  std::string label;  // ESTABLISHED / CONJECTURED where applicable
};

MomentEstimate estimate_conditional_moments(const JumpKernel& kernel, State x0, double beta,
                                            const McOptions& opt, std::uint64_t seed);

EmpiricalClassification estimate_strong_transience(const JumpKernel& kernel, State x0,
                                                   const std::vector<double>& beta_grid,
                                                   const McOptions& opt, std::uint64_t seed);

// Top usable decade [hi/10, hi] whose upper end keeps >= floor survivors.
std::optional<std::pair<std::uint64_t, std::uint64_t>> tail_window(
    const std::map<std::uint64_t, std::uint64_t>& hist, std::uint64_t max_n, std::uint64_t floor);

struct SaturationResult {
  double slope;  // growth exponent beta - alpha of the partial moment, alpha from the survival fit
  bool saturates;
};

SaturationResult saturation_test(const std::map<std::uint64_t, std::uint64_t>& hist, double beta,
                                 std::uint64_t lo, std::uint64_t hi);
std::optional<double> crossover(const std::vector<double>& betas, const std::vector<double>& slopes);

struct CouplingRow {
  std::uint64_t ell;
  State start;
  std::vector<double> law;  // entrance law on I_a = [a, a+B]
  std::uint64_t entries, escaped, censored, trajectories;
  double tv;   // against the largest-separation law
  double fit;  // exp(log C - b ell)
};

struct CouplingTable {
  State a;
  int max_jump;
  std::vector<CouplingRow> rows;
  double b_hat = 0, log_c = 0, r2 = 0;
  bool unreliable = false;
  double censor_rate = 0;
};

struct CouplingOptions {
  unsigned workers = 1;
  std::uint64_t n_cap = 1000000;
  double escape_factor = 1.5;
  std::uint64_t round = 4096;
};

CouplingTable coupling_experiment(const JumpKernel& kernel, State a,
                                  const std::vector<std::uint64_t>& separations,
                                  std::uint64_t n_entries, std::uint64_t seed,
                                  const CouplingOptions& opt = {});

struct RenewalEstimate {
  State x;
  double H;
  double H_se;
  double scaled;
};

struct RenewalResult {
  std::vector<RenewalEstimate> rows;
  double censor_rate = 0;
  bool flagged = false;
};

RenewalResult estimate_renewal_function(const JumpKernel& kernel, const std::vector<State>& x_grid,
                                        std::uint64_t n_traj, std::uint64_t seed,
                                        unsigned workers = 1, double safety = 5.0,
                                        std::uint64_t n_cap = 100000000);

struct LinearFit {
  double slope, intercept, r2, slope_se;
};
LinearFit ols(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace lamperti
