#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracle {

// Closed form of P_x(hit 0) for the nearest-neighbour chain with c = 2, s2 = 1.
inline double nn_c2_h(long x) {
  if (x == 0) return 1.0;
  if (x == 1) return 0.7;
  const double xd = double(x);
  return 2.4 / ((xd - 1.0) * xd * (xd + 1.0));
}

// Birth-death hitting probabilities from the scale function:
// h(x) = sum_{k>=x} rho_k / sum_{k>=0} rho_k, rho_k = prod_{j<=k} q_j / p_j.
// up(j), down(j) are the one-step probabilities at j >= 1; rho_k ~ C k^-alpha in the tail.
inline std::vector<double> birth_death_h(const std::function<double(long)>& up,
                                         const std::function<double(long)>& down, long x_max,
                                         double alpha, long K = 2000000) {
  std::vector<long double> rho(K + 1);
  rho[0] = 1.0L;
  for (long j = 1; j <= K; ++j) rho[j] = rho[j - 1] * down(j) / up(j);
  const long double tail = rho[K] * (static_cast<long double>(K) / (alpha - 1.0) - 0.5L);
  std::vector<long double> suffix(K + 2, 0.0L);
  suffix[K + 1] = tail;
  for (long k = K; k >= 0; --k) suffix[k] = suffix[k + 1] + rho[k];
  std::vector<double> h(x_max + 1);
  for (long x = 0; x <= x_max; ++x) h[x] = static_cast<double>(suffix[x] / suffix[0]);
  return h;
}

inline std::vector<double> nn_h(double c, double s2, long x_max) {
  const double cutoff = std::fabs(c) / s2;
  auto tilt = [=](long j) { return double(j) > cutoff ? c / (2.0 * double(j)) : 0.0; };
  return birth_death_h([=](long j) { return s2 / 2 + tilt(j); },
                       [=](long j) { return s2 / 2 - tilt(j); }, x_max, 2.0 * c / s2);
}

// Dense row-major matrix helpers.
using Matrix = std::vector<std::vector<double>>;

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.size(), m = b[0].size(), k = b.size();
  Matrix c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][l] * b[l][j];
  return c;
}

// Gauss-Jordan inverse with partial pivoting.
inline Matrix inverse(Matrix a) {
  const std::size_t n = a.size();
  Matrix inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (a[piv][col] == 0.0) throw std::runtime_error("singular matrix");
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const double d = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= d;
      inv[col][j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || a[r][col] == 0.0) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

}  // namespace oracle
