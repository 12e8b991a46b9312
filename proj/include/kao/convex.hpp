#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "kao/rng.hpp"
#include "kao/types.hpp"

namespace kao {

/// Euclidean projection onto the probability simplex (sort-based, Duchi et al. 2008).
inline Vector project_simplex(const Vector& v) {
  const auto n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cum += u[static_cast<std::size_t>(j)];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

struct ConvexOracleResult {
  Vector pi;
  double mse = 0.0;
  /// ||pi - proj(pi - grad / L)||_inf at the returned point.
  double stationarity = 0.0;
  std::size_t iterations = 0;
};

namespace detail {

struct SimplexQp {
  Matrix G;  // F'F / T
  Vector b;  // F'y / T
  double lipschitz = 1.0;

  [[nodiscard]] Vector grad(const Vector& pi) const { return 2.0 * (G * pi - b); }

  [[nodiscard]] double stationarity(const Vector& pi) const {
    return (pi - project_simplex(pi - grad(pi) / lipschitz)).cwiseAbs().maxCoeff();
  }
};

// FISTA with function-value restart.
inline Vector fista(const SimplexQp& qp, Vector pi, std::size_t max_iter, double tol, std::size_t& iters) {
  auto f = [&](const Vector& p) { return p.dot(qp.G * p) - 2.0 * qp.b.dot(p); };
  Vector z = pi;
  double tk = 1.0;
  double fprev = f(pi);
  for (std::size_t k = 0; k < max_iter; ++k) {
    ++iters;
    const Vector next = project_simplex(z - qp.grad(z) / qp.lipschitz);
    const double fn = f(next);
    if (fn > fprev) {  // restart momentum
      tk = 1.0;
      z = pi;
      continue;
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    z = next + ((tk - 1.0) / tn) * (next - pi);
    pi = next;
    tk = tn;
    fprev = fn;
    if (k % 50 == 0 && qp.stationarity(pi) <= tol) break;
  }
  return pi;
}

// Active-set polish: solve the equality-constrained QP on the current support
// and drop coordinates that turn negative, until KKT holds or the support is stable.
inline Vector polish(const SimplexQp& qp, const Vector& start) {
  const auto M = start.size();
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < M; ++i)
    if (start(i) > 1e-12) support.push_back(i);
  for (std::size_t round = 0; round < static_cast<std::size_t>(M) && !support.empty(); ++round) {
    const auto k = static_cast<Eigen::Index>(support.size());
    Matrix kkt = Matrix::Zero(k + 1, k + 1);
    Vector rhs(k + 1);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) kkt(i, j) = 2.0 * qp.G(support[i], support[j]);
      kkt(i, k) = 1.0;
      kkt(k, i) = 1.0;
      rhs(i) = 2.0 * qp.b(support[i]);
    }
    rhs(k) = 1.0;
    const Vector sol = Eigen::CompleteOrthogonalDecomposition<Matrix>(kkt).solve(rhs);
    Vector cand = Vector::Zero(M);
    bool feasible = true;
    for (Eigen::Index i = 0; i < k; ++i) {
      cand(support[i]) = sol(i);
      if (sol(i) < 0.0) feasible = false;
    }
    if (feasible && std::abs(cand.sum() - 1.0) < 1e-9) return cand;
    // Drop the most negative coordinate and retry.
    Eigen::Index worst = 0;
    for (Eigen::Index i = 1; i < k; ++i)
      if (sol(i) < sol(worst)) worst = i;
    support.erase(support.begin() + worst);
  }
  return start;
}

}  // namespace detail

/// min over the simplex of (1/T) sum_t (y_t - pi . F_t)^2, by restarted FISTA
/// from 20 random starts plus the uniform point, each polished by an
/// active-set solve on its support. The problem is convex, so every start
/// should reach the same value; the best is returned.
inline ConvexOracleResult best_convex_oracle(const Matrix& F, const Vector& y, std::uint64_t seed = 0,
                                             std::size_t restarts = 20, double tol = 1e-9) {
  require_dim(F.rows(), y.size(), "best_convex_oracle rows");
  require(F.rows() > 0 && F.cols() > 0, "best_convex_oracle: empty input");
  const auto T = static_cast<double>(F.rows());
  const auto M = F.cols();
  detail::SimplexQp qp;
  qp.G = (F.transpose() * F) / T;
  qp.b = (F.transpose() * y) / T;
  const double top = Eigen::SelfAdjointEigenSolver<Matrix>(qp.G, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  qp.lipschitz = std::max(2.0 * top, 1e-300);

  auto mse_of = [&](const Vector& p) { return (y - F * p).squaredNorm() / T; };
  ConvexOracleResult best;
  best.mse = std::numeric_limits<double>::infinity();
  Rng rng = Rng::substream(seed, stream_id::restarts);
  auto consider = [&](Vector start) {
    std::size_t iters = 0;
    Vector pi = detail::fista(qp, std::move(start), 20000, tol, iters);
    const Vector polished = project_simplex(detail::polish(qp, pi));
    if (mse_of(polished) <= mse_of(pi)) pi = polished;
    const double m = mse_of(pi);
    best.iterations += iters;
    if (m < best.mse) {
      best.mse = m;
      best.pi = pi;
    }
  };
  consider(Vector::Constant(M, 1.0 / static_cast<double>(M)));
  for (std::size_t r = 0; r < restarts; ++r) {
    Vector w(M);
    for (Eigen::Index i = 0; i < M; ++i) w(i) = rng.exponential();
    consider(w / w.sum());
  }
  // Vertices are admissible too; keep the oracle no worse than the best expert.
  for (Eigen::Index m = 0; m < M; ++m) {
    Vector e = Vector::Zero(M);
    e(m) = 1.0;
    const double v = mse_of(e);
    if (v < best.mse) {
      best.mse = v;
      best.pi = e;
    }
  }
  best.stationarity = qp.stationarity(best.pi);
  return best;
}

}  // namespace kao
