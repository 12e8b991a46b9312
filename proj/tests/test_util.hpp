#pragma once

#include "kao/model.hpp"
#include "kao/rng.hpp"

namespace kao::testing {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix a(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) a(i, j) = scale * rng.normal();
  return a;
}

inline Vector random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

/// B B' / d scaled: a random well-conditioned PSD matrix.
inline Matrix random_psd(Eigen::Index d, Rng& rng, double scale = 1.0) {
  const Matrix b = random_matrix(d, d, rng);
  return symmetrized(scale * (b * b.transpose()) / static_cast<double>(d));
}

/// Random transition with spectral norm `radius`.
inline Matrix random_transition(Eigen::Index d, Rng& rng, double radius = 0.95) {
  const Matrix a = random_matrix(d, d, rng);
  Eigen::JacobiSVD<Matrix> svd(a);
  return radius * a / svd.singularValues()(0);
}

inline Design random_design(Eigen::Index T, Eigen::Index d, Rng& rng) {
  Design x(T, d);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index j = 0; j < d; ++j) x(t, j) = rng.normal();
  return x;
}

inline Design uniform_design(Eigen::Index T, Eigen::Index d, Rng& rng) {
  Design x(T, d);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index j = 0; j < d; ++j) x(t, j) = rng.uniform();
  return x;
}

inline StateSpaceModel random_model(Eigen::Index d, Rng& rng, double sigma2 = 1.0) {
  return {random_transition(d, rng), random_psd(d, rng, 0.5), sigma2, random_vector(d, rng), random_psd(d, rng)};
}

inline Vector random_simplex(Eigen::Index m, Rng& rng) {
  Vector w(m);
  for (Eigen::Index i = 0; i < m; ++i) w(i) = rng.exponential();
  return w / w.sum();
}

}  // namespace kao::testing
