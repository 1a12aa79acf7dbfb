#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "lwbc/errors.hpp"

namespace lwbc {

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorT = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixT<double>;
using Vector = VectorT<double>;
using RowVector = RowVectorT<double>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.derived().allFinite()) throw NumericError(std::string(what) + ": non-finite entry");
}

/// Dense product with a shape check. Throws ShapeError naming both operands.
template <typename A, typename B>
MatrixT<typename A::Scalar> matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.rows(), a.cols()) + " times " +
                     shape_string(b.rows(), b.cols()));
  }
  MatrixT<typename A::Scalar> out = a * b;
  require_finite(out, "matmul");
  return out;
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& row) {
  using std::exp;
  using std::log;
  const auto top = row.maxCoeff();
  return top + log((row.array() - top).exp().sum());
}

/// Log-probabilities of a single row, computed with the max shifted out.
template <typename Derived>
RowVectorT<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& row) {
  RowVectorT<typename Derived::Scalar> out = row;
  out.array() -= log_sum_exp(row);
  return out;
}

template <typename Derived>
RowVectorT<typename Derived::Scalar> stable_softmax(const Eigen::MatrixBase<Derived>& row) {
  using Scalar = typename Derived::Scalar;
  RowVectorT<Scalar> out = (row.array() - row.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

/// Row-wise softmax of a batch of logits.
template <typename Derived>
MatrixT<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  MatrixT<typename Derived::Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out.row(i) = stable_softmax(logits.row(i));
  return out;
}

/// -log softmax(logits)[label].
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logits, Eigen::Index label) {
  if (label < 0 || label >= logits.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  }
  const auto loss = log_sum_exp(logits) - logits(label);
  // Rounding can leave a saturated loss a hair below zero.
  return loss < 0 ? typename Derived::Scalar(0) : loss;
}

/// KL(p || q) with 0 * ln 0 = 0. `p` is the reference (teacher) distribution.
template <typename P, typename Q>
typename P::Scalar kl_divergence(const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<Q>& q,
                                 double tolerance = 1e-9) {
  using Scalar = typename P::Scalar;
  using std::abs;
  using std::log;
  if (p.size() != q.size()) {
    throw ShapeError("kl_divergence: sizes " + std::to_string(p.size()) + " and " +
                     std::to_string(q.size()));
  }
  if (abs(p.sum() - Scalar(1)) > tolerance || abs(q.sum() - Scalar(1)) > tolerance ||
      (p.array() < 0).any() || (q.array() < 0).any()) {
    throw ValidationError("kl_divergence: inputs must be probability vectors");
  }
  Scalar total(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) == Scalar(0)) continue;
    if (q(i) == Scalar(0)) throw ValidationError("kl_divergence: q vanishes where p is positive");
    total += p(i) * (log(p(i)) - log(q(i)));
  }
  return total < 0 ? Scalar(0) : total;
}

/// Compares an analytic gradient against finite differences of `loss` at
/// `params` and returns max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-12).
///
/// The numeric derivative is the fourth-order central stencil
/// (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, which keeps truncation error
/// well below the tolerance even for small gradient entries.
inline double finite_diff_check(const std::function<double(const Vector&)>& loss, const Vector& analytic,
                                const Vector& params, double step) {
  if (step <= 0) throw ValidationError("finite_diff_check: step must be positive");
  if (analytic.size() != params.size()) {
    throw ShapeError("finite_diff_check: gradient has " + std::to_string(analytic.size()) +
                     " entries, parameters " + std::to_string(params.size()));
  }
  const auto probe = [&](Vector& x) {
    const double v = loss(x);
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss at probe point");
    return v;
  };
  Vector x = params;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double x0 = params(i);
    x(i) = x0 + 2 * step;
    const double f2p = probe(x);
    x(i) = x0 + step;
    const double f1p = probe(x);
    x(i) = x0 - step;
    const double f1m = probe(x);
    x(i) = x0 - 2 * step;
    const double f2m = probe(x);
    x(i) = x0;
    const double numeric = (-f2p + 8 * f1p - 8 * f1m + f2m) / (12 * step);
    const double err = std::abs(analytic(i) - numeric) / (std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace lwbc
